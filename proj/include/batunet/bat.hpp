#pragma once

#include "batunet/error.hpp"
#include "batunet/rng.hpp"
#include "batunet/unet.hpp"

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace batunet {

/// Search coordinates: (log10 learning rate, continuous batch size).
using Position = std::array<double, 2>;

struct Bounds {
    double lo = 0.0;
    double hi = 1.0;
    double width() const noexcept { return hi - lo; }
    friend bool operator==(const Bounds &, const Bounds &) = default;
};

/// Bat Algorithm settings. Defaults are the small budget used for the real
/// U-Net search: 2 bats, 2 iterations, f in [0, 2], alpha = gamma = 0.9,
/// learning rate in [1e-4, 1e-3] (searched as log10) and batch size in [2, 4].
struct BatConfig {
    std::size_t num_bats = 2;
    std::size_t max_iterations = 2;
    double freq_min = 0.0;
    double freq_max = 2.0;
    double alpha = 0.9; // loudness decay on acceptance
    double gamma = 0.9; // pulse-rate growth
    std::array<Bounds, 2> bounds{{{-4.0, -3.0}, {2.0, 4.0}}};
    double initial_loudness = 1.0;
    double initial_pulse_rate = 0.5;
    double walk_scale = 0.1; // local walk half-width as a fraction of each dimension's width
    double tolerance = 1e-6; // negligible best-fitness improvement
    std::size_t patience = 3;
    std::uint64_t seed = 0;
    /// Parallel fitness evaluations per iteration.
    std::size_t workers = 1;

    void validate() const;
};

struct Bat {
    Position x{};
    Position v{};
    double frequency = 0.0;
    double loudness = 1.0;
    double pulse_rate = 0.0;
    double fitness = 0.0; // lower is better
};

struct BatState {
    std::vector<Bat> bats;
    Position best{};
    double best_fitness = 0.0;
    std::size_t evaluations = 0;
};

/// Identifies one fitness evaluation. `seed` is derived from
/// (run seed, iteration, bat) for callbacks that need their own randomness.
struct EvalContext {
    std::size_t iteration = 0; // 0 = initial population
    std::size_t bat = 0;
    std::uint64_t seed = 0;
};

using FitnessFn = std::function<double(const Position &, const EvalContext &)>;
using HyperparamFitnessFn = std::function<double(const Hyperparams &, const EvalContext &)>;

struct EvaluationRecord {
    std::size_t iteration = 0;
    std::size_t bat = 0;
    Position position{};
    double fitness = 0.0;
    bool cached = false; // served from the memo, not a fresh evaluation
};

struct BatRecord {
    Position candidate{};
    double candidate_fitness = 0.0;
    bool local_walk = false;
    bool accepted = false;
    Bat bat; // state after the update
};

struct IterationRecord {
    std::size_t iteration = 0;
    std::vector<BatRecord> bats;
    Position best{};
    double best_fitness = 0.0;
};

struct BatRunHistory {
    std::vector<Bat> initial;
    std::vector<IterationRecord> iterations;
    std::vector<EvaluationRecord> evaluations;
    Position best{};
    double best_fitness = 0.0;
    std::size_t evaluation_count = 0; // fresh evaluations only
    bool stopped_early = false;
};

/// A fitness callback failed. Carries the failing bat and the history up to
/// the failure.
class FitnessError : public Error {
  public:
    FitnessError(const std::string &what, std::size_t bat, Position position,
                 std::shared_ptr<const BatRunHistory> partial)
        : Error(what), bat_(bat), position_(position), partial_(std::move(partial)) {}
    std::size_t bat() const noexcept { return bat_; }
    const Position &position() const noexcept { return position_; }
    const BatRunHistory *partial_history() const noexcept { return partial_.get(); }

  private:
    std::size_t bat_;
    Position position_;
    std::shared_ptr<const BatRunHistory> partial_;
};

/// f = freq_min + (freq_max - freq_min) * beta.
inline double bat_frequency(const BatConfig &cfg, double beta) {
    return cfg.freq_min + (cfg.freq_max - cfg.freq_min) * beta;
}
/// Pulse rate after an acceptance at iteration t: r0 (1 - e^(-gamma t)).
inline double bat_pulse_rate(const BatConfig &cfg, std::size_t t) {
    return cfg.initial_pulse_rate * (1.0 - std::exp(-cfg.gamma * static_cast<double>(t)));
}

/// 10^x[0] and round-half-to-even of x[1], clamped to the integer range of bounds[1].
Hyperparams decode_position(const Position &x, const std::array<Bounds, 2> &bounds);

/// Memo key: learning rate at 6 significant figures plus batch size.
std::string hyperparam_key(const Hyperparams &hp);

Position clamp_position(const Position &x, const std::array<Bounds, 2> &bounds);

/// Step-level engine. Holds the population and the run history; drives
/// one iteration at a time so individual steps can be inspected.
class BatOptimizer {
  public:
    /// `memo_key` (optional) maps a position to a cache key; equal keys share
    /// one fitness evaluation.
    BatOptimizer(BatConfig cfg, FitnessFn fitness, std::function<std::string(const Position &)> memo_key = {});

    /// Uniform positions, zero velocity, f = freq_min, A = A0, r = 0; evaluates every bat.
    void init_population();
    /// Installs an explicit population (fitness is evaluated for each bat).
    void set_population(std::vector<Bat> bats);

    /// One iteration t >= 1: frequency/velocity/position update, local walk
    /// around the best when rand > r_i, loudness-gated greedy acceptance.
    void step(std::size_t t);

    const BatState &state() const noexcept { return state_; }
    const BatRunHistory &history() const noexcept { return history_; }
    const BatConfig &config() const noexcept { return cfg_; }

  private:
    struct Job {
        std::size_t bat;
        Position position;
    };
    std::vector<double> evaluate(std::size_t iteration, const std::vector<Job> &jobs);

    BatConfig cfg_;
    FitnessFn fitness_;
    std::function<std::string(const Position &)> memo_key_;
    std::map<std::string, double> memo_;
    BatState state_;
    BatRunHistory history_;
};

struct BatResult {
    Hyperparams best;
    BatRunHistory history;
};

/// Full run: init_population then up to max_iterations steps, stopping early
/// after `patience` consecutive iterations improving the best by < tolerance.
BatResult optimize(const BatConfig &cfg, const FitnessFn &fitness);

/// As optimize, with the callback seeing decoded hyperparameters and
/// evaluations memoised per hyperparam_key.
BatResult optimize_hyperparams(const BatConfig &cfg, const HyperparamFitnessFn &fitness);

} // namespace batunet
