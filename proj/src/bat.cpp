#include "batunet/bat.hpp"

#include "batunet/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

namespace batunet {

namespace {
constexpr std::uint64_t kTagInit = 0xba70;
constexpr std::uint64_t kTagStep = 0xba71;
constexpr std::uint64_t kTagEval = 0xba72;
} // namespace

void BatConfig::validate() const {
    if (num_bats < 1)
        throw InvalidInput("BatConfig: num_bats must be >= 1");
    if (!(freq_min <= freq_max))
        throw InvalidInput("BatConfig: freq_min must not exceed freq_max");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw InvalidInput("BatConfig: alpha must lie in (0,1)");
    if (!(gamma > 0.0))
        throw InvalidInput("BatConfig: gamma must be > 0");
    for (const auto &b : bounds)
        if (!(b.lo < b.hi))
            throw InvalidInput("BatConfig: every bound needs lo < hi");
    if (!(initial_loudness > 0.0))
        throw InvalidInput("BatConfig: initial_loudness must be > 0");
    if (!(initial_pulse_rate >= 0.0 && initial_pulse_rate <= 1.0))
        throw InvalidInput("BatConfig: initial_pulse_rate must lie in [0,1]");
    if (!(walk_scale > 0.0))
        throw InvalidInput("BatConfig: walk_scale must be > 0");
}

Hyperparams decode_position(const Position &x, const std::array<Bounds, 2> &bounds) {
    for (std::size_t i = 0; i < 2; ++i)
        if (!(x[i] >= bounds[i].lo && x[i] <= bounds[i].hi))
            throw InvalidInput("decode_position: coordinate " + std::to_string(i) + " = " + std::to_string(x[i]) +
                               " outside [" + std::to_string(bounds[i].lo) + ", " + std::to_string(bounds[i].hi) +
                               "]");
    // nearbyint under the default rounding mode rounds half to even.
    const double lo = std::ceil(bounds[1].lo);
    const double hi = std::floor(bounds[1].hi);
    const double batch = std::clamp(std::nearbyint(x[1]), lo, hi);
    return {std::pow(10.0, x[0]), static_cast<std::size_t>(batch)};
}

std::string hyperparam_key(const Hyperparams &hp) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.5e/%zu", hp.learning_rate, hp.batch_size);
    return buf;
}

Position clamp_position(const Position &x, const std::array<Bounds, 2> &bounds) {
    return {std::clamp(x[0], bounds[0].lo, bounds[0].hi), std::clamp(x[1], bounds[1].lo, bounds[1].hi)};
}

BatOptimizer::BatOptimizer(BatConfig cfg, FitnessFn fitness, std::function<std::string(const Position &)> memo_key)
    : cfg_(std::move(cfg)), fitness_(std::move(fitness)), memo_key_(std::move(memo_key)) {
    cfg_.validate();
}

std::vector<double> BatOptimizer::evaluate(std::size_t iteration, const std::vector<Job> &jobs) {
    // Work out which jobs need a fresh evaluation; later duplicates of a key
    // (within this batch or from earlier iterations) reuse the first result.
    std::vector<std::optional<std::string>> keys(jobs.size());
    std::vector<std::size_t> fresh;
    std::map<std::string, std::size_t> pending;
    std::vector<std::optional<std::size_t>> alias(jobs.size());
    for (std::size_t j = 0; j < jobs.size(); ++j) {
        if (memo_key_) {
            keys[j] = memo_key_(jobs[j].position);
            if (memo_.count(*keys[j]))
                continue;
            if (auto it = pending.find(*keys[j]); it != pending.end()) {
                alias[j] = it->second;
                continue;
            }
            pending.emplace(*keys[j], j);
        }
        fresh.push_back(j);
    }

    std::vector<double> values(jobs.size(), 0.0);
    std::vector<std::exception_ptr> errors(jobs.size());
    parallel_for(fresh.size(), cfg_.workers, [&](std::size_t k) {
        const auto j = fresh[k];
        const EvalContext ctx{iteration, jobs[j].bat, derive_seed(cfg_.seed, {kTagEval, iteration, jobs[j].bat})};
        try {
            values[j] = fitness_(jobs[j].position, ctx);
        } catch (...) {
            errors[j] = std::current_exception();
        }
    });

    for (auto j : fresh) {
        if (!errors[j])
            continue;
        std::string what = "fitness evaluation failed";
        try {
            std::rethrow_exception(errors[j]);
        } catch (const std::exception &e) {
            what += std::string(": ") + e.what();
        } catch (...) {
        }
        char where[96];
        std::snprintf(where, sizeof where, " (iteration %zu, bat %zu, position [%.6g, %.6g])", iteration, jobs[j].bat,
                      jobs[j].position[0], jobs[j].position[1]);
        // The partial history keeps the evaluations of this iteration that did finish.
        auto partial = std::make_shared<BatRunHistory>(history_);
        partial->evaluation_count = state_.evaluations;
        for (auto k : fresh)
            if (!errors[k]) {
                partial->evaluations.push_back({iteration, jobs[k].bat, jobs[k].position, values[k], false});
                ++partial->evaluation_count;
            }
        throw FitnessError(what + where, jobs[j].bat, jobs[j].position, std::move(partial));
    }

    for (std::size_t j = 0; j < jobs.size(); ++j) {
        const bool is_fresh = std::find(fresh.begin(), fresh.end(), j) != fresh.end();
        if (!is_fresh)
            values[j] = alias[j] ? values[*alias[j]] : memo_.at(*keys[j]);
        else if (memo_key_)
            memo_.emplace(*keys[j], values[j]);
        if (is_fresh)
            ++state_.evaluations;
        history_.evaluations.push_back({iteration, jobs[j].bat, jobs[j].position, values[j], !is_fresh});
    }
    history_.evaluation_count = state_.evaluations;
    return values;
}

void BatOptimizer::set_population(std::vector<Bat> bats) {
    if (bats.empty())
        throw InvalidInput("BatOptimizer: empty population");
    std::vector<Job> jobs;
    for (std::size_t i = 0; i < bats.size(); ++i) {
        bats[i].x = clamp_position(bats[i].x, cfg_.bounds);
        jobs.push_back({i, bats[i].x});
    }
    state_ = {};
    history_ = {};
    memo_.clear();
    const auto values = evaluate(0, jobs);
    for (std::size_t i = 0; i < bats.size(); ++i)
        bats[i].fitness = values[i];
    state_.bats = std::move(bats);
    std::size_t best = 0;
    for (std::size_t i = 1; i < state_.bats.size(); ++i)
        if (state_.bats[i].fitness < state_.bats[best].fitness)
            best = i;
    state_.best = state_.bats[best].x;
    state_.best_fitness = state_.bats[best].fitness;
    history_.initial = state_.bats;
    history_.best = state_.best;
    history_.best_fitness = state_.best_fitness;
}

void BatOptimizer::init_population() {
    std::vector<Bat> bats(cfg_.num_bats);
    for (std::size_t i = 0; i < bats.size(); ++i) {
        Rng rng = make_rng(cfg_.seed, {kTagInit, i});
        for (std::size_t d = 0; d < 2; ++d)
            bats[i].x[d] = uniform(rng, cfg_.bounds[d].lo, cfg_.bounds[d].hi);
        bats[i].v = {0.0, 0.0};
        bats[i].frequency = cfg_.freq_min;
        bats[i].loudness = cfg_.initial_loudness;
        bats[i].pulse_rate = 0.0;
    }
    set_population(std::move(bats));
}

void BatOptimizer::step(std::size_t t) {
    if (t < 1)
        throw InvalidInput("BatOptimizer::step: iterations are numbered from 1");
    if (state_.bats.empty())
        throw InvalidInput("BatOptimizer::step: population not initialised");

    double mean_loudness = 0.0;
    for (const auto &b : state_.bats)
        mean_loudness += b.loudness;
    mean_loudness /= static_cast<double>(state_.bats.size());

    // Candidate generation uses the best known at the start of the iteration
    // and one random stream per (iteration, bat).
    const Position best = state_.best;
    std::vector<Job> jobs;
    std::vector<BatRecord> records(state_.bats.size());
    std::vector<double> accept_draw(state_.bats.size());
    for (std::size_t i = 0; i < state_.bats.size(); ++i) {
        Bat &b = state_.bats[i];
        Rng rng = make_rng(cfg_.seed, {kTagStep, t, i});
        const double beta = uniform01(rng);
        b.frequency = bat_frequency(cfg_, beta);
        Position cand{};
        for (std::size_t d = 0; d < 2; ++d) {
            b.v[d] += (b.x[d] - best[d]) * b.frequency;
            cand[d] = b.x[d] + b.v[d];
        }
        cand = clamp_position(cand, cfg_.bounds);
        const bool walk = uniform01(rng) > b.pulse_rate;
        std::array<double, 2> eps{uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)};
        if (walk) {
            for (std::size_t d = 0; d < 2; ++d)
                cand[d] = best[d] + eps[d] * cfg_.walk_scale * cfg_.bounds[d].width() * mean_loudness;
            cand = clamp_position(cand, cfg_.bounds);
        }
        accept_draw[i] = uniform01(rng);
        records[i].candidate = cand;
        records[i].local_walk = walk;
        jobs.push_back({i, cand});
    }

    const auto values = evaluate(t, jobs);

    for (std::size_t i = 0; i < state_.bats.size(); ++i) {
        Bat &b = state_.bats[i];
        auto &rec = records[i];
        rec.candidate_fitness = values[i];
        if (accept_draw[i] < b.loudness && values[i] < b.fitness) {
            b.x = rec.candidate;
            b.fitness = values[i];
            b.loudness *= cfg_.alpha;
            b.pulse_rate = bat_pulse_rate(cfg_, t);
            rec.accepted = true;
        }
        if (values[i] < state_.best_fitness) {
            state_.best_fitness = values[i];
            state_.best = rec.candidate;
        }
        rec.bat = b;
    }
    history_.iterations.push_back({t, std::move(records), state_.best, state_.best_fitness});
    history_.best = state_.best;
    history_.best_fitness = state_.best_fitness;
}

namespace {

BatResult run(const BatConfig &cfg, FitnessFn fitness, std::function<std::string(const Position &)> key) {
    BatOptimizer opt(cfg, std::move(fitness), std::move(key));
    opt.init_population();
    std::size_t stale = 0;
    bool early = false;
    for (std::size_t t = 1; t <= cfg.max_iterations; ++t) {
        const double before = opt.state().best_fitness;
        opt.step(t);
        if (before - opt.state().best_fitness < cfg.tolerance) {
            if (++stale >= cfg.patience && t < cfg.max_iterations) {
                early = true;
                break;
            }
        } else {
            stale = 0;
        }
    }
    BatResult r{decode_position(opt.state().best, cfg.bounds), opt.history()};
    r.history.stopped_early = early;
    return r;
}

} // namespace

BatResult optimize(const BatConfig &cfg, const FitnessFn &fitness) { return run(cfg, fitness, {}); }

BatResult optimize_hyperparams(const BatConfig &cfg, const HyperparamFitnessFn &fitness) {
    const auto bounds = cfg.bounds;
    return run(
        cfg, [fitness, bounds](const Position &x, const EvalContext &ctx) { return fitness(decode_position(x, bounds), ctx); },
        [bounds](const Position &x) { return hyperparam_key(decode_position(x, bounds)); });
}

} // namespace batunet
