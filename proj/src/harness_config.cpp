#include "batunet/harness.hpp"

#include "batunet/rng.hpp"
#include "batunet/volume_io.hpp"

#include <json.hpp>

#include <cmath>
#include <set>

namespace batunet {

namespace {

using ojson = nlohmann::ordered_json;

constexpr std::uint64_t kTagData = 0xd47a;
constexpr std::uint64_t kTagSplit = 0x5911;
constexpr std::uint64_t kTagBat = 0xba7;
constexpr std::uint64_t kTagInit = 0x1417;
constexpr std::uint64_t kTagTrain = 0x7a1;

void reject_unknown(const ojson &j, std::initializer_list<std::string_view> known, std::string_view where) {
    std::set<std::string_view> allowed(known);
    for (const auto &[k, _] : j.items())
        if (!allowed.count(k))
            throw UsageError("config: unknown key '" + k + "' in " + std::string(where));
}

Shape3 shape_from(const ojson &j, std::string_view key) {
    if (!j.is_array() || j.size() != 3)
        throw UsageError("config: " + std::string(key) + " must be [d, h, w]");
    return {j[0].get<std::size_t>(), j[1].get<std::size_t>(), j[2].get<std::size_t>()};
}

template <typename T> void read(const ojson &j, const char *key, T &field) {
    if (j.contains(key))
        field = j.at(key).get<T>();
}

} // namespace

void ExperimentConfig::validate() const {
    try {
        synth_spec().validate();
        unet_config().validate();
        bat_config().validate();
    } catch (const InvalidInput &e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    if (synth.num_samples < 2)
        throw UsageError("config: need at least two samples for a train/validation split");
    if (!(split_ratio > 0.0 && split_ratio < 1.0))
        throw UsageError("config: split_ratio must lie in (0,1)");
    if (proxy_epochs < 1)
        throw UsageError("config: proxy_epochs must be >= 1");
    if (thresholds.empty())
        throw UsageError("config: thresholds must not be empty");
    for (std::size_t i = 0; i < thresholds.size(); ++i)
        if (!(thresholds[i] >= 0.0 && thresholds[i] <= 1.0) || (i > 0 && !(thresholds[i] > thresholds[i - 1])))
            throw UsageError("config: thresholds must be strictly increasing values in [0,1]");
    const auto &b = bat.bounds[1];
    if (std::ceil(b.lo) < 1.0 || std::ceil(b.lo) > std::floor(b.hi))
        throw UsageError("config: batch_size_range must contain an integer >= 1");
    if (threads < 1)
        throw UsageError("config: threads must be >= 1");
}

SynthSpec ExperimentConfig::synth_spec() const {
    SynthSpec s = synth;
    s.seed = derive_seed(seed, {kTagData});
    return s;
}

UNetConfig ExperimentConfig::unet_config() const {
    UNetConfig c;
    c.input_shape = synth.target_shape;
    c.base_filters = base_filters;
    return c;
}

BatConfig ExperimentConfig::bat_config() const {
    BatConfig b = bat;
    b.seed = derive_seed(seed, {kTagBat});
    return b;
}

std::uint64_t ExperimentConfig::split_seed() const { return derive_seed(seed, {kTagSplit}); }
std::uint64_t ExperimentConfig::init_seed() const { return derive_seed(seed, {kTagInit}); }
std::uint64_t ExperimentConfig::train_seed() const { return derive_seed(seed, {kTagTrain}); }

ExperimentConfig config_from_json(const std::string &text) {
    ExperimentConfig cfg;
    try {
        const auto j = ojson::parse(text);
        if (!j.is_object())
            throw UsageError("config: top level must be an object");
        reject_unknown(j,
                       {"schema_version", "seed", "output_dir", "epochs", "proxy_epochs", "split_ratio", "augment",
                        "thresholds", "threads", "data", "unet", "bat"},
                       "config");
        if (!j.contains("schema_version") || j.at("schema_version").get<int>() != kConfigSchemaVersion)
            throw UsageError("config: schema_version must be " + std::to_string(kConfigSchemaVersion));
        read(j, "seed", cfg.seed);
        if (j.contains("output_dir"))
            cfg.out_dir = j.at("output_dir").get<std::string>();
        read(j, "epochs", cfg.epochs);
        read(j, "proxy_epochs", cfg.proxy_epochs);
        read(j, "split_ratio", cfg.split_ratio);
        read(j, "augment", cfg.augment);
        read(j, "thresholds", cfg.thresholds);
        read(j, "threads", cfg.threads);

        if (j.contains("data")) {
            const auto &d = j.at("data");
            reject_unknown(d,
                           {"num_samples", "raw_shape", "target_shape", "tumor_count_range", "tumor_radius_range",
                            "noise_sigma", "organ_intensity", "tumor_intensity"},
                           "data");
            read(d, "num_samples", cfg.synth.num_samples);
            if (d.contains("raw_shape"))
                cfg.synth.raw_shape = shape_from(d.at("raw_shape"), "raw_shape");
            if (d.contains("target_shape"))
                cfg.synth.target_shape = shape_from(d.at("target_shape"), "target_shape");
            read(d, "tumor_count_range", cfg.synth.tumor_count_range);
            read(d, "tumor_radius_range", cfg.synth.tumor_radius_range);
            read(d, "noise_sigma", cfg.synth.background_noise_sigma);
            read(d, "organ_intensity", cfg.synth.organ_intensity);
            read(d, "tumor_intensity", cfg.synth.tumor_intensity);
        }
        if (j.contains("unet")) {
            const auto &u = j.at("unet");
            reject_unknown(u, {"base_filters"}, "unet");
            read(u, "base_filters", cfg.base_filters);
        }
        if (j.contains("bat")) {
            const auto &b = j.at("bat");
            reject_unknown(b,
                           {"num_bats", "max_iterations", "freq_min", "freq_max", "alpha", "gamma",
                            "learning_rate_range", "batch_size_range", "initial_loudness", "initial_pulse_rate",
                            "walk_scale", "tolerance", "patience"},
                           "bat");
            read(b, "num_bats", cfg.bat.num_bats);
            read(b, "max_iterations", cfg.bat.max_iterations);
            read(b, "freq_min", cfg.bat.freq_min);
            read(b, "freq_max", cfg.bat.freq_max);
            read(b, "alpha", cfg.bat.alpha);
            read(b, "gamma", cfg.bat.gamma);
            if (b.contains("learning_rate_range")) {
                const auto r = b.at("learning_rate_range").get<std::array<double, 2>>();
                if (!(r[0] > 0.0 && r[1] > 0.0))
                    throw UsageError("config: learning_rate_range must be positive");
                cfg.bat.bounds[0] = {std::log10(r[0]), std::log10(r[1])};
            }
            if (b.contains("batch_size_range")) {
                const auto r = b.at("batch_size_range").get<std::array<double, 2>>();
                cfg.bat.bounds[1] = {r[0], r[1]};
            }
            read(b, "initial_loudness", cfg.bat.initial_loudness);
            read(b, "initial_pulse_rate", cfg.bat.initial_pulse_rate);
            read(b, "walk_scale", cfg.bat.walk_scale);
            read(b, "tolerance", cfg.bat.tolerance);
            read(b, "patience", cfg.bat.patience);
        }
    } catch (const nlohmann::json::exception &e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    return cfg;
}

std::string config_to_json(const ExperimentConfig &cfg) {
    ojson j;
    j["schema_version"] = kConfigSchemaVersion;
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.out_dir.string();
    j["epochs"] = cfg.epochs;
    j["proxy_epochs"] = cfg.proxy_epochs;
    j["split_ratio"] = cfg.split_ratio;
    j["augment"] = cfg.augment;
    j["thresholds"] = cfg.thresholds;
    j["threads"] = cfg.threads;
    const auto &s = cfg.synth;
    j["data"] = {{"num_samples", s.num_samples},
                 {"raw_shape", {s.raw_shape.d, s.raw_shape.h, s.raw_shape.w}},
                 {"target_shape", {s.target_shape.d, s.target_shape.h, s.target_shape.w}},
                 {"tumor_count_range", s.tumor_count_range},
                 {"tumor_radius_range", s.tumor_radius_range},
                 {"noise_sigma", s.background_noise_sigma},
                 {"organ_intensity", s.organ_intensity},
                 {"tumor_intensity", s.tumor_intensity}};
    j["unet"] = {{"base_filters", cfg.base_filters}};
    const auto &b = cfg.bat;
    j["bat"] = {{"num_bats", b.num_bats},
                {"max_iterations", b.max_iterations},
                {"freq_min", b.freq_min},
                {"freq_max", b.freq_max},
                {"alpha", b.alpha},
                {"gamma", b.gamma},
                {"learning_rate_range", {std::pow(10.0, b.bounds[0].lo), std::pow(10.0, b.bounds[0].hi)}},
                {"batch_size_range", {b.bounds[1].lo, b.bounds[1].hi}},
                {"initial_loudness", b.initial_loudness},
                {"initial_pulse_rate", b.initial_pulse_rate},
                {"walk_scale", b.walk_scale},
                {"tolerance", b.tolerance},
                {"patience", b.patience}};
    return j.dump(2) + "\n";
}

ExperimentConfig load_config(const std::filesystem::path &path) {
    Bytes bytes;
    try {
        bytes = load_file(path);
    } catch (const IoError &e) {
        throw UsageError(std::string("config: ") + e.what());
    }
    return config_from_json(std::string(bytes.begin(), bytes.end()));
}

} // namespace batunet
