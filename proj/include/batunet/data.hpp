#pragma once

#include "batunet/rng.hpp"
#include "batunet/volume.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace batunet {

/// Parameters of the synthetic organ/tumor phantom corpus.
struct SynthSpec {
    std::size_t num_samples = 24;
    Shape3 raw_shape{80, 80, 40};
    Shape3 target_shape{64, 64, 32};
    std::array<std::size_t, 2> tumor_count_range{1, 3};
    std::array<double, 2> tumor_radius_range{3.0, 6.0};
    double background_noise_sigma = 0.05;
    double organ_intensity = 0.5;
    double tumor_intensity = 1.0;
    std::uint64_t seed = 0;

    void validate() const;
};

struct SegSample {
    VolumeD image; // single channel, values in [0,1]
    MaskVolume mask;
    std::string id;
};

/// Phantom before preprocessing, at raw_shape.
struct RawSample {
    VolumeD image;
    MaskVolume mask;
};

/// A single phantom; deterministic in (spec.seed, index).
RawSample generate_raw_sample(const SynthSpec &spec, std::size_t index);

/// normalize_max, trilinear resize of the image; nearest-neighbour resize of the mask.
SegSample preprocess(const RawSample &raw, Shape3 target, std::string id);

std::string sample_id(std::size_t index);

std::vector<SegSample> generate_dataset(const SynthSpec &spec, std::size_t threads = 1);

/// One draw from the augmentation group: per-axis flips, then k quarter turns
/// in the (d, h) plane, then an integer shift per axis with zero fill.
struct AugmentDraw {
    std::array<bool, 3> flip{false, false, false};
    int quarter_turns = 0;
    std::array<int, 3> shift{0, 0, 0};

    bool identity() const { return !flip[0] && !flip[1] && !flip[2] && quarter_turns == 0 && shift == std::array{0, 0, 0}; }
};

inline constexpr int kMaxShift = 4;

/// Flips with p = 0.5 each, k uniform in {0..3} (only {0, 2} when d != h),
/// shifts uniform in [-4, 4].
AugmentDraw draw_augmentation(Rng &rng, const Shape3 &shape);

/// Applies the same geometric transform to image and mask.
SegSample apply_augmentation(const SegSample &s, const AugmentDraw &draw);

inline SegSample augment(const SegSample &s, Rng &rng) { return apply_augmentation(s, draw_augmentation(rng, s.mask.shape)); }

struct SplitIndex {
    std::vector<std::string> train;
    std::vector<std::string> val;
    double ratio = 0.8;
    std::uint64_t seed = 0;
};

/// Seeded shuffle, then the first round(ratio * N) ids go to training.
SplitIndex split_dataset(const std::vector<std::string> &ids, double ratio, std::uint64_t seed);

/// Reshuffles `indices` with a stream keyed by (seed, epoch) and cuts it into
/// batches; the final partial batch is kept.
std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t> &indices, std::size_t batch_size,
                                                   std::uint64_t seed, std::uint64_t epoch);

/// On-disk dataset: `<id>.img.vol3`, `<id>.mask.vol3` and `manifest.json`.
struct DatasetManifest {
    std::vector<std::string> ids;
    SynthSpec spec;
    bool synthetic = true;
    std::uint64_t seed = 0;
    SplitIndex split;
};

void save_dataset(const std::filesystem::path &dir, const std::vector<SegSample> &samples,
                  const DatasetManifest &manifest);

struct LoadedDataset {
    DatasetManifest manifest;
    std::vector<SegSample> samples; // same order as manifest.ids
};

LoadedDataset load_dataset(const std::filesystem::path &dir);

/// Serialised manifest text (stable key order and formatting).
std::string manifest_to_json(const DatasetManifest &m);
DatasetManifest manifest_from_json(const std::string &text);

/// Reads every `<id>.img.vol3` / `<id>.mask.vol3` pair in `dir` (sorted by id)
/// and preprocesses it to `target`.
std::vector<SegSample> import_raw_dataset(const std::filesystem::path &dir, Shape3 target);

} // namespace batunet
