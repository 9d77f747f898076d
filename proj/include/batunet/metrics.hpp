#pragma once

#include "batunet/volume.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace batunet {

struct ConfusionCounts {
    std::uint64_t tp = 0;
    std::uint64_t tn = 0;
    std::uint64_t fp = 0;
    std::uint64_t fn = 0;

    std::uint64_t total() const noexcept { return tp + tn + fp + fn; }
    ConfusionCounts &operator+=(const ConfusionCounts &o) noexcept {
        tp += o.tp;
        tn += o.tn;
        fp += o.fp;
        fn += o.fn;
        return *this;
    }
    friend bool operator==(const ConfusionCounts &, const ConfusionCounts &) = default;
};

/// Ratios with a zero denominator are reported as 0.
struct MetricSet {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0; // sensitivity
    double f1 = 0.0;
    double specificity = 0.0;
    double dice = 0.0;
};

/// Voxelwise tally; a voxel is predicted positive iff score >= threshold.
ConfusionCounts confusion(std::span<const double> scores, std::span<const std::uint8_t> truth, double threshold);
ConfusionCounts confusion(const VolumeD &probs, const MaskVolume &truth, double threshold);

MetricSet metric_set(const ConfusionCounts &c);

/// Harmonic mean, 0 when p + r = 0.
double f1_from_pr(double precision, double recall);

struct SweepEntry {
    double threshold = 0.0;
    ConfusionCounts counts;
    MetricSet metrics;
};

/// One entry per threshold; thresholds must be strictly increasing in [0,1].
std::vector<SweepEntry> threshold_sweep(std::span<const double> scores, std::span<const std::uint8_t> truth,
                                        std::span<const double> thresholds);
std::vector<SweepEntry> threshold_sweep(const VolumeD &probs, const MaskVolume &truth,
                                        std::span<const double> thresholds);

/// 0.1, 0.2, ..., 0.9.
std::vector<double> default_threshold_grid();

/// Entry with the largest F1; the lowest threshold wins ties.
const SweepEntry &best_f1(const std::vector<SweepEntry> &sweep);

struct RocPoint {
    double fpr = 0.0;
    double tpr = 0.0;
};

struct RocCurve {
    std::vector<RocPoint> points; // (0,0) first, (1,1) last
    double auc = 0.0;
};

/// ROC over the distinct scores (tied scores form one step); AUC by the
/// trapezoidal rule, which equals P(score+ > score-) + P(tie) / 2.
RocCurve roc_auc(std::span<const double> scores, std::span<const std::uint8_t> truth);
RocCurve roc_auc(const VolumeD &probs, const MaskVolume &truth);

/// 2|P & T| / (|P| + |T|); 1 when both masks are empty.
double dice(const MaskVolume &pred, const MaskVolume &truth);

struct DiceSummary {
    std::vector<double> values;
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double whisker_low = 0.0;  // smallest value >= q1 - 1.5 IQR
    double whisker_high = 0.0; // largest value <= q3 + 1.5 IQR
    std::vector<double> outliers;
    double mean = 0.0;
};

/// Linear-interpolation quantile of already sorted data.
double quantile_sorted(std::span<const double> sorted, double q);

DiceSummary summarize(std::vector<double> values);
DiceSummary dice_per_sample(std::span<const MaskVolume> pred, std::span<const MaskVolume> truth);

} // namespace batunet
