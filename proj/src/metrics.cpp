#include "batunet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace batunet {

namespace {

double ratio(std::uint64_t num, std::uint64_t den) {
    return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

std::span<const double> scores_of(const VolumeD &v) {
    if (v.channels() != 1)
        throw ShapeError("metrics: expected a single-channel probability volume");
    return {v.data().data(), v.size()};
}

void check_pair(std::span<const double> scores, std::span<const std::uint8_t> truth) {
    if (scores.size() != truth.size())
        throw ShapeError("metrics: " + std::to_string(scores.size()) + " scores vs " + std::to_string(truth.size()) +
                         " labels");
}

} // namespace

ConfusionCounts confusion(std::span<const double> scores, std::span<const std::uint8_t> truth, double threshold) {
    check_pair(scores, truth);
    ConfusionCounts c;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool pos = truth[i] != 0;
        c.tp += pred && pos;
        c.fp += pred && !pos;
        c.fn += !pred && pos;
        c.tn += !pred && !pos;
    }
    return c;
}

ConfusionCounts confusion(const VolumeD &probs, const MaskVolume &truth, double threshold) {
    if (!(probs.shape() == truth.shape))
        throw ShapeError("confusion: shape mismatch " + to_string(probs.shape()) + " vs " + to_string(truth.shape));
    return confusion(scores_of(probs), truth.data, threshold);
}

MetricSet metric_set(const ConfusionCounts &c) {
    if (c.total() == 0)
        throw InvalidInput("metric_set: no voxels counted");
    MetricSet m;
    m.accuracy = ratio(c.tp + c.tn, c.total());
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    m.specificity = ratio(c.tn, c.tn + c.fp);
    // 2TP / (2TP + FP + FN) is the harmonic mean of precision and recall.
    m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn);
    m.dice = m.f1;
    return m;
}

double f1_from_pr(double precision, double recall) {
    const double s = precision + recall;
    return s == 0.0 ? 0.0 : 2.0 * precision * recall / s;
}

std::vector<SweepEntry> threshold_sweep(std::span<const double> scores, std::span<const std::uint8_t> truth,
                                        std::span<const double> thresholds) {
    check_pair(scores, truth);
    for (std::size_t i = 0; i < thresholds.size(); ++i) {
        if (!(thresholds[i] >= 0.0 && thresholds[i] <= 1.0))
            throw InvalidInput("threshold_sweep: thresholds must lie in [0,1]");
        if (i > 0 && !(thresholds[i] > thresholds[i - 1]))
            throw InvalidInput("threshold_sweep: thresholds must be strictly increasing");
    }
    std::vector<SweepEntry> out;
    out.reserve(thresholds.size());
    for (double t : thresholds) {
        const auto c = confusion(scores, truth, t);
        out.push_back({t, c, metric_set(c)});
    }
    return out;
}

std::vector<SweepEntry> threshold_sweep(const VolumeD &probs, const MaskVolume &truth,
                                        std::span<const double> thresholds) {
    if (!(probs.shape() == truth.shape))
        throw ShapeError("threshold_sweep: shape mismatch");
    return threshold_sweep(scores_of(probs), truth.data, thresholds);
}

std::vector<double> default_threshold_grid() {
    std::vector<double> g;
    for (int i = 1; i <= 9; ++i)
        g.push_back(i / 10.0);
    return g;
}

const SweepEntry &best_f1(const std::vector<SweepEntry> &sweep) {
    if (sweep.empty())
        throw InvalidInput("best_f1: empty sweep");
    const SweepEntry *best = &sweep.front();
    for (const auto &e : sweep)
        if (e.metrics.f1 > best->metrics.f1)
            best = &e;
    return *best;
}

RocCurve roc_auc(std::span<const double> scores, std::span<const std::uint8_t> truth) {
    check_pair(scores, truth);
    std::uint64_t pos = 0;
    for (auto t : truth)
        pos += t != 0;
    const std::uint64_t neg = truth.size() - pos;
    if (pos == 0 || neg == 0)
        throw UndefinedMetric("roc_auc: truth must contain both classes");
    for (double s : scores)
        if (!std::isfinite(s))
            throw InvalidInput("roc_auc: non-finite score");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    RocCurve roc;
    roc.points.push_back({0.0, 0.0});
    std::uint64_t tp = 0, fp = 0;
    // Twice the area in units of one (positive, negative) pair; exact in integers.
    std::uint64_t area2 = 0;
    for (std::size_t i = 0; i < order.size();) {
        const double s = scores[order[i]];
        std::uint64_t dtp = 0, dfp = 0;
        for (; i < order.size() && scores[order[i]] == s; ++i)
            (truth[order[i]] != 0 ? dtp : dfp) += 1;
        area2 += dfp * (2 * tp + dtp);
        tp += dtp;
        fp += dfp;
        roc.points.push_back({ratio(fp, neg), ratio(tp, pos)});
    }
    roc.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
    return roc;
}

RocCurve roc_auc(const VolumeD &probs, const MaskVolume &truth) {
    if (!(probs.shape() == truth.shape))
        throw ShapeError("roc_auc: shape mismatch");
    return roc_auc(scores_of(probs), truth.data);
}

double dice(const MaskVolume &pred, const MaskVolume &truth) {
    if (!(pred.shape == truth.shape))
        throw ShapeError("dice: shape mismatch " + to_string(pred.shape) + " vs " + to_string(truth.shape));
    std::uint64_t inter = 0, sum = 0;
    for (std::size_t i = 0; i < pred.data.size(); ++i) {
        inter += pred.data[i] & truth.data[i];
        sum += pred.data[i] + truth.data[i];
    }
    return sum == 0 ? 1.0 : static_cast<double>(2 * inter) / static_cast<double>(sum);
}

double quantile_sorted(std::span<const double> sorted, double q) {
    if (sorted.empty())
        throw InvalidInput("quantile: empty data");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    return sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - static_cast<double>(lo));
}

DiceSummary summarize(std::vector<double> values) {
    if (values.empty())
        throw InvalidInput("summarize: empty data");
    DiceSummary s;
    s.values = values;
    std::sort(values.begin(), values.end());
    s.q1 = quantile_sorted(values, 0.25);
    s.median = quantile_sorted(values, 0.5);
    s.q3 = quantile_sorted(values, 0.75);
    const double iqr = s.q3 - s.q1;
    const double lo_fence = s.q1 - 1.5 * iqr;
    const double hi_fence = s.q3 + 1.5 * iqr;
    s.whisker_low = s.q1;
    s.whisker_high = s.q3;
    for (double v : values) {
        if (v < lo_fence || v > hi_fence)
            s.outliers.push_back(v);
        else {
            s.whisker_low = std::min(s.whisker_low, v);
            s.whisker_high = std::max(s.whisker_high, v);
        }
    }
    s.mean = std::accumulate(s.values.begin(), s.values.end(), 0.0) / static_cast<double>(s.values.size());
    return s;
}

DiceSummary dice_per_sample(std::span<const MaskVolume> pred, std::span<const MaskVolume> truth) {
    if (pred.size() != truth.size())
        throw InvalidInput("dice_per_sample: " + std::to_string(pred.size()) + " predictions vs " +
                           std::to_string(truth.size()) + " ground truths");
    if (pred.empty())
        throw InvalidInput("dice_per_sample: no samples");
    std::vector<double> values;
    values.reserve(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        values.push_back(dice(pred[i], truth[i]));
    return summarize(std::move(values));
}

} // namespace batunet
