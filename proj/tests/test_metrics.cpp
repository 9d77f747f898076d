#include "oracles.hpp"

#include <doctest.h>

using namespace batunet;

namespace {

// Confusion matrix of the reference experiment.
constexpr ConfusionCounts kReferenceCounts{99'344, 3'100'000, 42'526, 20'000};

std::pair<std::vector<double>, std::vector<std::uint8_t>> random_scores(std::mt19937_64 &rng, std::size_t n,
                                                                        int levels = 0) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> s(n);
    std::vector<std::uint8_t> l(n);
    for (std::size_t i = 0; i < n; ++i) {
        s[i] = levels ? std::floor(u(rng) * levels) / levels : u(rng);
        l[i] = u(rng) < 0.4;
    }
    return {s, l};
}

} // namespace

TEST_CASE("confusion") {
    const std::vector<double> p{0.9, 0.2};
    const std::vector<std::uint8_t> t{1, 0};
    CHECK(confusion(p, t, 0.5) == ConfusionCounts{1, 1, 0, 0});
    CHECK(confusion(p, t, 0.0).fn == 0);
    std::mt19937_64 rng(1);
    for (int trial = 0; trial < 5; ++trial) {
        const auto probs = oracle::random_volume(rng, {10, 10, 10});
        const auto truth = oracle::random_mask(rng, {10, 10, 10}, 0.2);
        const std::vector<double> flat(probs.data().begin(), probs.data().end());
        for (double th : {0.0, 0.25, 0.5, 0.99})
            CHECK(confusion(probs, truth, th) == oracle::confusion(flat, truth.data, th));
    }
    CHECK_THROWS_AS(confusion(VolumeD({2, 2, 2}, 1), MaskVolume({2, 2, 1}), 0.5), ShapeError);
}

TEST_CASE("metric_set") {
    SUBCASE("reference counts") {
        const auto m = metric_set(kReferenceCounts);
        CHECK(std::abs(m.recall - 0.8324) <= 5e-5);
        CHECK(std::abs(m.specificity - 0.9865) <= 5e-5);
        // Hand evaluation of the ratios.
        CHECK(m.accuracy == doctest::Approx(3'199'344.0 / 3'261'870.0).epsilon(1e-15));
        CHECK(std::abs(m.accuracy - 0.980831) <= 1e-6);
        CHECK(std::abs(m.precision - 0.700247) <= 1e-6);
        CHECK(std::abs(m.f1 - 0.760633) <= 1e-6);
        CHECK(m.dice == m.f1);
    }
    SUBCASE("perfect prediction") {
        const auto m = metric_set({50, 0, 0, 0});
        CHECK(m.accuracy == 1.0);
        CHECK(m.precision == 1.0);
        CHECK(m.recall == 1.0);
        CHECK(m.f1 == 1.0);
        CHECK(m.dice == 1.0);
        CHECK(m.specificity == 0.0); // TN + FP = 0
    }
    SUBCASE("zero denominators report 0 and empty counts are rejected") {
        const auto m = metric_set({0, 10, 0, 0});
        CHECK(m.precision == 0.0);
        CHECK(m.recall == 0.0);
        CHECK(m.f1 == 0.0);
        CHECK(m.specificity == 1.0);
        CHECK_THROWS_AS(metric_set({}), InvalidInput);
    }
    SUBCASE("all outputs in [0,1] and accuracy exact") {
        std::mt19937_64 rng(2);
        std::uniform_int_distribution<std::uint64_t> n(0, 1000);
        for (int i = 0; i < 200; ++i) {
            const ConfusionCounts c{n(rng), n(rng), n(rng), n(rng) + 1};
            const auto m = metric_set(c);
            for (double v : {m.accuracy, m.precision, m.recall, m.f1, m.specificity, m.dice}) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
            CHECK(m.accuracy == double(c.tp + c.tn) / double(c.total()));
        }
    }
}

TEST_CASE("f1_from_pr") {
    CHECK(std::abs(f1_from_pr(0.6323, 0.5303) - 0.5768) <= 1e-4);
    CHECK(f1_from_pr(1.0, 1.0) == 1.0);
    CHECK(f1_from_pr(0.0, 0.7) == 0.0);
    CHECK(f1_from_pr(0.0, 0.0) == 0.0);
}

TEST_CASE("threshold sweep") {
    std::mt19937_64 rng(3);
    const auto [s, l] = random_scores(rng, 500);
    SUBCASE("entries match independent recomputation and recall is non-increasing") {
        const auto grid = default_threshold_grid();
        REQUIRE(grid.size() == 9);
        CHECK(grid.front() == doctest::Approx(0.1));
        CHECK(grid.back() == doctest::Approx(0.9));
        const auto sweep = threshold_sweep(s, l, grid);
        REQUIRE(sweep.size() == grid.size());
        for (std::size_t i = 0; i < sweep.size(); ++i) {
            CHECK(sweep[i].counts == oracle::confusion(s, l, grid[i]));
            if (i > 0)
                CHECK(sweep[i].metrics.recall <= sweep[i - 1].metrics.recall);
        }
    }
    SUBCASE("threshold 0 captures every positive; above the max nothing is predicted") {
        const std::vector<double> t0{0.0};
        CHECK(threshold_sweep(s, l, t0)[0].metrics.recall == 1.0);
        std::vector<double> low(s.size());
        std::transform(s.begin(), s.end(), low.begin(), [](double x) { return 0.3 * x; });
        const std::vector<double> high{0.5};
        const auto e = threshold_sweep(low, l, high)[0];
        CHECK(e.counts.tp == 0);
        CHECK(e.counts.fp == 0);
        CHECK(e.metrics.precision == 0.0);
        CHECK(e.metrics.recall == 0.0);
        CHECK(e.metrics.f1 == 0.0);
    }
    SUBCASE("unsorted or out-of-range thresholds are invalid input") {
        const std::vector<double> bad{0.5, 0.3}, dup{0.3, 0.3}, out{0.5, 1.5};
        CHECK_THROWS_AS(threshold_sweep(s, l, bad), InvalidInput);
        CHECK_THROWS_AS(threshold_sweep(s, l, dup), InvalidInput);
        CHECK_THROWS_AS(threshold_sweep(s, l, out), InvalidInput);
    }
    SUBCASE("best_f1 picks the argmax and breaks ties toward the lower threshold") {
        // Positives sit at 0.35, negatives are split between 0.25 and 0.45,
        // so F1 rises up to threshold 0.3 and drops after it.
        std::vector<double> p;
        std::vector<std::uint8_t> t;
        for (int i = 0; i < 40; ++i) {
            p.push_back(0.35);
            t.push_back(1);
        }
        for (int i = 0; i < 30; ++i) {
            p.push_back(0.25);
            t.push_back(0);
        }
        for (int i = 0; i < 10; ++i) {
            p.push_back(0.45);
            t.push_back(0);
        }
        const auto sweep = threshold_sweep(p, t, default_threshold_grid());
        CHECK(best_f1(sweep).threshold == doctest::Approx(0.3));
        std::vector<SweepEntry> tied(2);
        tied[0].threshold = 0.2;
        tied[1].threshold = 0.6;
        tied[0].metrics.f1 = tied[1].metrics.f1 = 0.5;
        CHECK(best_f1(tied).threshold == 0.2);
    }
}

TEST_CASE("ROC and AUC") {
    SUBCASE("perfect separation and all ties") {
        const std::vector<double> s{0.9, 0.9, 0.1, 0.1, 0.1};
        const std::vector<std::uint8_t> l{1, 1, 0, 0, 0};
        const auto r = roc_auc(s, l);
        CHECK(r.auc == 1.0);
        CHECK(r.points.front().fpr == 0.0);
        CHECK(r.points.front().tpr == 0.0);
        CHECK(r.points.back().fpr == 1.0);
        CHECK(r.points.back().tpr == 1.0);
        const std::vector<double> flat(5, 0.4);
        CHECK(roc_auc(flat, l).auc == 0.5);
    }
    SUBCASE("single class is undefined") {
        const std::vector<double> s{0.1, 0.2};
        const std::vector<std::uint8_t> l{1, 1};
        CHECK_THROWS_AS(roc_auc(s, l), UndefinedMetric);
    }
    SUBCASE("pair-count oracle, with and without ties") {
        std::mt19937_64 rng(4);
        for (int levels : {0, 7}) {
            const auto [s, l] = random_scores(rng, 200, levels);
            const auto r = roc_auc(s, l);
            CHECK(std::abs(r.auc - oracle::pair_auc(s, l)) <= 1e-12);
            for (std::size_t i = 1; i < r.points.size(); ++i) {
                CHECK(r.points[i].fpr >= r.points[i - 1].fpr);
                CHECK(r.points[i].tpr >= r.points[i - 1].tpr);
            }
        }
    }
    SUBCASE("complement scores give 1 - AUC when tie-free") {
        std::mt19937_64 rng(5);
        const auto [s, l] = random_scores(rng, 300);
        std::vector<double> c(s.size());
        std::transform(s.begin(), s.end(), c.begin(), [](double x) { return 1.0 - x; });
        CHECK(roc_auc(s, l).auc + roc_auc(c, l).auc == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("Dice") {
    const Shape3 s{2, 2, 2};
    MaskVolume a(s), b(s);
    a.data = {1, 1, 0, 0, 1, 0, 0, 0};
    b.data = {0, 0, 1, 1, 0, 1, 0, 0};
    CHECK(dice(a, a) == 1.0);
    CHECK(dice(a, b) == 0.0);
    CHECK(dice(MaskVolume(s), MaskVolume(s)) == 1.0);
    CHECK_THROWS_AS(dice(a, MaskVolume({2, 2, 1})), ShapeError);

    SUBCASE("identity with F1 from confusion counts") {
        std::mt19937_64 rng(6);
        for (int i = 0; i < 200; ++i) {
            const auto p = oracle::random_mask(rng, {4, 3, 5}, 0.3), t = oracle::random_mask(rng, {4, 3, 5}, 0.3);
            if (p.count() + t.count() == 0)
                continue;
            VolumeD probs({4, 3, 5}, 1);
            for (std::size_t k = 0; k < p.voxels(); ++k)
                probs.data()[static_cast<Eigen::Index>(k)] = p.data[k];
            CHECK(dice(p, t) == metric_set(confusion(probs, t, 0.5)).f1);
        }
    }
    SUBCASE("summary statistics") {
        const auto sm = summarize({0.72, 0.79, 0.76});
        CHECK(sm.median == 0.76);
        CHECK(sm.q1 <= sm.median);
        CHECK(sm.median <= sm.q3);
        const std::vector<double> sorted{1, 2, 3, 4};
        CHECK(quantile_sorted(sorted, 0.25) == 1.75);
        CHECK(quantile_sorted(sorted, 0.5) == 2.5);
        CHECK(quantile_sorted(sorted, 0.75) == 3.25);
        const auto out = summarize({0.70, 0.72, 0.74, 0.75, 0.76, 0.77, 0.79, 0.10});
        REQUIRE(out.outliers.size() == 1);
        CHECK(out.outliers[0] == 0.10);
        CHECK(out.whisker_low == 0.70);
        CHECK(out.whisker_high == 0.79);
        CHECK_THROWS_AS(dice_per_sample(std::vector<MaskVolume>{a}, std::vector<MaskVolume>{}), InvalidInput);
        const auto per = dice_per_sample(std::vector<MaskVolume>{a, a}, std::vector<MaskVolume>{a, b});
        CHECK(per.values == std::vector<double>{1.0, 0.0});
        CHECK(per.mean == 0.5);
    }
}
