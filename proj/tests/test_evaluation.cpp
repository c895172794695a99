#include "fundus/error.hpp"
#include "fundus/evaluation.hpp"
#include "fundus/rng.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

using namespace fundus;
using namespace fundus::evaluation;

namespace {

ConfusionMatrix from(std::vector<std::vector<std::int64_t>> c) {
    ConfusionMatrix m(static_cast<int>(c.size()));
    m.counts = std::move(c);
    return m;
}

Region rect(int x0, int y0, int x1, int y1) {
    std::vector<morphology::Point> px;
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) px.push_back({x, y});
    }
    return morphology::make_region(std::move(px));
}

} // namespace

TEST(Kappa, HandCases) {
    EXPECT_EQ(quadratic_weighted_kappa(from({{3, 0, 0}, {0, 5, 0}, {0, 0, 2}})), 1.0);
    EXPECT_EQ(quadratic_weighted_kappa(from({{1, 1}, {1, 1}})), 0.0);
    EXPECT_NEAR(quadratic_weighted_kappa(from({{1, 1, 0}, {0, 1, 0}, {0, 0, 1}})), 0.8, 1e-15);
}

TEST(Kappa, MatchesBruteForceOnRandomMatrices) {
    Rng rng(2024);
    int checked = 0;
    for (int t = 0; t < 10000; ++t) {
        ConfusionMatrix m(5);
        for (auto& row : m.counts) {
            for (auto& v : row) v = rng.uniform() < 0.3 ? 0 : rng.integer(0, 40);
        }
        const double want = oracle::kappa(m.counts);
        if (!std::isfinite(want)) {
            EXPECT_THROW(quadratic_weighted_kappa(m), Error);
            continue;
        }
        ASSERT_NEAR(quadratic_weighted_kappa(m), want, 1e-12) << t;
        ++checked;
    }
    EXPECT_GT(checked, 9900);
}

TEST(Kappa, SymmetricAndScaleInvariant) {
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
        ConfusionMatrix m(4);
        for (auto& row : m.counts) {
            for (auto& v : row) v = rng.integer(1, 20);
        }
        const double k = quadratic_weighted_kappa(m);
        EXPECT_NEAR(quadratic_weighted_kappa(m.transposed()), k, 1e-12);
        ConfusionMatrix s = m;
        for (auto& row : s.counts) {
            for (auto& v : row) v *= 7;
        }
        EXPECT_NEAR(quadratic_weighted_kappa(s), k, 1e-12);
    }
}

TEST(Kappa, DegenerateAndMalformed) {
    EXPECT_THROW(quadratic_weighted_kappa(from({{5, 0}, {0, 0}})), DegenerateAgreement);
    EXPECT_THROW(quadratic_weighted_kappa(from({{0, 0}, {0, 0}})), InvalidInput);
    EXPECT_THROW(quadratic_weighted_kappa(from({{1, -1}, {0, 1}})), InvalidInput);
    ConfusionMatrix ragged(2);
    ragged.counts = {{1, 0}, {1}};
    EXPECT_THROW(quadratic_weighted_kappa(ragged), InvalidInput);
}

TEST(Confusion, FromGrades) {
    EXPECT_EQ(confusion_from_grades({0, 1}, {0, 1}, 2).counts, (std::vector<std::vector<std::int64_t>>{{1, 0}, {0, 1}}));
    EXPECT_EQ(confusion_from_grades({0, 0, 1}, {1, 0, 1}, 2).counts,
              (std::vector<std::vector<std::int64_t>>{{1, 1}, {0, 1}}));
    EXPECT_THROW(confusion_from_grades({0, 1}, {0}, 2), InvalidInput);
    EXPECT_THROW(confusion_from_grades({0, 2}, {0, 1}, 2), InvalidInput);
    const std::string table = format_confusion(confusion_from_grades({0, 1}, {0, 1}, 2));
    EXPECT_NE(table.find('1'), std::string::npos);
}

TEST(Detection, MatchRegions) {
    const std::vector<Region> truth = {rect(0, 0, 9, 9), rect(20, 20, 25, 25)};
    const auto same = match_regions(truth, truth);
    EXPECT_EQ(same.true_positives, 2u);
    EXPECT_DOUBLE_EQ(same.precision, 1.0);
    EXPECT_DOUBLE_EQ(same.recall, 1.0);

    const auto none = match_regions({}, truth);
    EXPECT_EQ(none.false_negatives, 2u);
    EXPECT_DOUBLE_EQ(none.recall, 0.0);
    EXPECT_DOUBLE_EQ(none.precision, 0.0);

    const auto two_on_one = match_regions({rect(0, 0, 5, 9), rect(4, 0, 9, 9)}, {rect(0, 0, 9, 9)});
    EXPECT_EQ(two_on_one.true_positives, 1u);
    EXPECT_EQ(two_on_one.false_positives, 1u);
    EXPECT_EQ(two_on_one.false_negatives, 0u);
}

TEST(Detection, CentroidOrIouCriterion) {
    // Small blob inside a large truth: IoU tiny, centroid on truth.
    EXPECT_EQ(match_regions({rect(4, 4, 5, 5)}, {rect(0, 0, 19, 19)}).true_positives, 1u);
    // Offset square sharing 25% of its pixels: centroid off truth, IoU 1/7.
    EXPECT_EQ(match_regions({rect(5, 5, 14, 14)}, {rect(0, 0, 9, 9)}).true_positives, 0u);
    // Sharing half: IoU 1/3.
    EXPECT_EQ(match_regions({rect(5, 0, 14, 9)}, {rect(0, 0, 9, 9)}).true_positives, 1u);
}

TEST(Detection, TruePositivesBoundedByCounts) {
    Rng rng(9);
    for (int t = 0; t < 300; ++t) {
        std::vector<Region> pred;
        std::vector<Region> truth;
        for (int i = rng.integer(0, 5); i > 0; --i) {
            const int x = rng.integer(0, 30);
            const int y = rng.integer(0, 30);
            pred.push_back(rect(x, y, x + rng.integer(0, 6), y + rng.integer(0, 6)));
        }
        for (int i = rng.integer(0, 5); i > 0; --i) {
            const int x = rng.integer(0, 30);
            const int y = rng.integer(0, 30);
            truth.push_back(rect(x, y, x + rng.integer(0, 6), y + rng.integer(0, 6)));
        }
        const auto s = match_regions(pred, truth);
        ASSERT_LE(s.true_positives, std::min(pred.size(), truth.size()));
        ASSERT_EQ(s.true_positives + s.false_positives, pred.size());
        ASSERT_EQ(s.true_positives + s.false_negatives, truth.size());
    }
}

TEST(Detection, PixelScores) {
    Mask pred(4, 1);
    Mask truth(4, 1);
    Mask roi(4, 1, true);
    pred.set(0, 0);
    pred.set(1, 0);
    truth.set(1, 0);
    truth.set(2, 0);
    const auto s = pixel_scores(pred, truth, roi);
    EXPECT_EQ(s.true_positives, 1u);
    EXPECT_EQ(s.false_positives, 1u);
    EXPECT_EQ(s.false_negatives, 1u);
    EXPECT_DOUBLE_EQ(s.f1, 0.5);
    roi.set(0, 0, false);
    EXPECT_DOUBLE_EQ(pixel_scores(pred, truth, roi).precision, 1.0);
}
