#include "fundus/error.hpp"
#include "fundus/morphology.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <numbers>

using namespace fundus;
using namespace fundus::morphology;

TEST(Morphology, PropertySuiteOnRandomImages) {
    const auto res = oracle::morphology_suite(1000, 500, 11);
    EXPECT_TRUE(res.ok) << res.failure;
}

TEST(Morphology, LargeRadiusMatchesBruteForce) {
    Rng rng(3);
    const GrayImage f = oracle::random_image(rng, 37, 23);
    for (int r : {4, 7, 12}) {
        for (auto se : {StructuringElement::disc(r), StructuringElement::square(r)}) {
            EXPECT_TRUE(oracle::same(dilate(f, se), oracle::morph(f, se, true))) << r;
            EXPECT_TRUE(oracle::same(erode(f, se), oracle::morph(f, se, false))) << r;
        }
    }
}

TEST(Morphology, DiscHalfWidths) {
    const auto se = StructuringElement::disc(3);
    EXPECT_EQ(se.half_width(0), 3);
    EXPECT_EQ(se.half_width(2), 2);  // floor(sqrt(5))
    EXPECT_EQ(se.half_width(3), 0);
    EXPECT_EQ(se.half_width(4), -1);
    EXPECT_EQ(StructuringElement::square(2).half_width(2), 2);
}

TEST(Morphology, NegativeRadiusRejected) {
    GrayImage g(4, 4);
    EXPECT_THROW(dilate(g, StructuringElement::disc(-1)), InvalidInput);
}

TEST(Morphology, ThresholdPolarity) {
    GrayImage g(3, 1);
    g.at(0, 0) = 0.2f;
    g.at(1, 0) = 0.5f;
    g.at(2, 0) = 0.8f;
    const Mask above = threshold(g, 0.5, Polarity::Above);
    const Mask below = threshold(g, 0.5, Polarity::Below);
    EXPECT_FALSE(above.at(1, 0));
    EXPECT_TRUE(above.at(2, 0));
    EXPECT_TRUE(below.at(0, 0));
    EXPECT_FALSE(below.at(1, 0));
}

TEST(Morphology, SquareRegionProps) {
    Mask m(20, 20);
    for (int y = 5; y < 15; ++y) {
        for (int x = 5; x < 15; ++x) m.set(x, y);
    }
    auto comps = connected_components(m);
    ASSERT_EQ(comps.size(), 1u);
    const Region r = region_props(comps[0]);
    EXPECT_EQ(r.area, 100u);
    EXPECT_DOUBLE_EQ(r.cx, 9.5);
    EXPECT_DOUBLE_EQ(r.cy, 9.5);
    // 40 boundary edges scaled by pi/4
    EXPECT_NEAR(r.perimeter, 40.0 * std::numbers::pi / 4.0, 1e-9);
    // isoperimetric ratio of a square exceeds 1 under the pi/4 edge scaling; clamped
    EXPECT_DOUBLE_EQ(r.ovalness, std::min(1.0, 4.0 * std::numbers::pi * 100.0 / (r.perimeter * r.perimeter)));
    EXPECT_NEAR(r.mean_width, 200.0 / r.perimeter, 1e-9);
    EXPECT_EQ(r.bbox.x0, 5);
    EXPECT_EQ(r.bbox.x1, 14);
}

TEST(Morphology, DigitalDiscIsNearlyRound) {
    Mask m(101, 101);
    for (int y = 0; y < 101; ++y) {
        for (int x = 0; x < 101; ++x) m.set(x, y, (x - 50) * (x - 50) + (y - 50) * (y - 50) <= 30 * 30);
    }
    const Region r = region_props(connected_components(m).at(0));
    EXPECT_GT(r.ovalness, 0.9);
    EXPECT_NEAR(r.equivalent_diameter(), 60.0, 1.0);
}

TEST(Morphology, ThinLineIsElongated) {
    Mask m(80, 10);
    for (int x = 5; x < 75; ++x) {
        m.set(x, 4);
        m.set(x, 5);
    }
    const Region r = region_props(connected_components(m).at(0));
    EXPECT_LT(r.ovalness, 0.2);
    EXPECT_NEAR(r.mean_width, 2.0 * 140.0 / r.perimeter, 1e-9);
}

TEST(Morphology, MeanIntensity) {
    Mask m(4, 1);
    m.set(1, 0);
    m.set(2, 0);
    GrayImage g(4, 1);
    g.at(1, 0) = 0.25f;
    g.at(2, 0) = 0.75f;
    const Region r = region_props(connected_components(m).at(0), g);
    EXPECT_DOUBLE_EQ(r.mean_intensity, 0.5);
}

TEST(Morphology, DiagonalPixelsConnect) {
    Mask m(3, 3);
    m.set(0, 0);
    m.set(1, 1);
    m.set(2, 2);
    EXPECT_EQ(connected_components(m).size(), 1u);
    int n = 0;
    const auto labels = label_components(m, &n);
    EXPECT_EQ(n, 1);
    EXPECT_EQ(labels[m.index(2, 2)], 1);
}

TEST(Morphology, ThresholdScanOrdering) {
    GrayImage g(8, 8, 0.5f);
    g.at(2, 2) = 0.95f;
    g.at(5, 5) = 0.8f;
    Mask roi(8, 8, true);
    const auto scan = threshold_scan(g, {0.9, 0.7}, Polarity::Above, roi);
    ASSERT_EQ(scan.size(), 2u);
    EXPECT_EQ(scan[0].regions.size(), 1u);
    EXPECT_EQ(scan[1].regions.size(), 2u);
    EXPECT_THROW(threshold_scan(g, {0.7, 0.9}, Polarity::Above, roi), InvalidInput);
    EXPECT_THROW(threshold_scan(g, {0.9}, Polarity::Above, Mask(8, 8)), InvalidInput);
}

TEST(Morphology, MaskHelpers) {
    Mask m(5, 5);
    Region r = make_region({{1, 1}, {2, 1}});
    paint(m, r);
    EXPECT_TRUE(intersects(r, m));
    EXPECT_EQ(region_mask(r, 5, 5), m);
    EXPECT_EQ(r.area, 2u);
    EXPECT_DOUBLE_EQ(r.cx, 1.5);
}

TEST(Morphology, RegionPropsReferenceShapes) {
    Mask disc(61, 61);
    for (int y = 0; y < 61; ++y) {
        for (int x = 0; x < 61; ++x) disc.set(x, y, (x - 30) * (x - 30) + (y - 30) * (y - 30) <= 400);
    }
    const Region d = region_props(connected_components(disc).at(0));
    EXPECT_GE(d.ovalness, 0.85);
    EXPECT_NEAR(d.mean_width, 20.0, 2.0);

    Mask line(60, 5);
    for (int x = 5; x < 55; ++x) line.set(x, 2);
    const Region l = region_props(connected_components(line).at(0));
    EXPECT_LE(l.ovalness, 0.25);
    EXPECT_LE(l.mean_width, 2.0);

    Mask dot(5, 5);
    dot.set(3, 1);
    const Region p = region_props(connected_components(dot).at(0));
    EXPECT_EQ(p.area, 1u);
    EXPECT_LE(p.mean_width, 2.0);
    EXPECT_DOUBLE_EQ(p.cx, 3.0);
    EXPECT_DOUBLE_EQ(p.cy, 1.0);
}

TEST(Morphology, ClosingRemovesThinDarkLine) {
    GrayImage g(15, 15, 0.8f);
    for (int y = 0; y < 15; ++y) g.at(7, y) = 0.1f;
    const GrayImage c = close(g, StructuringElement::disc(2));
    for (float v : c.data()) EXPECT_GE(v, 0.8f);
    EXPECT_TRUE(oracle::same(close(c, StructuringElement::disc(2)), c));
}
