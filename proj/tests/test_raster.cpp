#include "fundus/codec.hpp"
#include "fundus/error.hpp"
#include "fundus/raster.hpp"
#include "fundus/rng.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

using namespace fundus;

namespace {

// Brute-force windowed mean with edge replication.
GrayImage box_mean(const GrayImage& img, int r) {
    GrayImage out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            double s = 0.0;
            for (int dy = -r; dy <= r; ++dy) {
                for (int dx = -r; dx <= r; ++dx) {
                    s += img.at(std::clamp(x + dx, 0, img.width() - 1), std::clamp(y + dy, 0, img.height() - 1));
                }
            }
            out.at(x, y) = static_cast<float>(s / ((2 * r + 1) * (2 * r + 1)));
        }
    }
    return out;
}

RasterImage random_raster(Rng& rng, int w, int h) {
    RasterImage img(w, h);
    for (int c = 0; c < 3; ++c) {
        for (auto& v : img.plane(c)) v = static_cast<std::uint8_t>(rng.integer(0, 255));
    }
    return img;
}

} // namespace

TEST(Raster, FuseStaysInUnitIntervalForEveryTriple) {
    RasterImage img(4096, 4096);
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        img.plane(0)[i] = static_cast<std::uint8_t>(i >> 16);
        img.plane(1)[i] = static_cast<std::uint8_t>(i >> 8);
        img.plane(2)[i] = static_cast<std::uint8_t>(i);
    }
    const GrayImage g = fuse_channels(img, {});
    const auto [lo, hi] = std::minmax_element(g.data().begin(), g.data().end());
    EXPECT_GE(*lo, 0.0f);
    EXPECT_LE(*hi, 1.0f);
    EXPECT_FLOAT_EQ(g[img.index(4095, 4095)], 1.0f);
}

TEST(Raster, FuseNormalizesByWeightSum) {
    RasterImage img(1, 1);
    img.set(0, 0, 200, 100, 50);
    const GrayImage g = fuse_channels(img, {0.0, 1.0, 0.4});
    EXPECT_NEAR(g[0], (100.0 + 0.4 * 50.0) / (1.4 * 255.0), 1e-6);
    EXPECT_THROW(fuse_channels(img, {0.0, 0.0, 0.0}), InvalidInput);
    EXPECT_THROW(fuse_channels(img, {-1.0, 1.0, 0.0}), InvalidInput);
}

TEST(Raster, SmoothExamples) {
    const GrayImage flat(9, 7, 0.5f);
    EXPECT_EQ(smooth(flat, 10), flat);

    Rng rng(5);
    const GrayImage any = oracle::random_image(rng, 13, 9);
    EXPECT_EQ(smooth(any, 0), any);

    GrayImage row(5, 1);
    row.at(2, 0) = 1.0f;
    const GrayImage s = smooth(row, 1);
    const float expect[] = {0.0f, 1.0f / 3, 1.0f / 3, 1.0f / 3, 0.0f};
    for (int x = 0; x < 5; ++x) EXPECT_NEAR(s.at(x, 0), expect[x], 1e-6) << x;
}

TEST(Raster, SmoothMatchesBruteForce) {
    Rng rng(17);
    for (int r : {1, 2, 5}) {
        const GrayImage img = oracle::random_image(rng, 23, 17);
        const GrayImage got = smooth(img, r);
        const GrayImage want = box_mean(img, r);
        for (std::size_t i = 0; i < got.pixel_count(); ++i) ASSERT_NEAR(got[i], want[i], 1e-5) << r;
    }
}

TEST(Raster, SubtractBackground) {
    const GrayImage flat(11, 11, 0.3f);
    const GrayImage sub = subtract_background(flat, 4);
    for (float v : sub.data()) EXPECT_FLOAT_EQ(v, 0.5f);

    GrayImage dot(31, 31);
    dot.at(15, 15) = 1.0f;
    const GrayImage out = subtract_background(dot, 10);
    EXPECT_FLOAT_EQ(out.at(15, 15), 1.0f);
    EXPECT_NEAR(out.at(2, 2), 0.5, 1e-6);
}

TEST(Raster, EqualizeTwoLevels) {
    GrayImage g(10, 10, 0.2f);
    for (int y = 5; y < 10; ++y) {
        for (int x = 0; x < 10; ++x) g.at(x, y) = 0.8f;
    }
    const GrayImage e = equalize_histogram(g, 256);
    EXPECT_NEAR(e.at(0, 0), 0.5, 1e-6);
    EXPECT_NEAR(e.at(0, 9), 1.0, 1e-6);

    const GrayImage flat(6, 6, 0.4f);
    const GrayImage ef = equalize_histogram(flat, 256);
    for (float v : ef.data()) EXPECT_EQ(v, ef[0]);
}

TEST(Raster, EqualizePreservesOrderAndCommutesWithPermutation) {
    Rng rng(23);
    GrayImage g(40, 30);
    for (auto& v : g.data()) v = static_cast<float>(rng.uniform());
    const GrayImage e = equalize_histogram(g, 256);
    for (std::size_t i = 0; i < g.pixel_count(); ++i) {
        for (std::size_t j = 0; j < g.pixel_count(); j += 37) {
            if (g[i] < g[j]) ASSERT_LE(e[i], e[j]);
        }
    }
    std::vector<std::size_t> perm(g.pixel_count());
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = perm.size() - 1; i > 0; --i) {
        std::swap(perm[i], perm[static_cast<std::size_t>(rng.integer(0, static_cast<int>(i)))]);
    }
    GrayImage p(40, 30);
    for (std::size_t i = 0; i < perm.size(); ++i) p[i] = g[perm[i]];
    const GrayImage ep = equalize_histogram(p, 256);
    for (std::size_t i = 0; i < perm.size(); ++i) ASSERT_EQ(ep[i], e[perm[i]]);
}

TEST(Raster, EqualizeOnlyInsideRoi) {
    GrayImage g(4, 1);
    g[0] = 0.1f;
    g[1] = 0.2f;
    g[2] = 0.3f;
    g[3] = 0.9f;
    Mask roi(4, 1);
    roi.set(0, 0);
    roi.set(1, 0);
    const GrayImage e = equalize_histogram(g, 256, &roi);
    EXPECT_NEAR(e[0], 0.5, 1e-6);
    EXPECT_NEAR(e[1], 1.0, 1e-6);
    EXPECT_EQ(e[3], g[3]);
}

TEST(Raster, AdjustLevels) {
    Rng rng(2);
    const RasterImage img = random_raster(rng, 16, 16);
    EXPECT_EQ(adjust_levels(img, 1.0, 1.0), img);

    RasterImage gray(1, 1);
    gray.set(0, 0, 100, 100, 100);
    EXPECT_EQ(adjust_levels(gray, 2.0, 1.0), gray);

    RasterImage mid(1, 1);
    mid.set(0, 0, 128, 128, 128);
    for (double c : {0.5, 1.7, 3.0}) EXPECT_EQ(adjust_levels(mid, 1.0, c), mid) << c;

    EXPECT_THROW(adjust_levels(img, 0.0, 1.0), InvalidInput);
}

TEST(Raster, Percentiles) {
    GrayImage g(5, 1);
    for (int i = 0; i < 5; ++i) g[static_cast<std::size_t>(i)] = static_cast<float>(4 - i) / 4.0f;
    EXPECT_DOUBLE_EQ(percentile(g, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(percentile(g, 0.5), 0.5);
    EXPECT_DOUBLE_EQ(percentile(g, 1.0), 1.0);
    const auto qs = percentiles(g, {0.25, 0.75});
    EXPECT_DOUBLE_EQ(qs[0], 0.25);
    EXPECT_DOUBLE_EQ(qs[1], 0.75);
    const Mask none(5, 1);
    EXPECT_THROW(percentile(g, 0.5, &none), InvalidInput);
}

TEST(Codec, PngRoundTripIsBitExact) {
    Rng rng(8);
    const RasterImage img = random_raster(rng, 37, 21);
    const Bytes png = encode_png(img);
    EXPECT_EQ(decode_image(png), img);
    EXPECT_EQ(encode_png(decode_image(png)), png);
}

TEST(Codec, JpegDecodesToSameSize) {
    RasterImage img(64, 48, 90);
    const RasterImage back = decode_image(encode_jpeg(img));
    EXPECT_EQ(back.width(), 64);
    EXPECT_EQ(back.height(), 48);
    EXPECT_NEAR(back.at(10, 10, 1), 90, 2);
}

TEST(Codec, GarbageIsDecodeError) {
    const Bytes junk = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    EXPECT_THROW(decode_image(junk), DecodeError);
    Bytes truncated = encode_png(RasterImage(8, 8, 3));
    truncated.resize(truncated.size() / 2);
    EXPECT_THROW(decode_image(truncated), DecodeError);
}
