#pragma once

// Independent reference implementations used as test oracles. They favour obviousness over
// speed and share no code with the library beyond the image containers.

#include "fundus/evaluation.hpp"
#include "fundus/morphology.hpp"
#include "fundus/raster.hpp"
#include "fundus/rng.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <queue>
#include <string>
#include <vector>

namespace oracle {

using fundus::GrayImage;
using fundus::Mask;
using fundus::morphology::StructuringElement;

inline bool in_element(const StructuringElement& se, int dx, int dy) {
    if (se.shape == StructuringElement::Shape::Square) return std::abs(dx) <= se.radius && std::abs(dy) <= se.radius;
    return dx * dx + dy * dy <= se.radius * se.radius;
}

/// Brute-force flat morphology; samples outside the image take the nearest edge value.
inline GrayImage morph(const GrayImage& img, const StructuringElement& se, bool dilation) {
    GrayImage out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y) {
        for (int x = 0; x < img.width(); ++x) {
            float v = dilation ? -1e30f : 1e30f;
            for (int dy = -se.radius; dy <= se.radius; ++dy) {
                for (int dx = -se.radius; dx <= se.radius; ++dx) {
                    if (!in_element(se, dx, dy)) continue;
                    const int sx = std::clamp(x + dx, 0, img.width() - 1);
                    const int sy = std::clamp(y + dy, 0, img.height() - 1);
                    const float s = img.at(sx, sy);
                    v = dilation ? std::max(v, s) : std::min(v, s);
                }
            }
            out.at(x, y) = v;
        }
    }
    return out;
}

inline Mask morph(const Mask& m, const StructuringElement& se, bool dilation) {
    GrayImage g(m.width(), m.height());
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) g.at(x, y) = m.at(x, y) ? 1.0f : 0.0f;
    }
    const GrayImage r = morph(g, se, dilation);
    Mask out(m.width(), m.height());
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) out.set(x, y, r.at(x, y) > 0.5f);
    }
    return out;
}

/// Breadth-first 8-connected labelling; labels in raster order of first pixel, from 1.
inline std::vector<int> flood_labels(const Mask& m, int& count) {
    std::vector<int> label(m.pixel_count(), 0);
    count = 0;
    for (int y = 0; y < m.height(); ++y) {
        for (int x = 0; x < m.width(); ++x) {
            if (!m.at(x, y) || label[m.index(x, y)]) continue;
            ++count;
            std::queue<std::pair<int, int>> q;
            q.push({x, y});
            label[m.index(x, y)] = count;
            while (!q.empty()) {
                auto [cx, cy] = q.front();
                q.pop();
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = cx + dx;
                        const int ny = cy + dy;
                        if (nx < 0 || ny < 0 || nx >= m.width() || ny >= m.height()) continue;
                        if (!m.at(nx, ny) || label[m.index(nx, ny)]) continue;
                        label[m.index(nx, ny)] = count;
                        q.push({nx, ny});
                    }
                }
            }
        }
    }
    return label;
}

/// Direct evaluation of 1 - sum(w*O)/sum(w*E) with w = (i-j)^2/(k-1)^2, in long double.
inline double kappa(const std::vector<std::vector<std::int64_t>>& c) {
    const std::size_t k = c.size();
    long double n = 0;
    for (const auto& r : c) {
        for (auto v : r) n += v;
    }
    long double num = 0, den = 0;
    for (std::size_t i = 0; i < k; ++i) {
        for (std::size_t j = 0; j < k; ++j) {
            long double ri = 0, cj = 0;
            for (std::size_t t = 0; t < k; ++t) {
                ri += c[i][t];
                cj += c[t][j];
            }
            const long double w = (static_cast<long double>(i) - j) * (static_cast<long double>(i) - j) /
                                  ((k - 1.0L) * (k - 1.0L));
            num += w * c[i][j] / n;
            den += w * (ri / n) * (cj / n);
        }
    }
    return static_cast<double>(1.0L - num / den);
}

inline Mask random_mask(fundus::Rng& rng, int w, int h, double density) {
    Mask m(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) m.set(x, y, rng.uniform() < density);
    }
    return m;
}

inline GrayImage random_image(fundus::Rng& rng, int w, int h) {
    GrayImage g(w, h);
    // dyadic levels keep 1 - v exact; few levels make ties and plateaus common
    for (auto& v : g.data()) v = static_cast<float>(rng.integer(0, 16)) / 16.0f;
    return g;
}

inline bool leq(const GrayImage& a, const GrayImage& b) {
    for (std::size_t i = 0; i < a.pixel_count(); ++i) {
        if (a[i] > b[i]) return false;
    }
    return true;
}

inline bool subset(const Mask& a, const Mask& b) {
    for (std::size_t i = 0; i < a.pixel_count(); ++i) {
        if (a[i] && !b[i]) return false;
    }
    return true;
}

inline GrayImage complement(const GrayImage& g) {
    GrayImage out = g;
    for (auto& v : out.data()) v = 1.0f - v;
    return out;
}

inline bool same(const GrayImage& a, const GrayImage& b) {
    for (std::size_t i = 0; i < a.pixel_count(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

struct SuiteResult {
    bool ok = true;
    std::string failure;
    double seconds = 0.0;
};

/// Duality, extensivity, idempotence and increasing-ness on random 16x16 images and masks,
/// plus agreement with the brute-force operators; component partition on random masks.
inline SuiteResult morphology_suite(int cases, int partition_cases, std::uint64_t seed) {
    namespace mo = fundus::morphology;
    const auto t0 = std::chrono::steady_clock::now();
    SuiteResult res;
    auto fail = [&](const std::string& what, int i) {
        if (res.ok) res.failure = what + " (case " + std::to_string(i) + ")";
        res.ok = false;
    };
    fundus::Rng rng(seed);
    for (int i = 0; i < cases && res.ok; ++i) {
        const int r = rng.integer(0, 3);
        const auto se = rng.integer(0, 1) ? StructuringElement::disc(r) : StructuringElement::square(r);
        const GrayImage f = random_image(rng, 16, 16);
        GrayImage g = f;
        for (auto& v : g.data()) v = std::min(1.0f, v + static_cast<float>(rng.integer(0, 3)) / 16.0f);

        const GrayImage d = mo::dilate(f, se);
        const GrayImage e = mo::erode(f, se);
        if (!same(d, morph(f, se, true)) || !same(e, morph(f, se, false))) fail("gray operator differs from brute force", i);
        if (!same(d, complement(mo::erode(complement(f), se)))) fail("gray duality", i);
        if (!leq(e, f) || !leq(f, d)) fail("gray extensivity", i);
        const GrayImage o = mo::open(f, se);
        const GrayImage c = mo::close(f, se);
        if (!leq(o, f) || !leq(f, c)) fail("gray opening/closing extensivity", i);
        if (!same(mo::open(o, se), o) || !same(mo::close(c, se), c)) fail("gray idempotence", i);
        if (!leq(mo::dilate(f, se), mo::dilate(g, se)) || !leq(mo::erode(f, se), mo::erode(g, se)) ||
            !leq(mo::open(f, se), mo::open(g, se)) || !leq(mo::close(f, se), mo::close(g, se))) {
            fail("gray increasing", i);
        }

        const Mask m = random_mask(rng, 16, 16, rng.uniform(0.1, 0.7));
        Mask m2 = m;
        m2 |= random_mask(rng, 16, 16, 0.1);
        const Mask md = mo::dilate(m, se);
        const Mask me = mo::erode(m, se);
        if (!(md == morph(m, se, true)) || !(me == morph(m, se, false))) fail("mask operator differs from brute force", i);
        if (!(md == ~mo::erode(~m, se))) fail("mask duality", i);
        if (!subset(me, m) || !subset(m, md)) fail("mask extensivity", i);
        const Mask mop = mo::open(m, se);
        const Mask mcl = mo::close(m, se);
        if (!subset(mop, m) || !subset(m, mcl)) fail("mask opening/closing extensivity", i);
        if (!(mo::open(mop, se) == mop) || !(mo::close(mcl, se) == mcl)) fail("mask idempotence", i);
        if (!subset(md, mo::dilate(m2, se)) || !subset(me, mo::erode(m2, se)) || !subset(mop, mo::open(m2, se)) ||
            !subset(mcl, mo::close(m2, se))) {
            fail("mask increasing", i);
        }
    }
    for (int i = 0; i < partition_cases && res.ok; ++i) {
        const Mask m = random_mask(rng, rng.integer(1, 24), rng.integer(1, 24), rng.uniform(0.05, 0.9));
        int expected = 0;
        const auto ref = flood_labels(m, expected);
        const auto comps = mo::connected_components(m);
        if (static_cast<int>(comps.size()) != expected) {
            fail("component count", i);
            break;
        }
        std::vector<int> cover(m.pixel_count(), 0);
        for (std::size_t c = 0; c < comps.size(); ++c) {
            for (const auto& p : comps[c].pixels) {
                const auto idx = m.index(p.x, p.y);
                if (!m[idx] || cover[idx]) fail("components overlap or leave the mask", i);
                cover[idx] = static_cast<int>(c) + 1;
                // same component as the oracle, up to relabelling in first-pixel order
                if (ref[idx] != static_cast<int>(c) + 1) fail("component membership", i);
            }
            if (comps[c].area != comps[c].pixels.size()) fail("component area", i);
        }
        for (std::size_t idx = 0; idx < m.pixel_count(); ++idx) {
            if (m[idx] && !cover[idx]) fail("mask pixel left uncovered", i);
        }
    }
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return res;
}

} // namespace oracle
