#include "fundus/landmarks.hpp"

#include "fundus/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fundus::landmarks {

namespace morph = fundus::morphology;

std::string to_string(MaculaMethod m) {
    return m == MaculaMethod::DarkestRegion ? "darkest-region" : "geometric";
}

MaculaMethod macula_method_from_string(const std::string& s) {
    if (s == "darkest-region") return MaculaMethod::DarkestRegion;
    if (s == "geometric") return MaculaMethod::Geometric;
    throw InvalidInput("unknown macula method: " + s);
}

std::string to_string(GeometryReason r) {
    switch (r) {
    case GeometryReason::Ok: return "ok";
    case GeometryReason::DiscCentered: return "disc-centered";
    case GeometryReason::DiscMissing: return "disc-missing";
    }
    return "unknown";
}

namespace {

int kernel_radius(const FieldGeometry& field, const LandmarkConfig& cfg) {
    return std::max(1, static_cast<int>(std::lround(cfg.vessel_kernel_scale * field.radius)));
}

double prior_radius(const FieldGeometry& field, const LandmarkConfig& cfg) {
    return cfg.disc_size_prior * field.radius;
}

double median_of(std::vector<float> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

struct Scored {
    const DiscCandidate* cand = nullptr;
    double score = 0.0;
    double prior = 0.0;
    double prominence = 0.0;
};

// Best viable candidate by normalized mean intensity times the size prior.
std::optional<Scored> best_candidate(const std::vector<DiscCandidate>& candidates, const GrayImage& img,
                                     const FieldGeometry& field, const LandmarkConfig& cfg) {
    const Mask roi = preprocess::signal_mask(img, field);
    if (!roi.any()) return std::nullopt;
    const auto bounds = percentiles(img, {0.05, 0.25, 0.75, 0.999}, &roi);
    const double lo = bounds[0];
    const double hi = bounds[3];
    const double iqr = bounds[2] - bounds[1];
    if (!(hi > lo) || !(iqr > 0.0)) return std::nullopt;
    auto norm = [&](double v) { return (v - lo) / (hi - lo); };

    const double r_prior = prior_radius(field, cfg);
    std::optional<Scored> best;
    for (const auto& c : candidates) {
        if (c.border_adjacent) continue;
        const auto& reg = c.region;
        const double r_eq = reg.equivalent_diameter() / 2.0;
        const double ratio = r_eq / r_prior;
        if (ratio < cfg.size_ratio_min || ratio > cfg.size_ratio_max) continue;

        // Mean of the surrounding annulus [1.5, 2.5] equivalent radii.
        double sum = 0.0;
        std::size_t n = 0;
        const double r_in = 1.5 * r_eq;
        const double r_out = 2.5 * r_eq;
        const int x0 = std::max(0, static_cast<int>(std::floor(reg.cx - r_out)));
        const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(reg.cx + r_out)));
        const int y0 = std::max(0, static_cast<int>(std::floor(reg.cy - r_out)));
        const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(reg.cy + r_out)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double d = std::hypot(x - reg.cx, y - reg.cy);
                if (d < r_in || d > r_out || !roi.at(x, y)) continue;
                sum += img.at(x, y);
                ++n;
            }
        }
        if (n == 0) continue;
        const double mean = norm(reg.mean_intensity);
        // Contrast against the surround in interquartile ranges of the field.
        const double prominence = (reg.mean_intensity - sum / static_cast<double>(n)) / iqr;
        if (prominence < cfg.min_prominence) continue;

        const double lr = std::log(ratio);
        const double prior = std::exp(-lr * lr / (2.0 * cfg.size_prior_sigma * cfg.size_prior_sigma));
        const double score = mean * prior;
        if (!best || score > best->score) best = Scored{&c, score, prior, prominence};
    }
    return best;
}

} // namespace

GrayImage suppress_vessels(const GrayImage& img, const FieldGeometry& field, const LandmarkConfig& cfg) {
    return morph::close(img, morph::StructuringElement::disc(kernel_radius(field, cfg)));
}

std::vector<DiscCandidate> detect_disc_candidates(const GrayImage& img, const FieldGeometry& field,
                                                  const LandmarkConfig& cfg) {
    std::vector<DiscCandidate> out;
    const Mask roi = preprocess::signal_mask(img, field);
    if (!roi.any()) return out;

    std::vector<double> qs;
    for (int k = 0; k < cfg.disc_scan_levels; ++k) {
        qs.push_back(cfg.disc_scan_high +
                     (cfg.disc_scan_low - cfg.disc_scan_high) * k / std::max(1, cfg.disc_scan_levels - 1));
    }
    std::vector<double> levels;
    for (double v : percentiles(img, qs, &roi)) {
        if (levels.empty() || v < levels.back()) levels.push_back(v);
    }
    const auto scan = morph::threshold_scan(img, levels, morph::Polarity::Above, roi);

    const double r_prior = prior_radius(field, cfg);
    const double prior_area = std::numbers::pi * r_prior * r_prior;
    const double max_area = cfg.growth_limit * prior_area;
    const auto min_area = static_cast<std::size_t>(std::max(4.0, 0.02 * prior_area));

    // Thresholds are nested: a region at a looser level contains every earlier region it
    // touches. Each distinct version of a region up to the growth limit is kept, so selection
    // can pick the level at which the disc is best delineated.
    std::vector<morph::Region> kept;
    std::vector<int> owner(img.pixel_count(), -1);
    std::vector<std::size_t> live;  // indices into kept still growing
    for (const auto& level : scan) {
        for (std::size_t r = 0; r < level.regions.size(); ++r) {
            for (const auto& p : level.regions[r].pixels) owner[img.index(p.x, p.y)] = static_cast<int>(r);
        }
        std::vector<std::size_t> prev_area(level.regions.size(), 0);
        // Live entry whose region did not change at this level, if any.
        constexpr auto kNone = static_cast<std::size_t>(-1);
        std::vector<std::size_t> same(level.regions.size(), kNone);
        for (auto k : live) {
            const auto& p = kept[k].pixels.front();
            const int o = owner[img.index(p.x, p.y)];
            if (o < 0) continue;
            const auto uo = static_cast<std::size_t>(o);
            prev_area[uo] = std::max(prev_area[uo], kept[k].area);
            if (same[uo] == kNone && kept[k].area == level.regions[uo].area) same[uo] = k;
        }
        std::vector<std::size_t> next_live;
        for (std::size_t r = 0; r < level.regions.size(); ++r) {
            const auto& reg = level.regions[r];
            if (static_cast<double>(reg.area) > max_area) continue;
            if (reg.area == prev_area[r]) {
                // Unchanged since the previous level; keep tracking the existing entry.
                if (same[r] != kNone) next_live.push_back(same[r]);
                continue;
            }
            kept.push_back(reg);
            next_live.push_back(kept.size() - 1);
        }
        for (std::size_t r = 0; r < level.regions.size(); ++r) {
            for (const auto& p : level.regions[r].pixels) owner[img.index(p.x, p.y)] = -1;
        }
        live = std::move(next_live);
    }

    const double inner = (1.0 - cfg.border_band) * field.radius;
    for (auto& reg : kept) {
        if (reg.area < min_area) continue;
        DiscCandidate c;
        c.border_adjacent = std::any_of(reg.pixels.begin(), reg.pixels.end(), [&](const morph::Point& p) {
            return std::hypot(p.x - field.cx, p.y - field.cy) > inner;
        });
        c.region = morph::region_props(std::move(reg), img);
        out.push_back(std::move(c));
    }
    std::stable_sort(out.begin(), out.end(), [](const DiscCandidate& a, const DiscCandidate& b) {
        const auto& pa = a.region.pixels.front();
        const auto& pb = b.region.pixels.front();
        if (pa.y != pb.y) return pa.y < pb.y;
        if (pa.x != pb.x) return pa.x < pb.x;
        return a.region.area < b.region.area;
    });
    return out;
}

DiscLandmark select_disc(const std::vector<DiscCandidate>& candidates, const GrayImage& img,
                         const FieldGeometry& field, const LandmarkConfig& cfg) {
    const auto best = best_candidate(candidates, img, field, cfg);
    if (!best) throw DiscMissingError("no disc candidate survived selection");
    const auto& reg = best->cand->region;

    DiscLandmark disc;
    disc.x = reg.cx;
    disc.y = reg.cy;
    disc.radius = reg.equivalent_diameter() / 2.0;
    disc.confidence = best->prior * std::clamp(best->prominence / (2.0 * cfg.min_prominence), 0.0, 1.0);

    // Slightly brightened image must yield (nearly) the same disc.
    const GrayImage bright = brighten(img, static_cast<float>(cfg.brighten_delta));
    const auto again = detect_disc_candidates(bright, field, cfg);
    const auto best2 = best_candidate(again, bright, field, cfg);
    disc.stable = best2 && std::hypot(best2->cand->region.cx - disc.x, best2->cand->region.cy - disc.y) <=
                               cfg.stability_shift * disc.radius;
    if (!disc.stable) disc.confidence *= 0.5;
    return disc;
}

DiscLandmark detect_disc(const GrayImage& working, const FieldGeometry& field, const LandmarkConfig& cfg) {
    const GrayImage sup = suppress_vessels(working, field, cfg);
    return select_disc(detect_disc_candidates(sup, field, cfg), sup, field, cfg);
}

GeometryVerdict validate_geometry(const std::optional<DiscLandmark>& disc, const FieldGeometry& field,
                                  const LandmarkConfig& cfg) {
    if (!disc) return {false, GeometryReason::DiscMissing};
    if (std::hypot(disc->x - field.cx, disc->y - field.cy) < cfg.center_exclusion * field.radius) {
        return {false, GeometryReason::DiscCentered};
    }
    return {true, GeometryReason::Ok};
}

MaculaLandmark geometric_macula(const DiscLandmark& disc, const FieldGeometry& field, const LandmarkConfig& cfg) {
    double ux = field.cx - disc.x;
    double uy = field.cy - disc.y;
    const double n = std::hypot(ux, uy);
    if (n < 1e-9) {
        ux = 1.0;
        uy = 0.0;
    } else {
        ux /= n;
        uy /= n;
    }
    const double d = cfg.macula_distance_diameters * 2.0 * disc.radius;
    return {disc.x + d * ux, disc.y + d * uy, MaculaMethod::Geometric, 0.4};
}

MaculaLandmark detect_macula(const GrayImage& working, const DiscLandmark& disc, const FieldGeometry& field,
                             const LandmarkConfig& cfg, const GrayImage* suppressed) {
    const MaculaLandmark geo = geometric_macula(disc, field, cfg);
    const int w = working.width();
    const int h = working.height();
    const Mask roi = preprocess::signal_mask(working, field);
    if (!roi.any()) return geo;

    const GrayImage sup = suppressed ? *suppressed : suppress_vessels(working, field, cfg);
    const int big = std::max(1, static_cast<int>(std::lround(cfg.large_blur_scale * field.radius)));
    const GrayImage bg = smooth_masked(sup, roi, big);
    GrayImage flat(w, h, 0.5f);
    for (std::size_t i = 0; i < flat.pixel_count(); ++i) {
        if (roi[i]) flat[i] = sup[i] - bg[i] + 0.5f;
    }
    const int small = std::max(1, static_cast<int>(std::lround(disc.radius)));
    const GrayImage sm = smooth_masked(flat, roi, small);

    // Search beyond the disc along the disc -> field-center axis, away from the rim.
    const double ux = (geo.x - disc.x) / std::max(1e-9, std::hypot(geo.x - disc.x, geo.y - disc.y));
    const double uy = (geo.y - disc.y) / std::max(1e-9, std::hypot(geo.x - disc.x, geo.y - disc.y));
    const double inner = (1.0 - cfg.border_band) * field.radius;
    Mask search(w, h);
    std::vector<float> values;
    int min_x = -1;
    int min_y = -1;
    float min_v = 2.0f;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!roi.at(x, y) || std::hypot(x - field.cx, y - field.cy) > inner) continue;
            if ((x - disc.x) * ux + (y - disc.y) * uy < cfg.macula_search_offset * disc.radius) continue;
            search.set(x, y);
            const float v = sm.at(x, y);
            values.push_back(v);
            if (v < min_v) {
                min_v = v;
                min_x = x;
                min_y = y;
            }
        }
    }
    if (values.empty()) return geo;

    const double med = median_of(values);
    for (auto& v : values) v = static_cast<float>(std::abs(v - med));
    const double mad = median_of(values);
    const double depth = med - min_v;
    if (!(mad > 0.0) || depth < cfg.macula_min_depth * mad) return geo;

    Mask low(w, h);
    const double cut = min_v + depth / 2.0;
    for (std::size_t i = 0; i < low.pixel_count(); ++i) {
        if (search[i] && sm[i] < cut) low.data()[i] = 1;
    }
    const auto labels = morph::label_components(low);
    const int target = labels[sm.index(min_x, min_y)];
    std::vector<morph::Point> pts;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (labels[sm.index(x, y)] == target) pts.push_back({x, y});
        }
    }
    const auto region = morph::region_props(morph::make_region(std::move(pts)));
    if (region.ovalness < cfg.macula_compactness) return geo;

    MaculaLandmark m{region.cx, region.cy, MaculaMethod::DarkestRegion,
                     std::clamp(depth / (2.0 * cfg.macula_min_depth * mad), 0.0, 1.0)};
    if (std::hypot(m.x - geo.x, m.y - geo.y) > cfg.macula_cross_check * disc.radius) m.confidence *= 0.5;
    return m;
}

} // namespace fundus::landmarks
