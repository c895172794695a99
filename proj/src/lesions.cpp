#include "fundus/lesions.hpp"

#include "fundus/error.hpp"
#include "fundus/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_map>

namespace fundus::lesions {

namespace {

using morphology::Point;
using morphology::Polarity;
using morphology::StructuringElement;

int small_radius(const FieldGeometry& field, const LesionConfig& cfg) {
    return std::max(1, static_cast<int>(std::lround(cfg.small_blur_scale * field.radius)));
}

double median_of(std::vector<float> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

struct RobustStats {
    double median = 0.5;
    double sigma = 0.0;
};

RobustStats robust_stats(const GrayImage& img, const Mask& roi) {
    std::vector<float> vals;
    vals.reserve(roi.count());
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        if (roi[i]) vals.push_back(img[i]);
    }
    if (vals.empty()) return {};
    RobustStats s;
    s.median = median_of(vals);
    for (auto& v : vals) v = std::abs(v - static_cast<float>(s.median));
    s.sigma = 1.4826 * median_of(std::move(vals));
    return s;
}

/// Hysteresis tracking across a threshold schedule. A component seeds an object when its mean
/// contrast reaches seed_sigma; a component touching existing objects replaces them only while
/// its newly added pixels keep grow_sigma of contrast, so noise and bridges stay out.
std::vector<Region> track_objects(const GrayImage& img, const Mask& roi, const std::vector<double>& levels,
                                  Polarity polarity, const LesionConfig& cfg) {
    const RobustStats st = robust_stats(img, roi);
    const double sigma = std::max(st.sigma, 1e-4);
    const double sign = polarity == Polarity::Below ? -1.0 : 1.0;
    auto contrast = [&](double mean) { return sign * (mean - st.median) / sigma; };

    const int w = img.width();
    std::vector<int> owner(img.pixel_count(), -1);
    std::vector<std::vector<Point>> objects;

    for (const auto& level : morphology::threshold_scan(img, levels, polarity, roi)) {
        for (const auto& comp : level.regions) {
            std::vector<int> touched;
            double sum_new = 0.0;
            std::size_t n_new = 0;
            double sum_all = 0.0;
            for (const auto& p : comp.pixels) {
                const auto i = static_cast<std::size_t>(p.y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(p.x);
                sum_all += img[i];
                if (owner[i] >= 0) {
                    if (std::find(touched.begin(), touched.end(), owner[i]) == touched.end()) touched.push_back(owner[i]);
                } else {
                    sum_new += img[i];
                    ++n_new;
                }
            }
            if (touched.empty()) {
                if (comp.area < cfg.min_area) continue;
                if (contrast(sum_all / static_cast<double>(comp.area)) < cfg.seed_sigma) continue;
            } else {
                if (n_new == 0 && touched.size() == 1) continue;
                if (n_new > 0 && contrast(sum_new / static_cast<double>(n_new)) < cfg.grow_sigma) continue;
            }
            const int id = touched.empty() ? static_cast<int>(objects.size()) : touched.front();
            if (touched.empty()) objects.emplace_back();
            for (std::size_t t = 1; t < touched.size(); ++t) objects[static_cast<std::size_t>(touched[t])].clear();
            objects[static_cast<std::size_t>(id)] = comp.pixels;
            for (const auto& p : comp.pixels) {
                owner[static_cast<std::size_t>(p.y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(p.x)] = id;
            }
        }
    }

    std::vector<Region> out;
    for (auto& px : objects) {
        if (px.empty()) continue;
        std::sort(px.begin(), px.end(), [](const Point& a, const Point& b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
        out.push_back(morphology::region_props(morphology::make_region(std::move(px)), img));
    }
    std::sort(out.begin(), out.end(), [](const Region& a, const Region& b) {
        const auto& pa = a.pixels.front();
        const auto& pb = b.pixels.front();
        return pa.y != pb.y ? pa.y < pb.y : pa.x < pb.x;
    });
    return out;
}

// Largest 4-connected part of an 8-connected object. Single pixels hanging on by a corner
// inflate the edge-count perimeter of small blobs enough to fail the oval test.
Region core4(const Region& obj, const GrayImage& img) {
    const int bw = obj.bbox.width();
    const int bh = obj.bbox.height();
    std::vector<int> label(static_cast<std::size_t>(bw) * static_cast<std::size_t>(bh), -1);
    auto at = [&](int x, int y) -> int& {
        return label[static_cast<std::size_t>(y - obj.bbox.y0) * static_cast<std::size_t>(bw) +
                     static_cast<std::size_t>(x - obj.bbox.x0)];
    };
    for (const auto& p : obj.pixels) at(p.x, p.y) = 0;
    std::vector<std::vector<Point>> parts;
    std::vector<Point> stack;
    for (const auto& seed : obj.pixels) {
        if (at(seed.x, seed.y) != 0) continue;
        parts.emplace_back();
        const int id = static_cast<int>(parts.size());
        at(seed.x, seed.y) = id;
        stack.push_back(seed);
        while (!stack.empty()) {
            const Point p = stack.back();
            stack.pop_back();
            parts.back().push_back(p);
            const Point nb[4] = {{p.x - 1, p.y}, {p.x + 1, p.y}, {p.x, p.y - 1}, {p.x, p.y + 1}};
            for (const auto& q : nb) {
                if (q.x < obj.bbox.x0 || q.x > obj.bbox.x1 || q.y < obj.bbox.y0 || q.y > obj.bbox.y1) continue;
                if (at(q.x, q.y) != 0) continue;
                at(q.x, q.y) = id;
                stack.push_back(q);
            }
        }
    }
    if (parts.size() <= 1) return obj;
    auto best = std::max_element(parts.begin(), parts.end(),
                                 [](const auto& a, const auto& b) { return a.size() < b.size(); });
    std::sort(best->begin(), best->end(), [](const Point& a, const Point& b) { return a.y != b.y ? a.y < b.y : a.x < b.x; });
    return morphology::region_props(morphology::make_region(std::move(*best)), img);
}

std::vector<double> schedule(const GrayImage& img, const Mask& roi, double from, double to, int n) {
    std::vector<double> qs;
    for (int i = 0; i < n; ++i) qs.push_back(from + (to - from) * i / std::max(1, n - 1));
    std::vector<double> levels = percentiles(img, qs, &roi);
    // threshold_scan needs strictly monotone levels
    const bool ascending = to > from;
    std::vector<double> out;
    for (double v : levels) {
        if (out.empty() || (ascending ? v > out.back() : v < out.back())) out.push_back(v);
    }
    return out;
}

std::vector<Region> dark_objects(const GrayImage& img, const Mask& roi, const LesionConfig& cfg) {
    if (roi.count() == 0) return {};
    const auto levels = schedule(img, roi, cfg.dark_low, cfg.dark_high, cfg.dark_levels);
    return track_objects(img, roi, levels, Polarity::Below, cfg);
}

bool near_disc(const Region& r, const DiscLandmark& disc, double reach) {
    const double r2 = reach * reach;
    return std::any_of(r.pixels.begin(), r.pixels.end(), [&](const Point& p) {
        const double dx = p.x - disc.x;
        const double dy = p.y - disc.y;
        return dx * dx + dy * dy <= r2;
    });
}

double disc_attach_reach(const DiscLandmark& disc, const FieldGeometry& field, const LesionConfig& cfg) {
    return disc_zone_radius(disc, field, cfg) + 2.0 * cfg.vessel_kernel_scale * field.radius;
}

int quadrant(double x, double y, const FieldGeometry& field) {
    return (x >= field.cx ? 1 : 0) + (y >= field.cy ? 2 : 0);
}

} // namespace

double disc_zone_radius(const DiscLandmark& disc, const FieldGeometry& field, const LesionConfig& cfg) {
    return disc.radius * (1.0 + cfg.disc_margin) + small_radius(field, cfg);
}

GrayImage lesion_channel(const GrayImage& normalized, const Mask& roi, const FieldGeometry& field,
                         const LesionConfig& cfg) {
    if (roi.width() != normalized.width() || roi.height() != normalized.height()) {
        throw InvalidInput("roi size does not match image");
    }
    const int radius = small_radius(field, cfg);
    auto background = [&](const Mask& support) {
        GrayImage vals(normalized.width(), normalized.height());
        GrayImage weight(normalized.width(), normalized.height());
        for (std::size_t i = 0; i < normalized.pixel_count(); ++i) {
            if (!support[i]) continue;
            vals[i] = normalized[i];
            weight[i] = 1.0f;
        }
        GrayImage sv = smooth(vals, radius);
        const GrayImage sw = smooth(weight, radius);
        for (std::size_t i = 0; i < sv.pixel_count(); ++i) sv[i] = sw[i] > 1e-6f ? sv[i] / sw[i] : -1.0f;
        return sv;
    };

    const GrayImage bg1 = background(roi);
    GrayImage resid(normalized.width(), normalized.height(), 0.5f);
    for (std::size_t i = 0; i < resid.pixel_count(); ++i) {
        if (roi[i] && bg1[i] >= 0.0f) resid[i] = normalized[i] - bg1[i] + 0.5f;
    }
    const RobustStats st = robust_stats(resid, roi);
    Mask support = roi;
    for (std::size_t i = 0; i < resid.pixel_count(); ++i) {
        if (roi[i] && std::abs(resid[i] - st.median) > 2.5 * st.sigma) support.data()[i] = 0;
    }
    const GrayImage bg2 = background(support);

    GrayImage out(normalized.width(), normalized.height(), 0.5f);
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        if (!roi[i]) continue;
        const float bg = bg2[i] >= 0.0f ? bg2[i] : bg1[i];
        if (bg >= 0.0f) out[i] = std::clamp(normalized[i] - bg + 0.5f, 0.0f, 1.0f);
    }
    return out;
}

Mask analysis_roi(const GrayImage& normalized, const FieldGeometry& field, const DiscLandmark& disc,
                  const std::optional<MaculaLandmark>& macula, const LesionConfig& cfg) {
    Mask roi = preprocess::signal_mask(normalized, field);
    const double inner = field.radius * (1.0 - cfg.edge_band);
    const double zone = disc_zone_radius(disc, field, cfg);
    const double core = macula ? cfg.macula_core * disc.radius : 0.0;
    for (int y = 0; y < roi.height(); ++y) {
        for (int x = 0; x < roi.width(); ++x) {
            if (!roi.at(x, y)) continue;
            const double fx = x - field.cx;
            const double fy = y - field.cy;
            const double dx = x - disc.x;
            const double dy = y - disc.y;
            bool keep = fx * fx + fy * fy <= inner * inner && dx * dx + dy * dy > zone * zone;
            if (keep && macula) {
                const double mx = x - macula->x;
                const double my = y - macula->y;
                keep = mx * mx + my * my > core * core;
            }
            if (!keep) roi.set(x, y, false);
        }
    }
    return roi;
}

Mask segment_vessels(const GrayImage& img, const Mask& roi, const FieldGeometry& field, const DiscLandmark& disc,
                     const LesionConfig& cfg) {
    Mask mask(img.width(), img.height());
    const double reach = disc_attach_reach(disc, field, cfg);
    for (const auto& obj : dark_objects(img, roi, cfg)) {
        if (obj.ovalness < cfg.oval_max_vessel || near_disc(obj, disc, reach)) morphology::paint(mask, obj);
    }
    return mask;
}

DarkLesions classify_dark_lesions(const GrayImage& img, const Mask& roi, const Mask& vessel_mask,
                                  const FieldGeometry& field, const DiscLandmark& disc, const LesionConfig& cfg) {
    const Mask near_vessel = morphology::dilate(vessel_mask, StructuringElement::square(cfg.vessel_proximity));
    Mask search = roi;
    search.subtract(vessel_mask);

    // Vessel widths come from the vessel mask's own components.
    struct Piece {
        double cx, cy, width;
    };
    std::vector<Piece> pieces;
    for (auto& r : morphology::connected_components(vessel_mask)) {
        if (r.area < cfg.min_area) continue;
        const Region p = morphology::region_props(std::move(r));
        pieces.push_back({p.cx, p.cy, p.mean_width});
    }
    std::vector<double> all_widths;
    for (const auto& p : pieces) all_widths.push_back(p.width);
    auto median = [](std::vector<double> v) {
        if (v.empty()) return 0.0;
        std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2), v.end());
        return v[v.size() / 2];
    };
    const double global_width = median(all_widths);
    const double local_r = cfg.local_vessel_radius * field.radius;

    const double ma_diameter = cfg.ma_max_diameter * disc.radius;
    DarkLesions out;
    for (const auto& raw : dark_objects(img, search, cfg)) {
        if (morphology::intersects(raw, near_vessel)) continue;
        Region obj = core4(raw, img);
        if (obj.area < cfg.min_area) continue;
        if (obj.ovalness < cfg.oval_min_lesion) continue;
        if (obj.equivalent_diameter() <= ma_diameter) {
            out.microaneurysms.push_back(std::move(obj));
            continue;
        }
        std::vector<double> local;
        for (const auto& p : pieces) {
            if (std::hypot(p.cx - obj.cx, p.cy - obj.cy) <= local_r) local.push_back(p.width);
        }
        const double vessel_width = local.empty() ? global_width : median(local);
        if (obj.mean_width > cfg.hemorrhage_width_ratio * vessel_width) out.hemorrhages.push_back(std::move(obj));
    }
    return out;
}

double scatter_baseline(std::size_t n, double radius, int draws, std::uint64_t seed) {
    if (n < 2 || draws < 1) return 0.0;
    Rng rng(seed);
    std::vector<double> xs(n), ys(n);
    double total = 0.0;
    for (int d = 0; d < draws; ++d) {
        for (std::size_t i = 0; i < n; ++i) {
            const double rho = radius * std::sqrt(rng.uniform());
            const double th = 2.0 * std::numbers::pi * rng.uniform();
            xs[i] = rho * std::cos(th);
            ys[i] = rho * std::sin(th);
        }
        double sum = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = i + 1; j < n; ++j) sum += std::hypot(xs[i] - xs[j], ys[i] - ys[j]);
        }
        total += sum / (static_cast<double>(n) * static_cast<double>(n - 1) / 2.0);
    }
    return total / draws;
}

ClusterStats cluster_stats(const std::vector<Region>& regions, const MaculaLandmark& macula) {
    ClusterStats s;
    s.member_count = regions.size();
    if (regions.empty()) return s;
    double to_macula = 0.0;
    for (const auto& r : regions) to_macula += std::hypot(r.cx - macula.x, r.cy - macula.y);
    s.mean_distance_to_macula = to_macula / static_cast<double>(regions.size());
    if (regions.size() >= 2) {
        double sum = 0.0;
        for (std::size_t i = 0; i < regions.size(); ++i) {
            for (std::size_t j = i + 1; j < regions.size(); ++j) {
                sum += std::hypot(regions[i].cx - regions[j].cx, regions[i].cy - regions[j].cy);
            }
        }
        const double pairs = static_cast<double>(regions.size()) * static_cast<double>(regions.size() - 1) / 2.0;
        s.mean_pairwise_distance = sum / pairs;
    }
    return s;
}

BrightLesions detect_bright_lesions(const GrayImage& img, const Mask& roi, const FieldGeometry& field,
                                    const DiscLandmark& disc, const MaculaLandmark& macula, const LesionConfig& cfg) {
    BrightLesions out;
    if (roi.count() == 0) return out;
    const auto levels = schedule(img, roi, cfg.bright_high, cfg.bright_low, cfg.bright_levels);
    std::vector<Region> candidates = track_objects(img, roi, levels, Polarity::Above, cfg);
    if (candidates.empty()) return out;

    ClusterStats stats = cluster_stats(candidates, macula);
    stats.scatter_baseline = scatter_baseline(candidates.size(), field.radius * (1.0 - cfg.edge_band),
                                              cfg.baseline_draws, cfg.baseline_seed);
    out.cluster = stats;

    const double reach = cfg.exudate_cluster_radius * 2.0 * disc.radius;
    const bool clustered = candidates.size() >= 2 && stats.mean_distance_to_macula <= reach &&
                           stats.mean_pairwise_distance < cfg.scatter_ratio * stats.scatter_baseline;
    for (auto& c : candidates) {
        const bool member = clustered && std::hypot(c.cx - macula.x, c.cy - macula.y) <= reach;
        (member ? out.hard_exudates : out.bright_unclassified).push_back(std::move(c));
    }
    return out;
}

DRGrade grade(const LesionSet& lesions, const preprocess::QualityReport& quality, const FieldGeometry& field,
              const MaculaLandmark& macula, const DiscLandmark& disc, const LesionConfig& cfg) {
    DRGrade g;
    const auto n_hem = lesions.hemorrhages.size();
    const auto n_ma = lesions.microaneurysms.size();
    const auto n_ex = lesions.hard_exudates.size();

    bool seen[4] = {false, false, false, false};
    for (const auto& h : lesions.hemorrhages) seen[quadrant(h.cx, h.cy, field)] = true;
    const int quadrants = static_cast<int>(std::count(std::begin(seen), std::end(seen), true));

    if (n_hem >= static_cast<std::size_t>(cfg.severe_hemorrhages) && quadrants >= cfg.severe_quadrants) {
        g.level = 3;
    } else if (n_hem > 0 || n_ex > 0) {
        g.level = 2;
    } else if (n_ma > 0) {
        g.level = 1;
    }

    const double reach = cfg.exudate_cluster_radius * 2.0 * disc.radius;
    auto near_macula = [&](const std::vector<Region>& rs) {
        return std::any_of(rs.begin(), rs.end(),
                           [&](const Region& r) { return std::hypot(r.cx - macula.x, r.cy - macula.y) <= reach; });
    };
    const bool exudate_near_macula = near_macula(lesions.hard_exudates) || near_macula(lesions.bright_unclassified);
    const bool forced_review = quality.retained_fraction < cfg.review_retained_below;

    g.referral = g.level >= 2 || (g.level >= 1 && exudate_near_macula) || forced_review;

    std::ostringstream why;
    why << n_hem << " hemorrhage(s) in " << quadrants << " quadrant(s), " << n_ma << " microaneurysm(s), " << n_ex
        << " hard exudate(s)";
    if (!lesions.bright_unclassified.empty()) why << ", " << lesions.bright_unclassified.size() << " unclassified bright";
    why << "; level " << g.level;
    if (g.level >= 2) {
        why << ", referral";
    } else if (g.referral && exudate_near_macula && g.level >= 1) {
        why << ", referral: exudates near macula";
    } else if (forced_review) {
        why << ", referral: reduced field forces review";
    }
    g.rationale = why.str();
    return g;
}

LesionSet detect_lesions(const GrayImage& normalized, const FieldGeometry& field, const DiscLandmark& disc,
                         const MaculaLandmark& macula, const LesionConfig& cfg) {
    LesionSet set;
    const Mask roi = analysis_roi(normalized, field, disc, macula, cfg);
    const GrayImage channel = lesion_channel(normalized, roi, field, cfg);

    set.vessel_mask = segment_vessels(channel, roi, field, disc, cfg);
    auto dark = classify_dark_lesions(channel, roi, set.vessel_mask, field, disc, cfg);
    set.hemorrhages = std::move(dark.hemorrhages);
    set.microaneurysms = std::move(dark.microaneurysms);

    Mask bright_roi = roi;
    bright_roi.subtract(morphology::dilate(set.vessel_mask, StructuringElement::square(cfg.vessel_proximity)));
    for (const auto& h : set.hemorrhages) {
        for (const auto& p : h.pixels) bright_roi.set(p.x, p.y, false);
    }
    for (const auto& m : set.microaneurysms) {
        for (const auto& p : m.pixels) bright_roi.set(p.x, p.y, false);
    }
    auto bright = detect_bright_lesions(channel, bright_roi, field, disc, macula, cfg);
    set.hard_exudates = std::move(bright.hard_exudates);
    set.bright_unclassified = std::move(bright.bright_unclassified);
    set.cluster = bright.cluster;
    return set;
}

} // namespace fundus::lesions
