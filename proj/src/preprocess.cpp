#include "fundus/preprocess.hpp"

#include "fundus/error.hpp"
#include "fundus/morphology.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

namespace fundus::preprocess {

namespace morph = fundus::morphology;

std::string to_string(DefectKind kind) {
    switch (kind) {
    case DefectKind::Overexposure: return "overexposure";
    case DefectKind::Underexposure: return "underexposure";
    case DefectKind::RainbowArtifact: return "rainbow-artifact";
    case DefectKind::EyelashOcclusion: return "eyelash-occlusion";
    case DefectKind::Blur: return "blur";
    case DefectKind::BadGeometry: return "bad-geometry";
    }
    return "unknown";
}

std::string to_string(DefectLocation location) {
    switch (location) {
    case DefectLocation::Top: return "top";
    case DefectLocation::Bottom: return "bottom";
    case DefectLocation::Global: return "global";
    }
    return "unknown";
}

DefectKind defect_kind_from_string(const std::string& s) {
    for (auto k : {DefectKind::Overexposure, DefectKind::Underexposure, DefectKind::RainbowArtifact,
                   DefectKind::EyelashOcclusion, DefectKind::Blur, DefectKind::BadGeometry}) {
        if (to_string(k) == s) return k;
    }
    throw InvalidInput("unknown defect kind: " + s);
}

DefectLocation defect_location_from_string(const std::string& s) {
    for (auto l : {DefectLocation::Top, DefectLocation::Bottom, DefectLocation::Global}) {
        if (to_string(l) == s) return l;
    }
    throw InvalidInput("unknown defect location: " + s);
}

namespace {

struct Circle {
    double x = 0.0;
    double y = 0.0;
    double r = 0.0;

    bool covers(double px, double py) const {
        return std::hypot(px - x, py - y) <= r + 1e-7;
    }
};

Circle circle_from(const morph::Point& a, const morph::Point& b) {
    const double cx = (a.x + b.x) / 2.0;
    const double cy = (a.y + b.y) / 2.0;
    return {cx, cy, std::hypot(a.x - cx, a.y - cy)};
}

Circle circle_from(const morph::Point& a, const morph::Point& b, const morph::Point& c) {
    const double bx = b.x - a.x;
    const double by = b.y - a.y;
    const double cx = c.x - a.x;
    const double cy = c.y - a.y;
    const double d = 2.0 * (bx * cy - by * cx);
    if (std::abs(d) < 1e-12) {
        // Collinear: the widest pair spans the circle.
        Circle best = circle_from(a, b);
        for (const Circle& cand : {circle_from(a, c), circle_from(b, c)}) {
            if (cand.r > best.r) best = cand;
        }
        return best;
    }
    const double ux = (cy * (bx * bx + by * by) - by * (cx * cx + cy * cy)) / d;
    const double uy = (bx * (cx * cx + cy * cy) - cx * (bx * bx + by * by)) / d;
    return {ux + a.x, uy + a.y, std::hypot(ux, uy)};
}

// Welzl's minimal enclosing circle, iterative form over a deterministically shuffled copy.
Circle minimal_enclosing_circle(std::vector<morph::Point> pts) {
    std::mt19937 gen(0x5eed);
    for (std::size_t i = pts.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(gen() % i);
        std::swap(pts[i - 1], pts[j]);
    }
    Circle c{static_cast<double>(pts[0].x), static_cast<double>(pts[0].y), 0.0};
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (c.covers(pts[i].x, pts[i].y)) continue;
        c = {static_cast<double>(pts[i].x), static_cast<double>(pts[i].y), 0.0};
        for (std::size_t j = 0; j < i; ++j) {
            if (c.covers(pts[j].x, pts[j].y)) continue;
            c = circle_from(pts[i], pts[j]);
            for (std::size_t k = 0; k < j; ++k) {
                if (!c.covers(pts[k].x, pts[k].y)) c = circle_from(pts[i], pts[j], pts[k]);
            }
        }
    }
    return c;
}

// Row span [first, last] (clamped to the raster) touched by the field circle.
std::pair<int, int> field_rows(const FieldGeometry& field, int height) {
    const int first = std::max(0, static_cast<int>(std::ceil(field.cy - field.radius)));
    const int last = std::min(height - 1, static_cast<int>(std::floor(field.cy + field.radius)));
    return {first, last};
}

// In-field pixel count per row.
std::vector<std::size_t> row_field_counts(const FieldGeometry& field, int width, int height) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(height), 0);
    const double r2 = field.radius * field.radius;
    for (int y = 0; y < height; ++y) {
        const double dy = y - field.cy;
        if (dy * dy > r2) continue;
        const double half = std::sqrt(r2 - dy * dy);
        const int x0 = std::max(0, static_cast<int>(std::floor(field.cx - half)) - 1);
        const int x1 = std::min(width - 1, static_cast<int>(std::ceil(field.cx + half)) + 1);
        std::size_t n = 0;
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - field.cx;
            if (dx * dx + dy * dy <= r2) ++n;
        }
        counts[static_cast<std::size_t>(y)] = n;
    }
    return counts;
}

struct BandScan {
    std::vector<bool> flagged;        // per stratum
    std::vector<std::size_t> hits;    // violating pixels per stratum
    std::vector<std::size_t> total;   // in-field pixels per stratum
};

void add_band_defects(std::vector<Defect>& out, DefectKind kind, const BandScan& scan, std::size_t field_area,
                      bool allow_global_by_fraction) {
    const int n = static_cast<int>(scan.flagged.size());
    std::size_t all_hits = 0;
    int nonempty = 0;
    int flagged = 0;
    for (int s = 0; s < n; ++s) {
        all_hits += scan.hits[static_cast<std::size_t>(s)];
        if (scan.total[static_cast<std::size_t>(s)] > 0) {
            ++nonempty;
            if (scan.flagged[static_cast<std::size_t>(s)]) ++flagged;
        }
    }
    if (flagged == 0) return;
    const double overall = static_cast<double>(all_hits) / static_cast<double>(field_area);
    if (flagged == nonempty || (allow_global_by_fraction && overall >= 0.5)) {
        out.push_back({kind, DefectLocation::Global, std::clamp(overall, 0.0, 1.0)});
        return;
    }

    int first = 0;
    while (first < n && scan.total[static_cast<std::size_t>(first)] == 0) ++first;
    int last = n - 1;
    while (last >= 0 && scan.total[static_cast<std::size_t>(last)] == 0) --last;

    // Violating pixels of a run from the edge plus one neighbouring stratum, which holds the
    // band's ragged boundary. Hits are divided by the violation density of the flagged strata,
    // so a band where only some pixels violate (rainbow hues) still counts by its area.
    auto run_severity = [&](int from, int to, int flagged_from, int flagged_to) {
        std::size_t hits = 0;
        std::size_t span = 0;
        for (int s = std::max(0, std::min(from, to)); s <= std::min(n - 1, std::max(from, to)); ++s) {
            hits += scan.hits[static_cast<std::size_t>(s)];
            span += scan.total[static_cast<std::size_t>(s)];
        }
        std::size_t run_hits = 0;
        std::size_t run_total = 0;
        for (int s = std::min(flagged_from, flagged_to); s <= std::max(flagged_from, flagged_to); ++s) {
            run_hits += scan.hits[static_cast<std::size_t>(s)];
            run_total += scan.total[static_cast<std::size_t>(s)];
        }
        const double density = run_total ? static_cast<double>(run_hits) / static_cast<double>(run_total) : 1.0;
        const double covered = std::min(static_cast<double>(hits) / density, static_cast<double>(span));
        return std::clamp(covered / static_cast<double>(field_area), 0.0, 1.0);
    };

    std::vector<bool> used(static_cast<std::size_t>(n), false);
    int top_end = first;
    while (top_end <= last && scan.flagged[static_cast<std::size_t>(top_end)]) used[static_cast<std::size_t>(top_end++)] = true;
    if (top_end > first) out.push_back({kind, DefectLocation::Top, run_severity(first, top_end, first, top_end - 1)});

    int bottom_start = last;
    while (bottom_start >= top_end && scan.flagged[static_cast<std::size_t>(bottom_start)]) used[static_cast<std::size_t>(bottom_start--)] = true;
    if (bottom_start < last) out.push_back({kind, DefectLocation::Bottom, run_severity(bottom_start, last, bottom_start + 1, last)});

    std::size_t middle = 0;
    for (int s = 0; s < n; ++s) {
        if (scan.flagged[static_cast<std::size_t>(s)] && !used[static_cast<std::size_t>(s)]) middle += scan.hits[static_cast<std::size_t>(s)];
    }
    if (middle > 0) {
        out.push_back({kind, DefectLocation::Global,
                       std::clamp(static_cast<double>(middle) / static_cast<double>(field_area), 0.0, 1.0)});
    }
}

} // namespace

FieldGeometry detect_field(const RasterImage& img, const GateConfig& cfg) {
    Mask bright(img.width(), img.height());
    auto bits = bright.data();
    std::size_t n_bright = 0;
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        if (img.luma(i) > cfg.field_luma_floor) {
            bits[i] = 1;
            ++n_bright;
        }
    }
    if (n_bright == 0) throw FieldDetectionError("no pixel brighter than the field floor");
    if (static_cast<double>(n_bright) >= cfg.full_frame_fraction * static_cast<double>(img.pixel_count())) {
        return {(img.width() - 1) / 2.0, (img.height() - 1) / 2.0, std::min(img.width(), img.height()) / 2.0};
    }

    int count = 0;
    const auto labels = morph::label_components(bright, &count);
    std::vector<std::size_t> sizes(static_cast<std::size_t>(count) + 1, 0);
    for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
    sizes[0] = 0;
    const int largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());

    // Row extremes contain the convex hull, hence determine the enclosing circle.
    std::vector<morph::Point> extremes;
    for (int y = 0; y < img.height(); ++y) {
        int lo = -1;
        int hi = -1;
        for (int x = 0; x < img.width(); ++x) {
            if (labels[img.index(x, y)] == largest) {
                if (lo < 0) lo = x;
                hi = x;
            }
        }
        if (lo >= 0) {
            extremes.push_back({lo, y});
            if (hi != lo) extremes.push_back({hi, y});
        }
    }
    const Circle c = minimal_enclosing_circle(std::move(extremes));
    if (c.r < 1.0) throw FieldDetectionError("bright area too small to be an information field");
    return {c.x, c.y, c.r};
}

CroppedField crop_field(const RasterImage& img, const FieldGeometry& field, double scale) {
    if (!(scale > 0.0) || scale > 1.0) throw InvalidInput("crop scale must lie in (0, 1]");
    CroppedField out{img, {field.cx, field.cy, field.radius * scale}};
    const double r2 = out.field.radius * out.field.radius;
    for (int y = 0; y < img.height(); ++y) {
        const double dy = y - field.cy;
        for (int x = 0; x < img.width(); ++x) {
            const double dx = x - field.cx;
            if (dx * dx + dy * dy > r2) {
                const auto i = img.index(x, y);
                out.image.plane(0)[i] = 0;
                out.image.plane(1)[i] = 0;
                out.image.plane(2)[i] = 0;
            }
        }
    }
    return out;
}

Mask field_mask(const FieldGeometry& field, int width, int height) {
    Mask m(width, height);
    const double r2 = field.radius * field.radius;
    for (int y = 0; y < height; ++y) {
        const double dy = y - field.cy;
        for (int x = 0; x < width; ++x) {
            const double dx = x - field.cx;
            if (dx * dx + dy * dy <= r2) m.set(x, y);
        }
    }
    return m;
}

Mask signal_mask(const GrayImage& img, const FieldGeometry& field) {
    Mask m = field_mask(field, img.width(), img.height());
    for (int y = 0; y < img.height(); ++y) {
        bool lit = false;
        for (int x = 0; x < img.width() && !lit; ++x) lit = m.at(x, y) && img.at(x, y) != 0.0f;
        if (lit) continue;
        for (int x = 0; x < img.width(); ++x) m.set(x, y, false);
    }
    return m;
}

double blur_score(const RasterImage& img, const FieldGeometry& field) {
    // Interior only, so the rim step does not count as sharpness.
    const FieldGeometry inner{field.cx, field.cy, std::max(0.0, field.radius - 3.0)};
    double sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y + 1 < img.height(); ++y) {
        for (int x = 0; x + 1 < img.width(); ++x) {
            if (!inner.contains(x, y)) continue;
            const double l = img.luma(img.index(x, y));
            const double gx = img.luma(img.index(x + 1, y)) - l;
            const double gy = img.luma(img.index(x, y + 1)) - l;
            sum += std::sqrt(gx * gx + gy * gy);
            ++n;
        }
    }
    return n ? sum / static_cast<double>(n) : 0.0;
}

std::vector<Defect> scan_defects(const RasterImage& img, const FieldGeometry& field, const GateConfig& cfg) {
    std::vector<Defect> out;
    const Mask inside = field_mask(field, img.width(), img.height());
    const std::size_t area = inside.count();
    if (area == 0) return out;

    const int n = cfg.strata;
    const double top = field.cy - field.radius;
    const double stratum_h = 2.0 * field.radius / n;
    BandScan over{std::vector<bool>(static_cast<std::size_t>(n)), std::vector<std::size_t>(static_cast<std::size_t>(n)),
                  std::vector<std::size_t>(static_cast<std::size_t>(n))};
    BandScan under = over;
    BandScan rainbow = over;

    for (int y = 0; y < img.height(); ++y) {
        const int s = static_cast<int>(std::floor((y - top) / stratum_h));
        if (s < 0 || s >= n) continue;
        const auto su = static_cast<std::size_t>(s);
        for (int x = 0; x < img.width(); ++x) {
            const auto i = img.index(x, y);
            if (!inside[i]) continue;
            const double l = img.luma(i);
            ++over.total[su];
            if (l > cfg.overexposed_luma) ++over.hits[su];
            if (l < cfg.underexposed_luma) ++under.hits[su];
            const int r = img.plane(0)[i];
            const int g = img.plane(1)[i];
            const int b = img.plane(2)[i];
            if (l > 0.15 && (b - r > cfg.rainbow_hue_margin || g - r > cfg.rainbow_hue_margin)) ++rainbow.hits[su];
        }
    }
    under.total = over.total;
    rainbow.total = over.total;
    for (std::size_t s = 0; s < static_cast<std::size_t>(n); ++s) {
        const double t = static_cast<double>(over.total[s]);
        if (t == 0) continue;
        over.flagged[s] = static_cast<double>(over.hits[s]) / t > cfg.stratum_violation;
        under.flagged[s] = static_cast<double>(under.hits[s]) / t > cfg.stratum_violation;
        rainbow.flagged[s] = static_cast<double>(rainbow.hits[s]) / t > cfg.rainbow_stratum_fraction;
    }
    add_band_defects(out, DefectKind::Overexposure, over, area, true);
    add_band_defects(out, DefectKind::Underexposure, under, area, true);
    add_band_defects(out, DefectKind::RainbowArtifact, rainbow, area, false);

    // Eyelashes: elongated dark regions in the top half that enter from the rim.
    {
        Mask dark(img.width(), img.height());
        const FieldGeometry rim_inner{field.cx, field.cy, field.radius - 3.0};
        for (int y = 0; y < img.height() && y <= field.cy; ++y) {
            for (int x = 0; x < img.width(); ++x) {
                const auto i = img.index(x, y);
                if (inside[i] && img.luma(i) < cfg.eyelash_luma) dark.set(x, y);
            }
        }
        const auto counts = row_field_counts(field, img.width(), img.height());
        int lowest = -1;
        for (auto& region : morph::connected_components(dark)) {
            if (static_cast<double>(region.area) < cfg.eyelash_min_area_fraction * static_cast<double>(area)) continue;
            const bool touches_rim = std::any_of(region.pixels.begin(), region.pixels.end(), [&](const morph::Point& p) {
                return !rim_inner.contains(p.x, p.y);
            });
            if (!touches_rim) continue;
            region = morph::region_props(std::move(region));
            if (region.ovalness >= cfg.eyelash_max_ovalness) continue;
            lowest = std::max(lowest, region.bbox.y1);
        }
        if (lowest >= 0) {
            std::size_t covered = 0;
            for (int y = 0; y <= lowest; ++y) covered += counts[static_cast<std::size_t>(y)];
            out.push_back({DefectKind::EyelashOcclusion, DefectLocation::Top,
                           std::clamp(static_cast<double>(covered) / static_cast<double>(area), 0.0, 1.0)});
        }
    }

    const double score = blur_score(img, field);
    if (score < cfg.blur_floor) {
        out.push_back({DefectKind::Blur, DefectLocation::Global, std::clamp(1.0 - score / cfg.blur_floor, 0.0, 1.0)});
    }
    return out;
}

DefectCrop crop_defects(const RasterImage& img, const FieldGeometry& field, const std::vector<Defect>& defects) {
    DefectCrop out{img, 1.0, 0, 0};
    const auto counts = row_field_counts(field, img.width(), img.height());
    std::size_t area = 0;
    for (auto c : counts) area += c;
    if (area == 0) return out;

    double top_sev = 0.0;
    double bottom_sev = 0.0;
    for (const auto& d : defects) {
        if (d.location == DefectLocation::Top) top_sev = std::max(top_sev, d.severity);
        if (d.location == DefectLocation::Bottom) bottom_sev = std::max(bottom_sev, d.severity);
    }
    if (top_sev <= 0.0 && bottom_sev <= 0.0) return out;

    const auto [first, last] = field_rows(field, img.height());
    // Smallest row count from an edge whose in-field area reaches the target.
    auto rows_for = [&](double sev, bool from_top) {
        if (sev <= 0.0) return 0;
        const double target = sev * static_cast<double>(area);
        std::size_t acc = 0;
        int k = 0;
        for (int step = 0; step <= last - first; ++step) {
            const int y = from_top ? first + step : last - step;
            acc += counts[static_cast<std::size_t>(y)];
            ++k;
            if (static_cast<double>(acc) >= target) break;
        }
        return k;
    };
    out.crop_top = rows_for(top_sev, true);
    out.crop_bottom = rows_for(bottom_sev, false);

    std::size_t removed = 0;
    for (int y = first; y <= last; ++y) {
        const bool cut = (y < first + out.crop_top) || (y > last - out.crop_bottom);
        if (!cut) continue;
        removed += counts[static_cast<std::size_t>(y)];
        for (int x = 0; x < img.width(); ++x) {
            const auto i = img.index(x, y);
            out.image.plane(0)[i] = 0;
            out.image.plane(1)[i] = 0;
            out.image.plane(2)[i] = 0;
        }
    }
    out.retained_fraction = static_cast<double>(area - removed) / static_cast<double>(area);
    return out;
}

Verdict quality_verdict(double retained_fraction, const std::vector<Defect>& defects, const GateConfig& cfg) {
    const double min_retained = 1.0 - cfg.reject_fraction;
    // Tolerance so that a retained fraction printed as 0.70 is not rejected by rounding noise.
    if (retained_fraction < min_retained - 1e-12) {
        char buf[64];
        std::snprintf(buf, sizeof buf, "crop exceeded %g%%", cfg.reject_fraction * 100.0);
        return {false, buf};
    }
    for (const auto& d : defects) {
        const bool gating_kind = d.kind == DefectKind::Blur || d.kind == DefectKind::Overexposure ||
                                 d.kind == DefectKind::Underexposure;
        if (gating_kind && d.location == DefectLocation::Global && d.severity >= cfg.global_reject_severity) {
            char buf[96];
            std::snprintf(buf, sizeof buf, "global %s defect (severity %.2f)", to_string(d.kind).c_str(), d.severity);
            return {false, buf};
        }
    }
    return {true, "ok"};
}

GateResult gate(const RasterImage& img, const GateConfig& cfg) {
    GateResult result;
    FieldGeometry field;
    try {
        field = detect_field(img, cfg);
    } catch (const FieldDetectionError& e) {
        result.report.accepted = false;
        result.report.retained_fraction = 0.0;
        result.report.reason = std::string("field detection failed: ") + e.what();
        return result;
    }
    auto cropped = crop_field(img, field, cfg.crop_scale);
    auto defects = scan_defects(cropped.image, cropped.field, cfg);
    auto dc = crop_defects(cropped.image, cropped.field, defects);

    auto& report = result.report;
    report.defects = std::move(defects);
    report.crop_top = dc.crop_top;
    report.crop_bottom = dc.crop_bottom;
    report.retained_fraction = dc.retained_fraction;
    const Verdict v = quality_verdict(dc.retained_fraction, report.defects, cfg);
    report.accepted = v.accepted;
    report.reason = v.reason;
    result.field = cropped.field;
    if (report.accepted) result.image = std::move(dc.image);
    return result;
}

GrayImage normalize(const RasterImage& img, const Mask& roi, const NormalizeConfig& cfg) {
    const GrayImage fused = fuse_channels(adjust_levels(img, cfg.saturation_gain, cfg.contrast_gain), cfg.weights);
    GrayImage out = equalize_histogram(fused, cfg.bins, &roi);
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        if (!roi[i]) out[i] = 0.0f;
    }
    return out;
}

GrayImage normalize(const RasterImage& img, const FieldGeometry& field, const NormalizeConfig& cfg) {
    return normalize(img, field_mask(field, img.width(), img.height()), cfg);
}

} // namespace fundus::preprocess
