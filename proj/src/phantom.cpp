#include "fundus/phantom.hpp"

#include "fundus/codec.hpp"
#include "fundus/error.hpp"
#include "fundus/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

namespace fundus::phantom {

namespace {

constexpr double kPi = std::numbers::pi;

struct Rgb {
    double r, g, b;
};

// Float working canvas.
struct Canvas {
    int w = 0;
    int h = 0;
    std::vector<float> r, g, b;

    Canvas(int width, int height)
        : w(width), h(height), r(static_cast<std::size_t>(width) * height), g(r.size()), b(r.size()) {}

    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x); }

    void blend(std::size_t i, const Rgb& c, double a) {
        r[i] = static_cast<float>(r[i] + (c.r - r[i]) * a);
        g[i] = static_cast<float>(g[i] + (c.g - g[i]) * a);
        b[i] = static_cast<float>(b[i] + (c.b - b[i]) * a);
    }
    void darken(std::size_t i, const Rgb& k, double a) {
        r[i] = static_cast<float>(r[i] * (1.0 - k.r * a));
        g[i] = static_cast<float>(g[i] * (1.0 - k.g * a));
        b[i] = static_cast<float>(b[i] * (1.0 - k.b * a));
    }
};

struct Segment {
    double x0, y0, x1, y1, width;
};

struct Scene {
    FieldGeometry field;     // imaged field
    FieldGeometry analysis;  // 0.9 radius
    double disc_x = 0, disc_y = 0, disc_r = 0;
    double mac_x = 0, mac_y = 0;
    double ux = 1, uy = 0;   // unit vector disc -> macula
};

const Rgb kVesselDarkening{0.15, 0.45, 0.38};
const Rgb kRedLesionDarkening{0.30, 0.58, 0.52};
const Rgb kExudateColor{250.0, 232.0, 95.0};

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

double dist_to_segment(double px, double py, const Segment& s) {
    const double vx = s.x1 - s.x0;
    const double vy = s.y1 - s.y0;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((px - s.x0) * vx + (py - s.y0) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    return std::hypot(px - (s.x0 + t * vx), py - (s.y0 + t * vy));
}

void grow_vessel(std::vector<Segment>& out, Rng& rng, const Scene& sc, double x, double y, double heading,
                 double length, double width, int depth) {
    constexpr double step = 4.0;
    const int steps = std::max(2, static_cast<int>(length / step));
    const double curvature = rng.uniform(-1.0, 1.0) * 0.8 / length;
    const double keepout = 1.7 * sc.disc_r;
    for (int s = 0; s < steps; ++s) {
        heading += curvature * step + 0.03 * rng.normal();
        // The foveal zone is avascular: bend away when getting close.
        const double mx = x - sc.mac_x;
        const double my = y - sc.mac_y;
        const double dm = std::hypot(mx, my);
        if (dm < keepout + width) {
            const double away = std::atan2(my, mx);
            double diff = std::remainder(away - heading, 2.0 * kPi);
            heading += std::clamp(diff, -0.35, 0.35);
        }
        const double nx = x + step * std::cos(heading);
        const double ny = y + step * std::sin(heading);
        out.push_back({x, y, nx, ny, width});
        x = nx;
        y = ny;
        if (std::hypot(x - sc.field.cx, y - sc.field.cy) > sc.field.radius + 10.0) return;
    }
    if (depth <= 1) return;
    const double spread = rng.uniform(0.4, 0.8);
    const double skew = rng.uniform(-0.15, 0.15);
    const double l1 = length * 0.72 * rng.uniform(0.85, 1.15);
    const double l2 = length * 0.72 * rng.uniform(0.85, 1.15);
    grow_vessel(out, rng, sc, x, y, heading + spread / 2 + skew, l1, width * 0.7, depth - 1);
    grow_vessel(out, rng, sc, x, y, heading - spread / 2 + skew, l2, width * 0.7, depth - 1);
}

// Per-row count of pixels inside a circle, used to size defect bands by area.
std::vector<std::size_t> circle_row_counts(const FieldGeometry& f, int w, int h) {
    std::vector<std::size_t> counts(static_cast<std::size_t>(h), 0);
    for (int y = 0; y < h; ++y) {
        std::size_t n = 0;
        for (int x = 0; x < w; ++x) {
            if (f.contains(x, y)) ++n;
        }
        counts[static_cast<std::size_t>(y)] = n;
    }
    return counts;
}

struct Band {
    int y0 = 0;
    int y1 = -1;  // inclusive rows
    bool contains(int y) const { return y >= y0 && y <= y1; }
};

// Rows from the analysis field edge whose in-field area first reaches `severity`.
Band band_rows(const std::vector<std::size_t>& counts, DefectLocation loc, double severity) {
    const std::size_t area = std::accumulate(counts.begin(), counts.end(), std::size_t{0});
    const double target = severity * static_cast<double>(area);
    const int h = static_cast<int>(counts.size());
    int first = 0;
    while (first < h && counts[static_cast<std::size_t>(first)] == 0) ++first;
    int last = h - 1;
    while (last >= 0 && counts[static_cast<std::size_t>(last)] == 0) --last;
    std::size_t acc = 0;
    if (loc == DefectLocation::Top) {
        int y = first;
        for (; y <= last; ++y) {
            acc += counts[static_cast<std::size_t>(y)];
            if (static_cast<double>(acc) >= target) break;
        }
        return {0, std::min(y, last)};
    }
    int y = last;
    for (; y >= first; --y) {
        acc += counts[static_cast<std::size_t>(y)];
        if (static_cast<double>(acc) >= target) break;
    }
    return {std::max(y, first), h - 1};
}

Rgb hsv(double hue_deg, double s, double v) {
    const double c = v * s;
    const double hp = std::fmod(hue_deg, 360.0) / 60.0;
    const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
    Rgb out{0, 0, 0};
    if (hp < 1) out = {c, x, 0};
    else if (hp < 2) out = {x, c, 0};
    else if (hp < 3) out = {0, c, x};
    else if (hp < 4) out = {0, x, c};
    else if (hp < 5) out = {x, 0, c};
    else out = {c, 0, x};
    const double m = v - c;
    return {(out.r + m) * 255.0, (out.g + m) * 255.0, (out.b + m) * 255.0};
}

// Cheap approximately normal deviate: scaled sum of four 16-bit uniforms from one draw.
double quick_normal(Rng& rng) {
    const std::uint64_t v = rng.next();
    const double s = static_cast<double>((v & 0xffff) + ((v >> 16) & 0xffff) + ((v >> 32) & 0xffff) + (v >> 48));
    return (s / 65536.0 - 2.0) * std::sqrt(3.0);
}

class LesionPlacer {
public:
    LesionPlacer(const Scene& sc, const Mask& vessels, const std::vector<Band>& bands)
        : sc_(sc), vessels_(vessels), bands_(bands) {}

    // Center drawn uniformly from the annulus [rmin, rmax] around (ox, oy), optionally within
    // one field quadrant. Returns false when no admissible spot was found.
    bool place(Rng& rng, double radius, double ox, double oy, double rmin, double rmax, int quadrant,
               double& out_x, double& out_y) {
        for (int attempt = 0; attempt < 4000; ++attempt) {
            const double rho = std::sqrt(rng.uniform(rmin * rmin, rmax * rmax));
            double theta = rng.uniform(0.0, 2.0 * kPi);
            if (quadrant >= 0) theta = (quadrant + rng.uniform()) * (kPi / 2.0);
            const double x = ox + rho * std::cos(theta);
            const double y = oy + rho * std::sin(theta);
            if (admissible(x, y, radius)) {
                placed_.push_back({x, y, radius});
                out_x = x;
                out_y = y;
                return true;
            }
        }
        return false;
    }

private:
    bool admissible(double x, double y, double radius) const {
        const auto& a = sc_.analysis;
        if (std::hypot(x - a.cx, y - a.cy) + radius > 0.88 * a.radius) return false;
        if (std::hypot(x - sc_.disc_x, y - sc_.disc_y) < 1.6 * sc_.disc_r + radius) return false;
        if (std::hypot(x - sc_.mac_x, y - sc_.mac_y) < 0.9 * sc_.disc_r + radius) return false;
        for (const auto& band : bands_) {
            if (y + radius + 8 >= band.y0 && y - radius - 8 <= band.y1) return false;
        }
        for (const auto& p : placed_) {
            if (std::hypot(x - p[0], y - p[1]) < radius + p[2] + 6.0) return false;
        }
        const double clear = radius + 5.0;
        const int x0 = std::max(0, static_cast<int>(std::floor(x - clear)));
        const int x1 = std::min(vessels_.width() - 1, static_cast<int>(std::ceil(x + clear)));
        const int y0 = std::max(0, static_cast<int>(std::floor(y - clear)));
        const int y1 = std::min(vessels_.height() - 1, static_cast<int>(std::ceil(y + clear)));
        for (int yy = y0; yy <= y1; ++yy) {
            for (int xx = x0; xx <= x1; ++xx) {
                if (vessels_.at(xx, yy) && std::hypot(xx - x, yy - y) <= clear) return false;
            }
        }
        return true;
    }

    const Scene& sc_;
    const Mask& vessels_;
    const std::vector<Band>& bands_;
    std::vector<std::array<double, 3>> placed_;
};

// Antialiased ellipse; `paint` receives (index, coverage) and the truth mask gets the interior.
template <class F>
void raster_ellipse(int w, int h, double cx, double cy, double a, double b, double angle, Mask& truth, F&& paint) {
    const double ext = std::max(a, b) + 2.0;
    const double ca = std::cos(angle);
    const double sa = std::sin(angle);
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - ext)));
    const int x1 = std::min(w - 1, static_cast<int>(std::ceil(cx + ext)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - ext)));
    const int y1 = std::min(h - 1, static_cast<int>(std::ceil(cy + ext)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            const double dx = x - cx;
            const double dy = y - cy;
            const double u = (dx * ca + dy * sa) / a;
            const double v = (-dx * sa + dy * ca) / b;
            const double dn = std::sqrt(u * u + v * v);
            const double cov = clamp01((1.0 - dn) * std::min(a, b) + 0.5);
            if (dn <= 1.0) truth.set(x, y);
            if (cov > 0) paint(truth.index(x, y), cov);
        }
    }
}

} // namespace

std::string to_string(Geometry g) {
    switch (g) {
    case Geometry::Normal: return "normal";
    case Geometry::DiscCentered: return "disc-centered";
    case Geometry::DiscAbsent: return "disc-absent";
    }
    return "unknown";
}

std::string to_string(LesionKind k) {
    switch (k) {
    case LesionKind::Hemorrhage: return "hemorrhage";
    case LesionKind::Microaneurysm: return "microaneurysm";
    case LesionKind::HardExudate: return "hard_exudate";
    }
    return "unknown";
}

PhantomSpec PhantomSpec::for_grade(std::uint64_t seed, int level) {
    PhantomSpec spec;
    spec.seed = seed;
    spec.grade = level;
    Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
    switch (level) {
    case 0: break;
    case 1: spec.microaneurysms = rng.integer(2, 5); break;
    case 2: {
        const int mode = rng.integer(0, 2);  // hemorrhages, exudate cluster, both
        if (mode != 1) spec.hemorrhages = rng.integer(1, 4);
        if (mode != 0) spec.exudates = rng.integer(10, 14);
        spec.microaneurysms = rng.integer(0, 3);
        break;
    }
    case 3:
        spec.hemorrhages = rng.integer(11, 15);
        spec.spread_hemorrhages = true;
        spec.microaneurysms = rng.integer(1, 4);
        break;
    default: throw InvalidInput("phantom grade must be 0-3");
    }
    return spec;
}

Phantom generate(const PhantomSpec& spec) {
    if (spec.width < 64 || spec.height < 64) throw InvalidInput("phantom raster too small");
    if (spec.vessel_depth < 0 || spec.vessel_depth > 8) throw InvalidInput("vessel depth must be 0-8");
    if (spec.microaneurysms < 0 || spec.hemorrhages < 0 || spec.exudates < 0) throw InvalidInput("negative lesion count");
    if (spec.grade < 0 || spec.grade > 3) throw InvalidInput("phantom grade must be 0-3");
    for (const auto* r : {&spec.hemorrhage_radius, &spec.microaneurysm_radius, &spec.exudate_radius}) {
        if (!(r->lo > 0) || r->hi < r->lo) throw InvalidInput("invalid lesion radius range");
    }

    Rng rng(spec.seed);
    const int w = spec.width;
    const int h = spec.height;
    const double min_dim = std::min(w, h);

    Scene sc;
    sc.field = {w / 2.0 + rng.uniform(-8, 8), h / 2.0 + rng.uniform(-8, 8), 0.47 * min_dim};
    sc.analysis = {sc.field.cx, sc.field.cy, 0.9 * sc.field.radius};
    const double r = sc.analysis.radius;

    const bool left = spec.disc_on_left.value_or(rng.uniform() < 0.5);
    const double side = left ? -1.0 : 1.0;
    sc.disc_r = 0.125 * r * rng.uniform(0.92, 1.08);
    switch (spec.geometry) {
    case Geometry::Normal:
        sc.disc_x = sc.analysis.cx + side * rng.uniform(0.5, 0.7) * r;
        sc.disc_y = sc.analysis.cy + rng.uniform(-0.08, 0.08) * r;
        break;
    case Geometry::DiscCentered:
        sc.disc_x = sc.analysis.cx + rng.uniform(-0.05, 0.05) * r;
        sc.disc_y = sc.analysis.cy + rng.uniform(-0.05, 0.05) * r;
        break;
    case Geometry::DiscAbsent:
        sc.disc_x = sc.analysis.cx + side * 1.25 * sc.field.radius;
        sc.disc_y = sc.analysis.cy + rng.uniform(-0.08, 0.08) * r;
        break;
    }
    if (spec.disc) {
        sc.disc_x = spec.disc->x;
        sc.disc_y = spec.disc->y;
        sc.disc_r = spec.disc->radius;
    }
    {
        // Macula about 2.5 disc diameters from the disc, toward the field center (temporal).
        double ang = spec.geometry == Geometry::DiscCentered ? (left ? kPi : 0.0) : std::atan2(sc.analysis.cy - sc.disc_y, sc.analysis.cx - sc.disc_x);
        if (std::hypot(sc.analysis.cx - sc.disc_x, sc.analysis.cy - sc.disc_y) < 1e-6) ang = 0.0;
        ang += rng.uniform(-0.07, 0.07);
        const double dist = 5.0 * sc.disc_r * rng.uniform(0.95, 1.05);
        sc.ux = std::cos(ang);
        sc.uy = std::sin(ang);
        sc.mac_x = sc.disc_x + dist * sc.ux;
        sc.mac_y = sc.disc_y + dist * sc.uy;
    }

    Phantom out{RasterImage(w, h), {}};
    GroundTruth& truth = out.truth;
    truth.field = sc.field;
    truth.analysis_field = sc.analysis;
    truth.geometry = spec.geometry;
    truth.disc = {spec.geometry != Geometry::DiscAbsent, sc.disc_x, sc.disc_y, sc.disc_r};
    truth.macula_x = sc.mac_x;
    truth.macula_y = sc.mac_y;
    truth.vessel_mask = Mask(w, h);
    truth.hemorrhage_mask = Mask(w, h);
    truth.microaneurysm_mask = Mask(w, h);
    truth.exudate_mask = Mask(w, h);
    truth.defects = spec.defects;
    truth.blur_radius = spec.blur_radius;
    truth.grade = spec.grade;
    truth.vessel_contrast = kVesselDarkening.g;

    // Background: orange base, vignetting and a low-frequency texture.
    Canvas cv(w, h);
    struct Wave {
        double kx, ky, phase, amp;
    };
    std::vector<Wave> waves;
    for (int i = 0; i < 4; ++i) {
        const double lambda = rng.uniform(200.0, 600.0);
        const double dir = rng.uniform(0.0, kPi);
        waves.push_back({2 * kPi / lambda * std::cos(dir), 2 * kPi / lambda * std::sin(dir), rng.uniform(0, 2 * kPi), 0.015});
    }
    const Rgb base{205.0 * rng.uniform(0.95, 1.05), 105.0 * rng.uniform(0.93, 1.07), 50.0 * rng.uniform(0.9, 1.1)};
    const double r0 = sc.field.radius;
    // cos(kx*x + ky*y + p) split into per-column and per-row tables.
    std::vector<double> cx_tab(waves.size() * static_cast<std::size_t>(w)), sx_tab(cx_tab.size());
    for (std::size_t k = 0; k < waves.size(); ++k) {
        for (int x = 0; x < w; ++x) {
            cx_tab[k * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] = std::cos(waves[k].kx * x);
            sx_tab[k * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] = std::sin(waves[k].kx * x);
        }
    }
    for (int y = 0; y < h; ++y) {
        std::array<double, 4> cy_row{}, sy_row{};
        for (std::size_t k = 0; k < waves.size(); ++k) {
            cy_row[k] = std::cos(waves[k].ky * y + waves[k].phase);
            sy_row[k] = std::sin(waves[k].ky * y + waves[k].phase);
        }
        for (int x = 0; x < w; ++x) {
            const double dx = x - sc.field.cx;
            const double dy = y - sc.field.cy;
            double m = 1.0 - 0.25 * (dx * dx + dy * dy) / (r0 * r0);
            for (std::size_t k = 0; k < waves.size(); ++k) {
                const std::size_t t = k * static_cast<std::size_t>(w) + static_cast<std::size_t>(x);
                m += waves[k].amp * (cx_tab[t] * cy_row[k] - sx_tab[t] * sy_row[k]);
            }
            const auto i = cv.idx(x, y);
            cv.r[i] = static_cast<float>(base.r * m);
            cv.g[i] = static_cast<float>(base.g * m);
            cv.b[i] = static_cast<float>(base.b * m);
        }
    }

    // Macula: smooth dark pit.
    {
        const double sigma = 0.7 * sc.disc_r;
        const double strength = 0.45 * spec.macula_contrast;
        const double ext = 4.0 * sigma;
        for (int y = std::max(0, static_cast<int>(sc.mac_y - ext)); y <= std::min(h - 1, static_cast<int>(sc.mac_y + ext)); ++y) {
            for (int x = std::max(0, static_cast<int>(sc.mac_x - ext)); x <= std::min(w - 1, static_cast<int>(sc.mac_x + ext)); ++x) {
                const double d2 = (x - sc.mac_x) * (x - sc.mac_x) + (y - sc.mac_y) * (y - sc.mac_y);
                const double a = strength * std::exp(-d2 / (2 * sigma * sigma));
                cv.darken(cv.idx(x, y), {0.6, 1.0, 0.9}, a);
            }
        }
    }

    // Optic disc with a brighter cup.
    if (truth.disc.present) {
        const double dr = sc.disc_r;
        for (int y = std::max(0, static_cast<int>(sc.disc_y - dr - 4)); y <= std::min(h - 1, static_cast<int>(sc.disc_y + dr + 4)); ++y) {
            for (int x = std::max(0, static_cast<int>(sc.disc_x - dr - 4)); x <= std::min(w - 1, static_cast<int>(sc.disc_x + dr + 4)); ++x) {
                const double rho = std::hypot(x - sc.disc_x, y - sc.disc_y);
                const auto i = cv.idx(x, y);
                cv.blend(i, {250, 228, 170}, 0.85 * clamp01((dr - rho) / 2.5 + 0.5));
                cv.blend(i, {255, 248, 225}, 0.5 * clamp01((0.45 * dr - rho) / 3.0 + 0.5));
            }
        }
    }

    // Vessel tree rooted at the disc.
    std::vector<Segment> segs;
    if (spec.vessel_depth > 0) {
        const double u_ang = std::atan2(sc.uy, sc.ux);
        const double trunk_len = 0.32 * r;
        const double root_w = 0.014 * r;
        std::array<double, 4> trunks{};
        if (spec.geometry == Geometry::DiscAbsent) {
            trunks = {u_ang + rng.uniform(0.15, 0.3), u_ang - rng.uniform(0.15, 0.3), u_ang + rng.uniform(0.45, 0.6),
                      u_ang - rng.uniform(0.45, 0.6)};
        } else {
            trunks = {u_ang + rng.uniform(0.6, 0.9), u_ang - rng.uniform(0.6, 0.9), u_ang + kPi - rng.uniform(0.5, 0.9),
                      u_ang + kPi + rng.uniform(0.5, 0.9)};
        }
        for (double t : trunks) {
            const double len = trunk_len * rng.uniform(0.85, 1.15) * (spec.geometry == Geometry::DiscAbsent ? 2.0 : 1.0);
            grow_vessel(segs, rng, sc, sc.disc_x, sc.disc_y, t, len, root_w * rng.uniform(0.9, 1.1), spec.vessel_depth);
        }
    }
    std::vector<float> vessel_cov(static_cast<std::size_t>(w) * h, 0.0f);
    for (const auto& s : segs) {
        const double ext = s.width / 2 + 1.5;
        const int x0 = std::max(0, static_cast<int>(std::floor(std::min(s.x0, s.x1) - ext)));
        const int x1 = std::min(w - 1, static_cast<int>(std::ceil(std::max(s.x0, s.x1) + ext)));
        const int y0 = std::max(0, static_cast<int>(std::floor(std::min(s.y0, s.y1) - ext)));
        const int y1 = std::min(h - 1, static_cast<int>(std::ceil(std::max(s.y0, s.y1) + ext)));
        for (int y = y0; y <= y1; ++y) {
            for (int x = x0; x <= x1; ++x) {
                const double d = dist_to_segment(x, y, s);
                const auto i = cv.idx(x, y);
                const auto cov = static_cast<float>(clamp01(s.width / 2 + 0.5 - d));
                vessel_cov[i] = std::max(vessel_cov[i], cov);
                if (d <= s.width / 2) truth.vessel_mask.set(x, y);
            }
        }
    }
    for (std::size_t i = 0; i < vessel_cov.size(); ++i) {
        if (vessel_cov[i] > 0) cv.darken(i, kVesselDarkening, vessel_cov[i]);
    }

    // Defect bands are sized on the analysis field, like the gate measures them.
    const auto counts = circle_row_counts(sc.analysis, w, h);
    std::vector<Band> bands;
    std::vector<std::pair<SeededDefect, Band>> banded;
    bool global_under = false;
    bool global_over = false;
    for (const auto& d : spec.defects) {
        if (d.location == DefectLocation::Global) {
            if (d.kind == DefectKind::Underexposure) global_under = true;
            else if (d.kind == DefectKind::Overexposure) global_over = true;
            else throw InvalidInput("only exposure defects can be global; use blur_radius for blur");
            continue;
        }
        if (d.kind == DefectKind::Blur || d.kind == DefectKind::BadGeometry) throw InvalidInput("defect kind cannot form a band");
        if (!(d.severity > 0.0) || d.severity > 1.0) throw InvalidInput("defect severity must lie in (0, 1]");
        if (d.kind == DefectKind::EyelashOcclusion && d.location != DefectLocation::Top) throw InvalidInput("eyelashes enter from the top");
        const Band b = band_rows(counts, d.location, d.severity);
        bands.push_back(b);
        banded.emplace_back(d, b);
    }

    // Lesions.
    LesionPlacer placer(sc, truth.vessel_mask, bands);
    const double edge_limit = 0.88 * r;
    auto fail = [](LesionKind k) { throw InvalidInput("infeasible placement for " + to_string(k)); };
    for (int i = 0; i < spec.hemorrhages; ++i) {
        const double rad = sc.disc_r * rng.uniform(spec.hemorrhage_radius.lo, spec.hemorrhage_radius.hi);
        if (rad >= edge_limit) fail(LesionKind::Hemorrhage);
        double x = 0, y = 0;
        const int quadrant = spec.spread_hemorrhages ? i % 4 : -1;
        if (!placer.place(rng, rad, sc.analysis.cx, sc.analysis.cy, 0.0, edge_limit, quadrant, x, y)) fail(LesionKind::Hemorrhage);
        const double ratio = rng.uniform(0.75, 1.0);
        raster_ellipse(w, h, x, y, rad, rad * ratio, rng.uniform(0, kPi), truth.hemorrhage_mask,
                       [&](std::size_t idx, double cov) { cv.darken(idx, kRedLesionDarkening, cov); });
        truth.placements.push_back({LesionKind::Hemorrhage, x, y, rad});
    }
    for (int i = 0; i < spec.microaneurysms; ++i) {
        const double rad = sc.disc_r * rng.uniform(spec.microaneurysm_radius.lo, spec.microaneurysm_radius.hi);
        if (rad >= edge_limit) fail(LesionKind::Microaneurysm);
        double x = 0, y = 0;
        if (!placer.place(rng, rad, sc.analysis.cx, sc.analysis.cy, 0.0, edge_limit, -1, x, y)) fail(LesionKind::Microaneurysm);
        raster_ellipse(w, h, x, y, rad, rad, 0.0, truth.microaneurysm_mask,
                       [&](std::size_t idx, double cov) { cv.darken(idx, kRedLesionDarkening, cov); });
        truth.placements.push_back({LesionKind::Microaneurysm, x, y, rad});
    }
    for (int i = 0; i < spec.exudates; ++i) {
        const double rad = sc.disc_r * rng.uniform(spec.exudate_radius.lo, spec.exudate_radius.hi);
        if (rad >= edge_limit) fail(LesionKind::HardExudate);
        double x = 0, y = 0;
        bool ok = false;
        if (spec.exudate_layout == ExudateLayout::Clustered) {
            const double reach = 2.0 * sc.disc_r * spec.exudate_cluster_diameters;
            ok = placer.place(rng, rad, sc.mac_x, sc.mac_y, std::min(sc.disc_r, reach), reach - rad, -1, x, y);
        } else {
            ok = placer.place(rng, rad, sc.analysis.cx, sc.analysis.cy, 0.0, edge_limit, -1, x, y);
        }
        if (!ok) fail(LesionKind::HardExudate);
        raster_ellipse(w, h, x, y, rad, rad, 0.0, truth.exudate_mask,
                       [&](std::size_t idx, double cov) { cv.blend(idx, kExudateColor, 0.85 * cov); });
        truth.placements.push_back({LesionKind::HardExudate, x, y, rad});
    }

    // Acquisition defects.
    for (const auto& [d, band] : banded) {
        if (d.kind == DefectKind::EyelashOcclusion) {
            // Thick dark strokes hanging from the top rim; the longest ends on the band's last row.
            const int strokes = 4;
            for (int s = 0; s < strokes; ++s) {
                const double a = -kPi / 2 + (s - 1.5) * 0.3 + rng.uniform(-0.06, 0.06);
                const double sx = sc.field.cx + sc.field.radius * std::cos(a);
                const double sy = sc.field.cy + sc.field.radius * std::sin(a);
                const double ey = s == 1 ? band.y1 : sy + (band.y1 - sy) * rng.uniform(0.75, 0.95);
                const double slant = (s % 2 ? 1.0 : -1.0) * std::tan(rng.uniform(0.35, 0.6));
                const double ex = sx + slant * (ey - sy);
                const double half = 8.0;
                const Segment seg{sx, sy, ex, ey, 2 * half};
                for (int y = std::max(0, static_cast<int>(std::min(sy, ey) - half - 2)); y <= std::min(h - 1, static_cast<int>(std::max(sy, ey) + half + 2)); ++y) {
                    for (int x = std::max(0, static_cast<int>(std::min(sx, ex) - half - 2)); x <= std::min(w - 1, static_cast<int>(std::max(sx, ex) + half + 2)); ++x) {
                        // Flat end at the band edge so the lowest dark row is exactly y1.
                        if (y > band.y1) continue;
                        const double dd = dist_to_segment(x, y, seg);
                        if (dd <= half) cv.darken(cv.idx(x, y), {0.93, 0.93, 0.93}, 1.0);
                    }
                }
            }
            continue;
        }
        const double period = rng.uniform(90.0, 140.0);
        const double phase = rng.uniform(0.0, 360.0);
        for (int y = band.y0; y <= band.y1; ++y) {
            for (int x = 0; x < w; ++x) {
                const auto i = cv.idx(x, y);
                truth.vessel_mask.set(x, y, false);
                switch (d.kind) {
                case DefectKind::Overexposure: cv.blend(i, {255, 253, 248}, 1.0); break;
                case DefectKind::Underexposure: cv.darken(i, {0.985, 0.985, 0.985}, 1.0); break;
                case DefectKind::RainbowArtifact: cv.blend(i, hsv(x * 360.0 / period + phase, 0.85, 0.9), 1.0); break;
                default: break;
                }
            }
        }
    }
    if (global_over) {
        for (std::size_t i = 0; i < cv.r.size(); ++i) cv.blend(i, {255, 253, 248}, 1.0);
        truth.vessel_mask = Mask(w, h);
    }

    // Sensor noise: shared luminance part plus a small per-channel part.
    const double sigma = spec.noise_sigma;
    for (std::size_t i = 0; i < cv.r.size(); ++i) {
        const double lum = sigma * quick_normal(rng);
        cv.r[i] = static_cast<float>(cv.r[i] + lum + 1.0 * quick_normal(rng));
        cv.g[i] = static_cast<float>(cv.g[i] + lum + 1.0 * quick_normal(rng));
        cv.b[i] = static_cast<float>(cv.b[i] + lum + 1.0 * quick_normal(rng));
    }
    if (global_under) {
        for (std::size_t i = 0; i < cv.r.size(); ++i) cv.darken(i, {0.91, 0.91, 0.91}, 1.0);
    }

    // Outside the imaged field the sensor sees nothing.
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (sc.field.contains(x, y)) continue;
            const auto i = cv.idx(x, y);
            cv.r[i] = cv.g[i] = cv.b[i] = 0.0f;
            truth.vessel_mask.set(x, y, false);
        }
    }

    if (spec.blur_radius > 0) {
        for (auto* plane : {&cv.r, &cv.g, &cv.b}) {
            GrayImage g(w, h);
            std::copy(plane->begin(), plane->end(), g.data().begin());
            const GrayImage s = smooth(g, spec.blur_radius);
            std::copy(s.data().begin(), s.data().end(), plane->begin());
        }
    }

    auto q = [](float v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); };
    for (std::size_t i = 0; i < cv.r.size(); ++i) {
        out.image.plane(0)[i] = q(cv.r[i]);
        out.image.plane(1)[i] = q(cv.g[i]);
        out.image.plane(2)[i] = q(cv.b[i]);
    }
    return out;
}

namespace {

std::vector<int> grade_plan(std::uint64_t seed, int n, const std::array<double, 4>& mix) {
    if (n < 0) throw InvalidInput("corpus size must be non-negative");
    double sum = 0.0;
    for (double p : mix) {
        if (!(p >= 0.0)) throw InvalidInput("grade mix entries must be non-negative");
        sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-6) throw InvalidInput("grade mix must sum to 1");

    // Largest remainder apportionment, then a seeded shuffle.
    std::array<int, 4> counts{};
    std::array<double, 4> rem{};
    int assigned = 0;
    for (int k = 0; k < 4; ++k) {
        const double exact = mix[static_cast<std::size_t>(k)] * n;
        counts[static_cast<std::size_t>(k)] = static_cast<int>(std::floor(exact));
        rem[static_cast<std::size_t>(k)] = exact - std::floor(exact);
        assigned += counts[static_cast<std::size_t>(k)];
    }
    std::array<int, 4> order{0, 1, 2, 3};
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[static_cast<std::size_t>(a)] > rem[static_cast<std::size_t>(b)]; });
    for (int i = 0; assigned < n; ++i, ++assigned) ++counts[static_cast<std::size_t>(order[static_cast<std::size_t>(i % 4)])];

    std::vector<int> plan;
    for (int k = 0; k < 4; ++k) plan.insert(plan.end(), static_cast<std::size_t>(counts[static_cast<std::size_t>(k)]), k);
    Rng rng(seed);
    for (std::size_t i = plan.size(); i > 1; --i) std::swap(plan[i - 1], plan[rng.next() % i]);
    return plan;
}

} // namespace

std::vector<std::pair<std::string, PhantomSpec>> corpus_specs(std::uint64_t seed, int n,
                                                              const std::array<double, 4>& grade_mix) {
    const auto plan = grade_plan(seed, n, grade_mix);
    Rng rng(seed * 0x2545f4914f6cdd1dULL + 1);
    std::vector<std::pair<std::string, PhantomSpec>> out;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        PhantomSpec spec = PhantomSpec::for_grade(rng.next(), plan[i]);
        // A few images carry a small croppable exposure band.
        if (rng.uniform() < 0.1) {
            spec.defects.push_back({DefectKind::Overexposure, rng.uniform() < 0.5 ? DefectLocation::Top : DefectLocation::Bottom,
                                    rng.uniform(0.04, 0.12)});
        }
        char id[64];
        std::snprintf(id, sizeof id, "phantom-%llu-%03zu", static_cast<unsigned long long>(seed), i);
        out.emplace_back(id, spec);
    }
    return out;
}

std::vector<CorpusEntry> corpus(std::uint64_t seed, int n, const std::array<double, 4>& grade_mix) {
    std::vector<CorpusEntry> out;
    for (auto& [id, spec] : corpus_specs(seed, n, grade_mix)) {
        out.push_back({id, spec, generate(spec)});
    }
    return out;
}

void write_corpus(const std::vector<CorpusEntry>& entries, const std::filesystem::path& dir, std::uint64_t seed) {
    using nlohmann::json;
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw StorageError("cannot create " + dir.string() + ": " + ec.message());

    auto write_bytes = [](const std::filesystem::path& p, const Bytes& b) {
        std::ofstream f(p, std::ios::binary);
        f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
        if (!f) throw StorageError("cannot write " + p.string());
    };

    json manifest = {{"seed", seed}, {"count", entries.size()}, {"images", json::array()}};
    for (const auto& e : entries) {
        const auto& t = e.phantom.truth;
        write_bytes(dir / (e.id + ".png"), encode_png(e.phantom.image));
        write_bytes(dir / (e.id + ".vessels.png"), encode_png_mask(t.vessel_mask));
        json lesions = json::array();
        for (const auto& p : t.placements) {
            lesions.push_back({{"kind", to_string(p.kind)}, {"x", p.x}, {"y", p.y}, {"radius", p.radius}});
        }
        json defects = json::array();
        for (const auto& d : t.defects) {
            defects.push_back({{"kind", preprocess::to_string(d.kind)}, {"location", preprocess::to_string(d.location)},
                               {"severity", d.severity}});
        }
        json truth = {
            {"id", e.id},
            {"seed", e.spec.seed},
            {"grade", t.grade},
            {"geometry", to_string(t.geometry)},
            {"field", {{"cx", t.field.cx}, {"cy", t.field.cy}, {"radius", t.field.radius}}},
            {"disc", {{"present", t.disc.present}, {"x", t.disc.x}, {"y", t.disc.y}, {"radius", t.disc.radius}}},
            {"macula", {{"x", t.macula_x}, {"y", t.macula_y}}},
            {"lesions", lesions},
            {"defects", defects},
            {"blur_radius", t.blur_radius},
            {"vessel_mask", e.id + ".vessels.png"},
        };
        std::ofstream f(dir / (e.id + ".truth.json"));
        f << truth.dump(2) << '\n';
        if (!f) throw StorageError("cannot write truth for " + e.id);
        manifest["images"].push_back({{"id", e.id}, {"image", e.id + ".png"}, {"truth", e.id + ".truth.json"}, {"grade", t.grade}});
    }
    std::ofstream f(dir / "manifest.json");
    f << manifest.dump(2) << '\n';
    if (!f) throw StorageError("cannot write manifest");
}

} // namespace fundus::phantom
