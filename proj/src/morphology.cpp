#include "fundus/morphology.hpp"

#include "fundus/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace fundus::morphology {

int StructuringElement::half_width(int dy) const {
    if (shape == Shape::Square) return radius;
    const int rem = radius * radius - dy * dy;
    return rem < 0 ? -1 : static_cast<int>(std::floor(std::sqrt(static_cast<double>(rem))));
}

double Region::equivalent_diameter() const {
    return 2.0 * std::sqrt(static_cast<double>(area) / std::numbers::pi);
}

namespace {

struct MaxOp {
    template <class T>
    T operator()(T a, T b) const { return a < b ? b : a; }
};

struct MinOp {
    template <class T>
    T operator()(T a, T b) const { return b < a ? b : a; }
};

// Running extreme over a window of 2*hw+1 samples with edge replication (van Herk /
// Gil-Werman: constant cost per sample regardless of hw).
template <class T, class Op>
class WindowFilter {
public:
    explicit WindowFilter(int width) : width_(width) {}

    void run(const T* in, int hw, T* out, Op op) {
        if (hw == 0) {
            std::copy(in, in + width_, out);
            return;
        }
        const int k = 2 * hw + 1;
        const int n = width_ + 2 * hw;
        pad_.resize(static_cast<std::size_t>(n));
        g_.resize(static_cast<std::size_t>(n));
        h_.resize(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) pad_[static_cast<std::size_t>(i)] = in[std::clamp(i - hw, 0, width_ - 1)];
        for (int start = 0; start < n; start += k) {
            const int end = std::min(n, start + k);
            auto u = static_cast<std::size_t>(start);
            g_[u] = pad_[u];
            for (int i = start + 1; i < end; ++i) {
                u = static_cast<std::size_t>(i);
                g_[u] = op(g_[u - 1], pad_[u]);
            }
            u = static_cast<std::size_t>(end - 1);
            h_[u] = pad_[u];
            for (int i = end - 2; i >= start; --i) {
                u = static_cast<std::size_t>(i);
                h_[u] = op(h_[u + 1], pad_[u]);
            }
        }
        for (int x = 0; x < width_; ++x) {
            out[x] = op(h_[static_cast<std::size_t>(x)], g_[static_cast<std::size_t>(x + k - 1)]);
        }
    }

private:
    int width_;
    std::vector<T> pad_, g_, h_;
};

template <class T, class Op>
void morph_plane(std::span<const T> in, std::span<T> out, int w, int h, const StructuringElement& se, Op op) {
    if (se.radius < 0) throw InvalidInput("structuring element radius must be non-negative");
    if (se.radius == 0) {
        std::copy(in.begin(), in.end(), out.begin());
        return;
    }
    const int r = se.radius;
    // Row-filter the whole image once per distinct half-width, then fold the shifted rows in.
    WindowFilter<T, Op> filter(w);
    std::vector<T> rows(in.size());
    std::vector<bool> started(static_cast<std::size_t>(h), false);
    std::vector<int> widths;
    for (int dy = -r; dy <= r; ++dy) {
        const int hw = se.half_width(dy);
        if (hw >= 0 && std::find(widths.begin(), widths.end(), hw) == widths.end()) widths.push_back(hw);
    }
    const auto uw = static_cast<std::size_t>(w);
    for (int hw : widths) {
        for (int y = 0; y < h; ++y) {
            filter.run(in.data() + static_cast<std::size_t>(y) * uw, hw, rows.data() + static_cast<std::size_t>(y) * uw, op);
        }
        for (int dy = -r; dy <= r; ++dy) {
            if (se.half_width(dy) != hw) continue;
            for (int y = 0; y < h; ++y) {
                const T* src = rows.data() + static_cast<std::size_t>(std::clamp(y + dy, 0, h - 1)) * uw;
                T* o = out.data() + static_cast<std::size_t>(y) * uw;
                if (!started[static_cast<std::size_t>(y)]) {
                    std::copy(src, src + w, o);
                    started[static_cast<std::size_t>(y)] = true;
                } else {
                    for (int x = 0; x < w; ++x) o[x] = op(o[x], src[x]);
                }
            }
        }
    }
}

template <class Op>
GrayImage morph(const GrayImage& img, const StructuringElement& se, Op op) {
    GrayImage out(img.width(), img.height());
    morph_plane<float>(img.data(), out.data(), img.width(), img.height(), se, op);
    return out;
}

template <class Op>
Mask morph(const Mask& mask, const StructuringElement& se, Op op) {
    Mask out(mask.width(), mask.height());
    morph_plane<std::uint8_t>(mask.data(), out.data(), mask.width(), mask.height(), se, op);
    return out;
}

} // namespace

GrayImage dilate(const GrayImage& img, const StructuringElement& se) { return morph(img, se, MaxOp{}); }
GrayImage erode(const GrayImage& img, const StructuringElement& se) { return morph(img, se, MinOp{}); }
GrayImage close(const GrayImage& img, const StructuringElement& se) { return erode(dilate(img, se), se); }
GrayImage open(const GrayImage& img, const StructuringElement& se) { return dilate(erode(img, se), se); }

Mask dilate(const Mask& mask, const StructuringElement& se) { return morph(mask, se, MaxOp{}); }
Mask erode(const Mask& mask, const StructuringElement& se) { return morph(mask, se, MinOp{}); }
Mask close(const Mask& mask, const StructuringElement& se) { return erode(dilate(mask, se), se); }
Mask open(const Mask& mask, const StructuringElement& se) { return dilate(erode(mask, se), se); }

Mask threshold(const GrayImage& img, double t, Polarity polarity) {
    Mask out(img.width(), img.height());
    auto bits = out.data();
    const auto data = img.data();
    if (polarity == Polarity::Above) {
        for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = data[i] > t ? 1 : 0;
    } else {
        for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = data[i] < t ? 1 : 0;
    }
    return out;
}

std::vector<ScanLevel> threshold_scan(const GrayImage& img, const std::vector<double>& levels,
                                      Polarity polarity, const Mask& roi) {
    if (roi.width() != img.width() || roi.height() != img.height()) {
        throw InvalidInput("roi size does not match image");
    }
    if (!roi.any()) throw InvalidInput("threshold scan needs a non-empty roi");
    for (std::size_t i = 1; i < levels.size(); ++i) {
        const bool ok = polarity == Polarity::Above ? levels[i] < levels[i - 1] : levels[i] > levels[i - 1];
        if (!ok) throw InvalidInput("threshold levels must move strictly from strict to loose");
    }
    std::vector<ScanLevel> out;
    out.reserve(levels.size());
    for (double level : levels) {
        Mask m = threshold(img, level, polarity);
        m &= roi;
        out.push_back({level, connected_components(m)});
    }
    return out;
}

std::vector<int> label_components(const Mask& mask, int* count) {
    const int w = mask.width();
    const int h = mask.height();
    std::vector<int> labels(mask.pixel_count(), 0);
    std::vector<Point> stack;
    int next = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const auto i = mask.index(x, y);
            if (!mask[i] || labels[i] != 0) continue;
            ++next;
            labels[i] = next;
            stack.push_back({x, y});
            while (!stack.empty()) {
                const Point p = stack.back();
                stack.pop_back();
                for (int dy = -1; dy <= 1; ++dy) {
                    const int ny = p.y + dy;
                    if (ny < 0 || ny >= h) continue;
                    for (int dx = -1; dx <= 1; ++dx) {
                        const int nx = p.x + dx;
                        if (nx < 0 || nx >= w) continue;
                        const auto j = mask.index(nx, ny);
                        if (mask[j] && labels[j] == 0) {
                            labels[j] = next;
                            stack.push_back({nx, ny});
                        }
                    }
                }
            }
        }
    }
    if (count) *count = next;
    return labels;
}

std::vector<Region> connected_components(const Mask& mask) {
    int count = 0;
    const auto labels = label_components(mask, &count);
    std::vector<std::vector<Point>> pixels(static_cast<std::size_t>(count));
    for (int y = 0; y < mask.height(); ++y) {
        for (int x = 0; x < mask.width(); ++x) {
            const int l = labels[mask.index(x, y)];
            if (l) pixels[static_cast<std::size_t>(l - 1)].push_back({x, y});
        }
    }
    std::vector<Region> regions;
    regions.reserve(pixels.size());
    for (auto& p : pixels) regions.push_back(make_region(std::move(p)));
    return regions;
}

Region make_region(std::vector<Point> pixels) {
    Region r;
    r.area = pixels.size();
    if (pixels.empty()) return r;
    double sx = 0.0;
    double sy = 0.0;
    r.bbox = {pixels.front().x, pixels.front().y, pixels.front().x, pixels.front().y};
    for (const auto& p : pixels) {
        sx += p.x;
        sy += p.y;
        r.bbox.x0 = std::min(r.bbox.x0, p.x);
        r.bbox.y0 = std::min(r.bbox.y0, p.y);
        r.bbox.x1 = std::max(r.bbox.x1, p.x);
        r.bbox.y1 = std::max(r.bbox.y1, p.y);
    }
    r.cx = sx / static_cast<double>(r.area);
    r.cy = sy / static_cast<double>(r.area);
    r.pixels = std::move(pixels);
    return r;
}

Region region_props(Region region, const GrayImage* img) {
    if (region.area == 0) throw InvalidInput("region_props on an empty region");
    // Local bitmap over the bbox with a one-pixel frame.
    const int bw = region.bbox.width() + 2;
    const int bh = region.bbox.height() + 2;
    std::vector<std::uint8_t> local(static_cast<std::size_t>(bw) * static_cast<std::size_t>(bh), 0);
    auto at = [&](int x, int y) -> std::uint8_t& {
        return local[static_cast<std::size_t>(y) * static_cast<std::size_t>(bw) + static_cast<std::size_t>(x)];
    };
    for (const auto& p : region.pixels) at(p.x - region.bbox.x0 + 1, p.y - region.bbox.y0 + 1) = 1;

    std::size_t edges = 0;
    for (const auto& p : region.pixels) {
        const int lx = p.x - region.bbox.x0 + 1;
        const int ly = p.y - region.bbox.y0 + 1;
        edges += !at(lx - 1, ly);
        edges += !at(lx + 1, ly);
        edges += !at(lx, ly - 1);
        edges += !at(lx, ly + 1);
    }
    const double area = static_cast<double>(region.area);
    region.perimeter = static_cast<double>(edges) * std::numbers::pi / 4.0;
    region.ovalness = std::clamp(4.0 * std::numbers::pi * area / (region.perimeter * region.perimeter), 0.0, 1.0);
    region.mean_width = 2.0 * area / region.perimeter;

    if (img) {
        double sum = 0.0;
        for (const auto& p : region.pixels) sum += img->at(p.x, p.y);
        region.mean_intensity = sum / area;
    }
    return region;
}

Mask region_mask(const Region& region, int width, int height) {
    Mask m(width, height);
    paint(m, region);
    return m;
}

void paint(Mask& mask, const Region& region) {
    for (const auto& p : region.pixels) mask.set(p.x, p.y);
}

bool intersects(const Region& region, const Mask& mask) {
    for (const auto& p : region.pixels) {
        if (mask.at(p.x, p.y)) return true;
    }
    return false;
}

} // namespace fundus::morphology
