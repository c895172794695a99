#include "fundus/raster.hpp"

#include "fundus/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace fundus {

RasterImage::RasterImage(int width, int height, std::uint8_t fill) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
        throw InvalidInput("raster dimensions must be positive, got " + std::to_string(width) +
                           "x" + std::to_string(height));
    }
    const auto n = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    for (auto& p : planes_) p.assign(n, fill);
}

GrayImage::GrayImage(int width, int height, float fill) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
        throw InvalidInput("gray image dimensions must be positive");
    }
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill);
}

Mask::Mask(int width, int height, bool fill) : width_(width), height_(height) {
    if (width <= 0 || height <= 0) {
        throw InvalidInput("mask dimensions must be positive");
    }
    bits_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height), fill ? 1 : 0);
}

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), std::uint8_t{1}));
}

Mask Mask::operator~() const {
    Mask out = *this;
    for (auto& b : out.bits_) b = b ? 0 : 1;
    return out;
}

Mask& Mask::operator|=(const Mask& other) {
    if (other.width_ != width_ || other.height_ != height_) throw InvalidInput("mask size mismatch");
    for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] |= other.bits_[i];
    return *this;
}

Mask& Mask::operator&=(const Mask& other) {
    if (other.width_ != width_ || other.height_ != height_) throw InvalidInput("mask size mismatch");
    for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] &= other.bits_[i];
    return *this;
}

Mask& Mask::subtract(const Mask& other) {
    if (other.width_ != width_ || other.height_ != height_) throw InvalidInput("mask size mismatch");
    for (std::size_t i = 0; i < bits_.size(); ++i) bits_[i] &= static_cast<std::uint8_t>(!other.bits_[i]);
    return *this;
}

bool ChannelWeights::valid() const {
    return red >= 0.0 && green >= 0.0 && blue >= 0.0 && (red + green + blue) > 0.0 &&
           std::isfinite(red + green + blue);
}

GrayImage fuse_channels(const RasterImage& img, const ChannelWeights& w) {
    if (!w.valid()) throw InvalidInput("channel weights must be non-negative and not all zero");
    GrayImage out(img.width(), img.height());
    const double norm = 255.0 * (w.red + w.green + w.blue);
    const auto r = img.plane(RasterImage::Red);
    const auto g = img.plane(RasterImage::Green);
    const auto b = img.plane(RasterImage::Blue);
    auto o = out.data();
    for (std::size_t i = 0; i < o.size(); ++i) {
        const double v = (w.red * r[i] + w.green * g[i] + w.blue * b[i]) / norm;
        o[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
    }
    return out;
}

GrayImage smooth(const GrayImage& img, int radius) {
    if (radius < 0) throw InvalidInput("smoothing radius must be non-negative");
    if (radius == 0) return img;

    const int w = img.width();
    const int h = img.height();
    const double k = 2.0 * radius + 1.0;
    std::vector<double> horiz(img.pixel_count());

    // Horizontal pass via prefix sums over the edge-replicated row.
    std::vector<double> prefix(static_cast<std::size_t>(w + 2 * radius + 1));
    for (int y = 0; y < h; ++y) {
        const float* row = img.data().data() + img.index(0, y);
        prefix[0] = 0.0;
        for (int i = 0; i < w + 2 * radius; ++i) {
            const int x = std::clamp(i - radius, 0, w - 1);
            prefix[static_cast<std::size_t>(i + 1)] = prefix[static_cast<std::size_t>(i)] + row[x];
        }
        double* out = horiz.data() + img.index(0, y);
        for (int x = 0; x < w; ++x) {
            out[x] = (prefix[static_cast<std::size_t>(x + 2 * radius + 1)] - prefix[static_cast<std::size_t>(x)]) / k;
        }
    }

    // Vertical pass with a running column sum.
    GrayImage out(w, h);
    std::vector<double> col(static_cast<std::size_t>(w), 0.0);
    auto row_ptr = [&](int y) { return horiz.data() + img.index(0, std::clamp(y, 0, h - 1)); };
    for (int dy = -radius; dy <= radius; ++dy) {
        const double* r = row_ptr(dy);
        for (int x = 0; x < w; ++x) col[static_cast<std::size_t>(x)] += r[x];
    }
    for (int y = 0; y < h; ++y) {
        float* o = out.data().data() + out.index(0, y);
        for (int x = 0; x < w; ++x) o[x] = static_cast<float>(col[static_cast<std::size_t>(x)] / k);
        if (y + 1 < h) {
            const double* add = row_ptr(y + radius + 1);
            const double* sub = row_ptr(y - radius);
            for (int x = 0; x < w; ++x) col[static_cast<std::size_t>(x)] += add[x] - sub[x];
        }
    }
    return out;
}

GrayImage subtract_background(const GrayImage& img, int radius) {
    if (radius < 1) throw InvalidInput("background radius must be at least 1");
    const GrayImage bg = smooth(img, radius);
    GrayImage out(img.width(), img.height());
    for (std::size_t i = 0; i < out.pixel_count(); ++i) {
        out[i] = std::clamp(img[i] - bg[i] + 0.5f, 0.0f, 1.0f);
    }
    return out;
}

GrayImage smooth_masked(const GrayImage& img, const Mask& roi, int radius) {
    if (roi.width() != img.width() || roi.height() != img.height()) throw InvalidInput("roi size does not match image");
    GrayImage vals(img.width(), img.height());
    GrayImage weight(img.width(), img.height());
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        if (!roi[i]) continue;
        vals[i] = img[i];
        weight[i] = 1.0f;
    }
    const GrayImage sv = smooth(vals, radius);
    const GrayImage sw = smooth(weight, radius);
    GrayImage out = img;
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        if (roi[i] && sw[i] > 0.0f) out[i] = sv[i] / sw[i];
    }
    return out;
}

GrayImage equalize_histogram(const GrayImage& img, int bins, const Mask* roi) {
    if (bins < 2) throw InvalidInput("histogram needs at least two bins");
    if (roi && (roi->width() != img.width() || roi->height() != img.height())) {
        throw InvalidInput("roi size does not match image");
    }
    auto bin_of = [bins](float v) {
        const int b = static_cast<int>(std::floor(static_cast<double>(v) * bins));
        return std::clamp(b, 0, bins - 1);
    };
    std::vector<std::size_t> hist(static_cast<std::size_t>(bins), 0);
    std::size_t n = 0;
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        if (roi && !(*roi)[i]) continue;
        ++hist[static_cast<std::size_t>(bin_of(img[i]))];
        ++n;
    }
    GrayImage out = img;
    if (n == 0) return out;
    std::vector<float> lut(static_cast<std::size_t>(bins));
    std::size_t cdf = 0;
    for (int b = 0; b < bins; ++b) {
        cdf += hist[static_cast<std::size_t>(b)];
        lut[static_cast<std::size_t>(b)] = static_cast<float>(static_cast<double>(cdf) / static_cast<double>(n));
    }
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        if (roi && !(*roi)[i]) continue;
        out[i] = lut[static_cast<std::size_t>(bin_of(img[i]))];
    }
    return out;
}

RasterImage adjust_levels(const RasterImage& img, double saturation_gain, double contrast_gain) {
    if (!(saturation_gain > 0.0) || !(contrast_gain > 0.0)) {
        throw InvalidInput("level gains must be positive");
    }
    RasterImage out = img;
    if (saturation_gain == 1.0 && contrast_gain == 1.0) return out;
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        double c[3];
        for (int ch = 0; ch < 3; ++ch) {
            c[ch] = 128.0 + contrast_gain * (img.plane(ch)[i] - 128.0);
        }
        const double y = 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2];
        for (int ch = 0; ch < 3; ++ch) {
            const double v = y + saturation_gain * (c[ch] - y);
            out.plane(ch)[i] = static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 255.0)));
        }
    }
    return out;
}

GrayImage brighten(const GrayImage& img, float delta) {
    GrayImage out = img;
    for (auto& v : out.data()) v = std::clamp(v + delta, 0.0f, 1.0f);
    return out;
}

double percentile(const GrayImage& img, double q, const Mask* roi) {
    std::vector<float> values;
    values.reserve(img.pixel_count());
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        if (!roi || (*roi)[i]) values.push_back(img[i]);
    }
    if (values.empty()) throw InvalidInput("percentile of an empty selection");
    q = std::clamp(q, 0.0, 1.0);
    const auto k = static_cast<std::size_t>(std::llround(q * static_cast<double>(values.size() - 1)));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k), values.end());
    return values[k];
}

std::vector<double> percentiles(const GrayImage& img, const std::vector<double>& qs, const Mask* roi) {
    std::vector<float> values;
    values.reserve(img.pixel_count());
    for (std::size_t i = 0; i < img.pixel_count(); ++i) {
        if (!roi || (*roi)[i]) values.push_back(img[i]);
    }
    if (values.empty()) throw InvalidInput("percentile of an empty selection");
    std::sort(values.begin(), values.end());
    std::vector<double> out;
    out.reserve(qs.size());
    for (double q : qs) {
        q = std::clamp(q, 0.0, 1.0);
        out.push_back(values[static_cast<std::size_t>(std::llround(q * static_cast<double>(values.size() - 1)))]);
    }
    return out;
}

} // namespace fundus
