#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace fundus {

/// 8-bit RGB raster stored as three row-major planes.
class RasterImage {
public:
    enum Channel : int { Red = 0, Green = 1, Blue = 2 };

    RasterImage() = default;
    /// Throws InvalidInput unless width and height are positive.
    RasterImage(int width, int height, std::uint8_t fill = 0);

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return planes_[0].size(); }
    bool empty() const { return width_ == 0; }

    std::span<std::uint8_t> plane(int c) { return planes_[c]; }
    std::span<const std::uint8_t> plane(int c) const { return planes_[c]; }

    std::uint8_t at(int x, int y, int c) const { return planes_[c][index(x, y)]; }
    std::uint8_t& at(int x, int y, int c) { return planes_[c][index(x, y)]; }

    void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
        const auto i = index(x, y);
        planes_[0][i] = r;
        planes_[1][i] = g;
        planes_[2][i] = b;
    }

    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    /// Rec.601 luma of one pixel, normalized to [0,1].
    double luma(std::size_t i) const {
        return (0.299 * planes_[0][i] + 0.587 * planes_[1][i] + 0.114 * planes_[2][i]) / 255.0;
    }

    friend bool operator==(const RasterImage&, const RasterImage&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> planes_[3];
};

/// Single-channel image of intensities in [0,1].
class GrayImage {
public:
    GrayImage() = default;
    GrayImage(int width, int height, float fill = 0.0f);

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return data_.size(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }

    float at(int x, int y) const { return data_[index(x, y)]; }
    float& at(int x, int y) { return data_[index(x, y)]; }
    float operator[](std::size_t i) const { return data_[i]; }
    float& operator[](std::size_t i) { return data_[i]; }

    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    friend bool operator==(const GrayImage&, const GrayImage&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<float> data_;
};

/// Binary image; one byte per pixel holding 0 or 1.
class Mask {
public:
    Mask() = default;
    Mask(int width, int height, bool fill = false);

    int width() const { return width_; }
    int height() const { return height_; }
    std::size_t pixel_count() const { return bits_.size(); }

    std::span<std::uint8_t> data() { return bits_; }
    std::span<const std::uint8_t> data() const { return bits_; }

    bool at(int x, int y) const { return bits_[index(x, y)] != 0; }
    void set(int x, int y, bool v = true) { bits_[index(x, y)] = v ? 1 : 0; }
    bool operator[](std::size_t i) const { return bits_[i] != 0; }

    std::size_t index(int x, int y) const {
        return static_cast<std::size_t>(y) * static_cast<std::size_t>(width_) +
               static_cast<std::size_t>(x);
    }

    std::size_t count() const;
    bool any() const { return count() != 0; }

    Mask operator~() const;
    Mask& operator|=(const Mask& other);
    Mask& operator&=(const Mask& other);
    /// Clears every bit set in `other`.
    Mask& subtract(const Mask& other);

    friend bool operator==(const Mask&, const Mask&) = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<std::uint8_t> bits_;
};

struct ChannelWeights {
    double red = 0.0;
    double green = 1.0;
    double blue = 0.4;

    bool valid() const;
    friend bool operator==(const ChannelWeights&, const ChannelWeights&) = default;
};

/// Normalized weighted sum of the three channels. Throws InvalidInput on invalid weights.
GrayImage fuse_channels(const RasterImage& img, const ChannelWeights& w);

/// Separable (2r+1) box mean with edge replication. Radius 0 is the identity.
GrayImage smooth(const GrayImage& img, int radius);

/// clamp(img - smooth(img, radius) + 0.5, 0, 1).
GrayImage subtract_background(const GrayImage& img, int radius);

/// Box mean over the in-roi samples of each window; samples outside the roi are copied.
GrayImage smooth_masked(const GrayImage& img, const Mask& roi, int radius);

/// Histogram equalization by CDF remapping, out = cdf(bin)/n. When `roi` is given only
/// its pixels feed the histogram and only they are remapped.
GrayImage equalize_histogram(const GrayImage& img, int bins = 256, const Mask* roi = nullptr);

/// Contrast about mid-gray, then saturation about per-pixel luma; clamped to [0,255].
RasterImage adjust_levels(const RasterImage& img, double saturation_gain, double contrast_gain);

/// Adds `delta` to every sample and clamps to [0,1].
GrayImage brighten(const GrayImage& img, float delta);

/// Value at quantile q in [0,1] of the samples selected by `roi` (all samples if null).
double percentile(const GrayImage& img, double q, const Mask* roi = nullptr);
/// Several quantiles from one sort; same indexing as percentile().
std::vector<double> percentiles(const GrayImage& img, const std::vector<double>& qs, const Mask* roi = nullptr);

} // namespace fundus
