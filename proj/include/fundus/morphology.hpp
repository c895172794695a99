#pragma once

#include "fundus/raster.hpp"

#include <cstddef>
#include <vector>

namespace fundus::morphology {

struct StructuringElement {
    enum class Shape { Square, Disc };

    Shape shape = Shape::Square;
    int radius = 0;

    static StructuringElement square(int r) { return {Shape::Square, r}; }
    static StructuringElement disc(int r) { return {Shape::Disc, r}; }

    /// Horizontal half-extent of the element on row offset `dy` (|dy| <= radius).
    int half_width(int dy) const;
};

struct Point {
    int x = 0;
    int y = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

/// Inclusive pixel rectangle.
struct BBox {
    int x0 = 0;
    int y0 = 0;
    int x1 = -1;
    int y1 = -1;

    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
    bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
};

/// One connected component. Geometry fields are filled by connected_components; the shape and
/// intensity measurements (ovalness, mean_width, mean_intensity, perimeter) by region_props.
struct Region {
    std::vector<Point> pixels;
    std::size_t area = 0;
    double cx = 0.0;
    double cy = 0.0;
    BBox bbox;
    double perimeter = 0.0;
    double ovalness = 0.0;
    double mean_width = 0.0;
    double mean_intensity = 0.0;

    /// Diameter of the disc with the same area.
    double equivalent_diameter() const;
};

enum class Polarity { Above, Below };

GrayImage dilate(const GrayImage& img, const StructuringElement& se);
GrayImage erode(const GrayImage& img, const StructuringElement& se);
GrayImage close(const GrayImage& img, const StructuringElement& se);
GrayImage open(const GrayImage& img, const StructuringElement& se);

Mask dilate(const Mask& mask, const StructuringElement& se);
Mask erode(const Mask& mask, const StructuringElement& se);
Mask close(const Mask& mask, const StructuringElement& se);
Mask open(const Mask& mask, const StructuringElement& se);

/// Bit set iff sample > t (Above) or sample < t (Below).
Mask threshold(const GrayImage& img, double t, Polarity polarity);

struct ScanLevel {
    double level = 0.0;
    std::vector<Region> regions;
};

/// Components of threshold(img, level) within `roi` for each level. Levels must move from
/// strict to loose: strictly descending for Above, strictly ascending for Below. Throws
/// InvalidInput on an empty roi or badly ordered levels.
std::vector<ScanLevel> threshold_scan(const GrayImage& img, const std::vector<double>& levels,
                                      Polarity polarity, const Mask& roi);

/// 8-connected components in raster order of their first pixel.
std::vector<Region> connected_components(const Mask& mask);

/// Per-pixel component label (0 = background, components numbered from 1 in the order
/// returned by connected_components).
std::vector<int> label_components(const Mask& mask, int* count = nullptr);

/// Fills perimeter, ovalness, mean_width and (when img is given) mean_intensity.
/// Perimeter is the 4-neighbour boundary edge count scaled by pi/4; ovalness is the
/// isoperimetric ratio 4*pi*A/P^2 clamped to [0,1]; mean_width is 2A/P.
Region region_props(Region region, const GrayImage* img = nullptr);
inline Region region_props(Region region, const GrayImage& img) { return region_props(std::move(region), &img); }

/// Rasterizes a region's pixels into a mask of the given size.
Mask region_mask(const Region& region, int width, int height);
void paint(Mask& mask, const Region& region);

/// Builds a region (with geometry) from a pixel list.
Region make_region(std::vector<Point> pixels);

/// True if any pixel of the region is set in the mask.
bool intersects(const Region& region, const Mask& mask);

} // namespace fundus::morphology
