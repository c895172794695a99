#pragma once

#include "fundus/raster.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fundus::preprocess {

/// Circular information field of the camera, in pixel coordinates (pixel centers at integers).
struct FieldGeometry {
    double cx = 0.0;
    double cy = 0.0;
    double radius = 0.0;

    bool contains(double x, double y) const {
        const double dx = x - cx;
        const double dy = y - cy;
        return dx * dx + dy * dy <= radius * radius;
    }
    friend bool operator==(const FieldGeometry&, const FieldGeometry&) = default;
};

enum class DefectKind { Overexposure, Underexposure, RainbowArtifact, EyelashOcclusion, Blur, BadGeometry };
enum class DefectLocation { Top, Bottom, Global };

struct Defect {
    DefectKind kind = DefectKind::Overexposure;
    DefectLocation location = DefectLocation::Global;
    /// Fraction of the field area affected, in [0,1].
    double severity = 0.0;

    friend bool operator==(const Defect&, const Defect&) = default;
};

std::string to_string(DefectKind kind);
std::string to_string(DefectLocation location);
DefectKind defect_kind_from_string(const std::string& s);
DefectLocation defect_location_from_string(const std::string& s);

struct QualityReport {
    std::vector<Defect> defects;
    int crop_top = 0;
    int crop_bottom = 0;
    double retained_fraction = 1.0;
    bool accepted = false;
    std::string reason;
};

struct GateConfig {
    double crop_scale = 0.9;
    /// Images losing more than this fraction of the field to defect crops are rejected.
    double reject_fraction = 0.30;
    /// Luma floor separating the imaged field from the black surround.
    double field_luma_floor = 0.04;
    /// Fraction of bright pixels in the frame above which the inscribed circle is used.
    double full_frame_fraction = 0.95;
    int strata = 16;
    double stratum_violation = 0.60;
    double overexposed_luma = 0.95;
    double underexposed_luma = 0.05;
    double blur_floor = 0.015;
    /// Global exposure/blur defects at or above this severity reject the image.
    double global_reject_severity = 0.5;
    /// Rainbow pixels: blue or green exceeding red by this many levels on a lit pixel.
    int rainbow_hue_margin = 40;
    double rainbow_stratum_fraction = 0.25;
    /// Eyelash candidates: dark rim-touching, elongated regions in the top half.
    double eyelash_luma = 0.12;
    double eyelash_min_area_fraction = 0.003;
    double eyelash_max_ovalness = 0.35;
};

/// Throws FieldDetectionError when no bright area exists.
FieldGeometry detect_field(const RasterImage& img, const GateConfig& cfg = {});

struct CroppedField {
    RasterImage image;
    FieldGeometry field;
};

/// Zeroes every pixel farther than scale*radius from the center; returns the shrunken field.
CroppedField crop_field(const RasterImage& img, const FieldGeometry& field, double scale = 0.9);

/// Mask of pixels inside the field circle.
Mask field_mask(const FieldGeometry& field, int width, int height);

/// Field pixels minus the rows whose in-field samples are all zero (rows removed by
/// crop_defects).
Mask signal_mask(const GrayImage& img, const FieldGeometry& field);

/// Mean forward-difference gradient magnitude of luma over the field interior.
double blur_score(const RasterImage& img, const FieldGeometry& field);

std::vector<Defect> scan_defects(const RasterImage& img, const FieldGeometry& field, const GateConfig& cfg = {});

struct DefectCrop {
    RasterImage image;
    double retained_fraction = 1.0;
    int crop_top = 0;
    int crop_bottom = 0;
};

/// Zeroes top/bottom bands covering the band defects. A band's height is the smallest row span
/// from the field edge whose in-field area reaches the defect severity.
DefectCrop crop_defects(const RasterImage& img, const FieldGeometry& field, const std::vector<Defect>& defects);

struct Verdict {
    bool accepted = false;
    std::string reason;
};

/// Acceptance rule: retained >= 1 - reject_fraction and no global exposure/blur defect at or
/// above the reject severity. The reason names the first failed rule.
Verdict quality_verdict(double retained_fraction, const std::vector<Defect>& defects, const GateConfig& cfg = {});

struct GateResult {
    QualityReport report;
    std::optional<RasterImage> image;
    std::optional<FieldGeometry> field;
};

/// detect_field -> crop_field -> scan_defects -> crop_defects -> verdict. Never throws for
/// image content; field-detection failure yields a rejected report.
GateResult gate(const RasterImage& img, const GateConfig& cfg = {});

struct NormalizeConfig {
    ChannelWeights weights;
    double saturation_gain = 1.0;
    double contrast_gain = 1.0;
    int bins = 256;
};

/// Working channel: level correction, channel fusion, then histogram equalization inside the
/// roi. Samples outside the roi are 0.
GrayImage normalize(const RasterImage& img, const Mask& roi, const NormalizeConfig& cfg = {});
GrayImage normalize(const RasterImage& img, const FieldGeometry& field, const NormalizeConfig& cfg = {});

} // namespace fundus::preprocess
