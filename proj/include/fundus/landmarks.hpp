#pragma once

#include "fundus/morphology.hpp"
#include "fundus/preprocess.hpp"
#include "fundus/raster.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fundus::landmarks {

using preprocess::FieldGeometry;

struct DiscLandmark {
    double x = 0.0;
    double y = 0.0;
    double radius = 0.0;
    double confidence = 0.0;
    bool stable = true;
};

enum class MaculaMethod { DarkestRegion, Geometric };
std::string to_string(MaculaMethod m);
MaculaMethod macula_method_from_string(const std::string& s);

struct MaculaLandmark {
    double x = 0.0;
    double y = 0.0;
    MaculaMethod method = MaculaMethod::Geometric;
    double confidence = 0.0;
};

enum class GeometryReason { Ok, DiscCentered, DiscMissing };
std::string to_string(GeometryReason r);

struct GeometryVerdict {
    bool ok = false;
    GeometryReason reason = GeometryReason::DiscMissing;
};

struct LandmarkConfig {
    /// Closing radius as a fraction of the field radius.
    double vessel_kernel_scale = 0.02;
    /// Prior disc diameter as a fraction of the field diameter.
    double disc_size_prior = 0.125;
    /// Width of the log-normal size prior (natural-log units of the radius ratio).
    double size_prior_sigma = 0.25;
    /// Admissible equivalent radius relative to the prior.
    double size_ratio_min = 0.5;
    double size_ratio_max = 2.0;
    /// A candidate stops growing once the region it belongs to exceeds this many prior areas.
    double growth_limit = 3.0;
    /// Percentile span of the descending disc scan.
    double disc_scan_high = 0.999;
    double disc_scan_low = 0.90;
    int disc_scan_levels = 12;
    /// Candidates touching the outer annulus of this relative width are border-adjacent.
    double border_band = 0.08;
    /// Candidate mean minus surrounding annulus mean, in interquartile ranges of the field,
    /// that a disc must exceed.
    double min_prominence = 3.0;
    double brighten_delta = 0.05;
    /// Stability tolerance in disc radii.
    double stability_shift = 0.5;
    /// Disc closer than this fraction of the field radius to the center is "centered".
    double center_exclusion = 0.25;
    double large_blur_scale = 0.4;
    double macula_distance_diameters = 2.5;
    double macula_compactness = 0.3;
    /// Darkest-region depth below the search median, in MADs, needed to trust it.
    double macula_min_depth = 6.0;
    /// The macula search starts this many disc radii past the disc along the disc-center axis.
    double macula_search_offset = 2.0;
    /// Darkest-region and geometric estimates further apart than this many disc radii lower
    /// the confidence.
    double macula_cross_check = 2.5;
};

struct DiscCandidate {
    morphology::Region region;  // with region_props on the scanned image
    bool border_adjacent = false;
};

struct Landmarks {
    DiscLandmark disc;
    MaculaLandmark macula;
};

/// Grayscale closing with a disc of radius vessel_kernel_scale * field radius.
GrayImage suppress_vessels(const GrayImage& img, const FieldGeometry& field, const LandmarkConfig& cfg = {});

/// Descending scan over the brightest in-field percentiles of a vessel-suppressed image.
std::vector<DiscCandidate> detect_disc_candidates(const GrayImage& img, const FieldGeometry& field,
                                                  const LandmarkConfig& cfg = {});

/// Picks the disc among candidates and runs the brighten-stability check. Throws
/// DiscMissingError when no candidate survives.
DiscLandmark select_disc(const std::vector<DiscCandidate>& candidates, const GrayImage& img,
                         const FieldGeometry& field, const LandmarkConfig& cfg = {});

/// suppress_vessels -> detect_disc_candidates -> select_disc.
DiscLandmark detect_disc(const GrayImage& working, const FieldGeometry& field, const LandmarkConfig& cfg = {});

GeometryVerdict validate_geometry(const std::optional<DiscLandmark>& disc, const FieldGeometry& field,
                                  const LandmarkConfig& cfg = {});

/// Geometric estimate: macula_distance_diameters disc diameters from the disc toward the field
/// center.
MaculaLandmark geometric_macula(const DiscLandmark& disc, const FieldGeometry& field, const LandmarkConfig& cfg = {});

/// Darkest region of the large-radius background-subtracted image beyond the disc, with the
/// geometric fallback when that minimum is shallow or not compact.
/// `suppressed` may carry suppress_vessels(working) when the caller already has it.
MaculaLandmark detect_macula(const GrayImage& working, const DiscLandmark& disc, const FieldGeometry& field,
                             const LandmarkConfig& cfg = {}, const GrayImage* suppressed = nullptr);

} // namespace fundus::landmarks
