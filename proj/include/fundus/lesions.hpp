#pragma once

#include "fundus/landmarks.hpp"
#include "fundus/morphology.hpp"
#include "fundus/preprocess.hpp"
#include "fundus/raster.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace fundus::lesions {

using landmarks::DiscLandmark;
using landmarks::MaculaLandmark;
using morphology::Region;
using preprocess::FieldGeometry;

struct ClusterStats {
    std::size_t member_count = 0;
    double mean_pairwise_distance = 0.0;
    double mean_distance_to_macula = 0.0;
    /// Expected mean pairwise distance of the same count scattered uniformly over the field.
    double scatter_baseline = 0.0;
};

struct LesionSet {
    Mask vessel_mask;
    std::vector<Region> hemorrhages;
    std::vector<Region> microaneurysms;
    std::vector<Region> hard_exudates;
    std::vector<Region> bright_unclassified;
    std::optional<ClusterStats> cluster;
};

struct DRGrade {
    int level = 0;
    bool referral = false;
    std::string rationale;
};

struct LesionConfig {
    /// Background-subtraction radius as a fraction of the field radius.
    double small_blur_scale = 0.05;
    /// Outer annulus omitted from the analysis, relative to the field radius.
    double edge_band = 0.08;
    /// Vessel-suppression kernel, shared with landmarks; vessels may attach to the disc within two
    /// kernel radii.
    double vessel_kernel_scale = 0.02;
    /// Disc zone radius = disc radius + small blur radius, plus this margin in disc radii.
    double disc_margin = 0.1;
    /// Macula core excluded from lesion search, in disc radii.
    double macula_core = 0.5;

    int dark_levels = 8;
    double dark_low = 0.01;
    double dark_high = 0.30;
    int bright_levels = 8;
    double bright_high = 0.995;
    double bright_low = 0.85;
    /// A region starts when its mean lies this many robust sigmas from the median; it keeps
    /// growing while the newly added pixels average at least grow_sigma.
    double seed_sigma = 5.0;
    double grow_sigma = 3.0;
    std::size_t min_area = 4;

    double oval_max_vessel = 0.35;
    double oval_min_lesion = 0.6;
    double hemorrhage_width_ratio = 1.5;
    /// Microaneurysm equivalent diameter bound, as a fraction of the disc radius.
    double ma_max_diameter = 1.0 / 8.0;
    int vessel_proximity = 2;
    /// Vessel widths within this fraction of the field radius count as local.
    double local_vessel_radius = 0.25;

    /// Cluster radius around the macula, in disc diameters.
    double exudate_cluster_radius = 2.0;
    double scatter_ratio = 0.7;
    int baseline_draws = 1000;
    std::uint64_t baseline_seed = 0x5ca77e7;

    int severe_hemorrhages = 10;
    int severe_quadrants = 3;
    /// Accepted images keeping less of their field than this are referred for review.
    double review_retained_below = 0.8;
};

/// Small-radius background subtraction of the normalized channel: img - bg + 0.5 inside `roi`,
/// 0.5 elsewhere. The background mean skips pixels flagged as outliers by a first pass.
GrayImage lesion_channel(const GrayImage& normalized, const Mask& roi, const FieldGeometry& field,
                         const LesionConfig& cfg = {});

/// Field minus edge band, disc zone, macula core and rows without signal.
Mask analysis_roi(const GrayImage& normalized, const FieldGeometry& field, const DiscLandmark& disc,
                  const std::optional<MaculaLandmark>& macula, const LesionConfig& cfg = {});

/// Disc zone: disc radius plus the small blur radius and a margin.
double disc_zone_radius(const DiscLandmark& disc, const FieldGeometry& field, const LesionConfig& cfg = {});

Mask segment_vessels(const GrayImage& img, const Mask& roi, const FieldGeometry& field, const DiscLandmark& disc,
                     const LesionConfig& cfg = {});

struct DarkLesions {
    std::vector<Region> hemorrhages;
    std::vector<Region> microaneurysms;
};

DarkLesions classify_dark_lesions(const GrayImage& img, const Mask& roi, const Mask& vessel_mask,
                                  const FieldGeometry& field, const DiscLandmark& disc, const LesionConfig& cfg = {});

struct BrightLesions {
    std::vector<Region> hard_exudates;
    std::vector<Region> bright_unclassified;
    std::optional<ClusterStats> cluster;
};

/// `roi` must already exclude disc, vessels, hemorrhages and the edge band.
BrightLesions detect_bright_lesions(const GrayImage& img, const Mask& roi, const FieldGeometry& field,
                                    const DiscLandmark& disc, const MaculaLandmark& macula,
                                    const LesionConfig& cfg = {});

/// Monte-Carlo mean pairwise distance of n uniform points in a disc of the given radius.
double scatter_baseline(std::size_t n, double radius, int draws, std::uint64_t seed);

ClusterStats cluster_stats(const std::vector<Region>& regions, const MaculaLandmark& macula);

DRGrade grade(const LesionSet& lesions, const preprocess::QualityReport& quality, const FieldGeometry& field,
              const MaculaLandmark& macula, const DiscLandmark& disc, const LesionConfig& cfg = {});

/// The full lesion stage on a normalized working channel.
LesionSet detect_lesions(const GrayImage& normalized, const FieldGeometry& field, const DiscLandmark& disc,
                         const MaculaLandmark& macula, const LesionConfig& cfg = {});

} // namespace fundus::lesions
