#pragma once

#include "fundus/preprocess.hpp"
#include "fundus/raster.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fundus::phantom {

using preprocess::DefectKind;
using preprocess::DefectLocation;
using preprocess::FieldGeometry;

enum class Geometry { Normal, DiscCentered, DiscAbsent };
enum class ExudateLayout { Clustered, Scattered };
enum class LesionKind { Hemorrhage, Microaneurysm, HardExudate };

std::string to_string(Geometry g);
std::string to_string(LesionKind k);

/// A seeded acquisition defect. Band kinds cover `severity` of the analysis-field area from
/// the given edge; a Global underexposure darkens the whole field.
struct SeededDefect {
    DefectKind kind = DefectKind::Overexposure;
    DefectLocation location = DefectLocation::Bottom;
    double severity = 0.2;
};

struct Range {
    double lo = 0.0;
    double hi = 0.0;
};

struct DiscPlacement {
    double x = 0.0;
    double y = 0.0;
    double radius = 0.0;
};

struct PhantomSpec {
    std::uint64_t seed = 42;
    int width = 1536;
    int height = 1152;
    Geometry geometry = Geometry::Normal;
    /// Explicit disc; auto-placed right or left of center otherwise.
    std::optional<DiscPlacement> disc;
    std::optional<bool> disc_on_left;
    double macula_contrast = 1.0;
    int vessel_depth = 5;

    int microaneurysms = 0;
    int hemorrhages = 0;
    int exudates = 0;
    ExudateLayout exudate_layout = ExudateLayout::Clustered;
    /// Lesion radii as fractions of the disc radius.
    Range hemorrhage_radius{0.22, 0.38};
    Range microaneurysm_radius{0.03, 0.05};
    Range exudate_radius{0.05, 0.08};
    /// Clustered exudates lie within this many disc diameters of the macula.
    double exudate_cluster_diameters = 1.0;
    /// Spread hemorrhages round-robin over the four field quadrants.
    bool spread_hemorrhages = false;

    std::vector<SeededDefect> defects;
    int blur_radius = 0;
    double noise_sigma = 3.0;
    /// Target grade 0-3; level 4 is not generatable.
    int grade = 0;

    /// Lesion counts drawn for a target grade from the seed.
    static PhantomSpec for_grade(std::uint64_t seed, int level);
};

struct Placement {
    LesionKind kind = LesionKind::Hemorrhage;
    double x = 0.0;
    double y = 0.0;
    double radius = 0.0;
};

struct DiscTruth {
    bool present = true;
    double x = 0.0;
    double y = 0.0;
    double radius = 0.0;
};

struct GroundTruth {
    /// Full imaged field and the 0.9-radius analysis field derived from it.
    FieldGeometry field;
    FieldGeometry analysis_field;
    Geometry geometry = Geometry::Normal;
    DiscTruth disc;
    double macula_x = 0.0;
    double macula_y = 0.0;
    Mask vessel_mask;
    Mask hemorrhage_mask;
    Mask microaneurysm_mask;
    Mask exudate_mask;
    std::vector<Placement> placements;
    std::vector<SeededDefect> defects;
    int blur_radius = 0;
    int grade = 0;
    /// Seeded vessel contrast in the green channel (fractional darkening at full coverage).
    double vessel_contrast = 0.0;
};

struct Phantom {
    RasterImage image;
    GroundTruth truth;
};

/// Renders a synthetic fundus and its exact ground truth. Identical specs give identical
/// bytes. Throws InvalidInput when a lesion cannot be placed inside the field.
Phantom generate(const PhantomSpec& spec);

struct CorpusEntry {
    std::string id;
    PhantomSpec spec;
    Phantom phantom;
};

/// n phantoms whose grade histogram matches `grade_mix` (levels 0-3) by largest remainder,
/// in seeded order. Throws InvalidInput if the mix does not sum to 1.
std::vector<CorpusEntry> corpus(std::uint64_t seed, int n, const std::array<double, 4>& grade_mix);

/// Same draw as corpus() without rendering.
std::vector<std::pair<std::string, PhantomSpec>> corpus_specs(std::uint64_t seed, int n,
                                                              const std::array<double, 4>& grade_mix);

/// Writes <id>.png, <id>.truth.json and the mask PNGs per entry plus manifest.json.
void write_corpus(const std::vector<CorpusEntry>& entries, const std::filesystem::path& dir, std::uint64_t seed);

} // namespace fundus::phantom
