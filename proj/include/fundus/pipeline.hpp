#pragma once

#include "fundus/codec.hpp"
#include "fundus/config.hpp"
#include "fundus/landmarks.hpp"
#include "fundus/lesions.hpp"
#include "fundus/preprocess.hpp"

#include <json.hpp>

#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fundus {

struct CaseMetadata {
    std::string clinic;
    std::string patient_ref;
    std::string eye;  // "left" | "right"

    /// Throws InvalidInput when a field is missing or the eye side is unknown.
    void validate() const;
};

struct RegionSummary {
    double cx = 0.0;
    double cy = 0.0;
    std::size_t area = 0;
    morphology::BBox bbox;
    double ovalness = 0.0;
    double mean_width = 0.0;
};

struct LesionSummary {
    std::size_t vessel_pixels = 0;
    std::vector<RegionSummary> hemorrhages;
    std::vector<RegionSummary> microaneurysms;
    std::vector<RegionSummary> hard_exudates;
    std::vector<RegionSummary> bright_unclassified;
    std::optional<lesions::ClusterStats> cluster;
};

struct ReviewDecision {
    std::string decision_id;
    std::string reviewer;
    std::string action;  // "confirm" | "override"
    int level = 0;
    bool referral = false;
    std::string note;
    std::string decided_at;

    /// Override needs a non-empty note; level in 0-4.
    void validate() const;
};

enum class CaseStatus { Accepted, Rejected, Failed };
std::string to_string(CaseStatus s);
CaseStatus case_status_from_string(const std::string& s);

struct CaseReport {
    std::string case_id;
    std::string received;
    CaseMetadata metadata;
    CaseStatus status = CaseStatus::Failed;
    /// Rejection or failure reason; empty when accepted.
    std::string reason;
    int width = 0;
    int height = 0;
    preprocess::QualityReport quality;
    std::optional<preprocess::FieldGeometry> field;
    std::optional<landmarks::Landmarks> landmarks;
    std::optional<LesionSummary> lesions;
    std::optional<lesions::DRGrade> grade;
    std::string overlay;
    std::string config_fingerprint;
    std::string pipeline_version;
    std::optional<ReviewDecision> review;
};

struct PipelineResult {
    CaseReport report;
    /// PNG bytes; empty when the payload could not be decoded.
    Bytes overlay_png;
    /// Per-layer run-length masks for client-side toggles.
    nlohmann::json layers;
};

/// decode -> gate -> fuse -> disc -> geometry -> macula -> vessels -> dark lesions -> bright
/// lesions -> grade -> overlay. Never throws for image content: decode failures give a failed
/// report and gate/geometry failures a rejected one.
PipelineResult run_pipeline(std::span<const std::uint8_t> bytes, const PipelineConfig& cfg,
                            const CaseMetadata& meta = {}, const std::string& case_id = {},
                            const std::string& received = {});
PipelineResult run_pipeline(const RasterImage& image, const PipelineConfig& cfg, const CaseMetadata& meta = {},
                            const std::string& case_id = {}, const std::string& received = {});

/// Vessels blue, hemorrhages red, microaneurysms orange, exudates yellow, unclassified bright
/// regions cyan, disc and macula outlined in white.
RasterImage render_overlay(const RasterImage& base, const lesions::LesionSet* set, const landmarks::Landmarks* lm);

nlohmann::json layers_json(int width, int height, const lesions::LesionSet* set, const landmarks::Landmarks* lm);

nlohmann::json to_json(const preprocess::QualityReport& q);
preprocess::QualityReport quality_from_json(const nlohmann::json& j);
nlohmann::json to_json(const lesions::DRGrade& g);
nlohmann::json to_json(const ReviewDecision& r);
ReviewDecision review_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CaseReport& r);
/// Throws InvalidInput on a malformed document.
CaseReport report_from_json(const nlohmann::json& j);

/// Current UTC time as ISO-8601 with milliseconds.
std::string utc_now();

} // namespace fundus
