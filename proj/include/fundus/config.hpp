#pragma once

#include "fundus/landmarks.hpp"
#include "fundus/lesions.hpp"
#include "fundus/preprocess.hpp"

#include <json.hpp>

#include <cstddef>
#include <string>

namespace fundus {

struct ServiceConfig {
    std::size_t max_upload_bytes = 20u * 1024u * 1024u;
    int workers = 1;
};

/// Every tunable constant of the pipeline and service.
struct PipelineConfig {
    preprocess::GateConfig gate;
    preprocess::NormalizeConfig normalize;
    landmarks::LandmarkConfig landmarks;
    lesions::LesionConfig lesions;
    ServiceConfig service;

    /// Throws InvalidInput naming the first constant outside its range.
    void validate() const;
};

nlohmann::json to_json(const PipelineConfig& cfg);

/// Starts from the defaults and overrides the keys present. Unknown keys and wrong types are
/// InvalidInput. The result is validated.
PipelineConfig config_from_json(const nlohmann::json& j);
PipelineConfig load_config(const std::string& path);

/// Hex SHA-256 of the compact, key-sorted JSON serialization.
std::string fingerprint(const PipelineConfig& cfg);

extern const char* const kPipelineVersion;

} // namespace fundus
