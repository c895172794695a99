#include "fundus/config.hpp"

#include "fundus/error.hpp"

#include <openssl/evp.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <type_traits>

namespace fundus {

const char* const kPipelineVersion = "0.1.0";

namespace {

using nlohmann::json;

template <class V>
void visit(preprocess::GateConfig& c, V&& v) {
    v("crop_scale", c.crop_scale);
    v("reject_fraction", c.reject_fraction);
    v("field_luma_floor", c.field_luma_floor);
    v("full_frame_fraction", c.full_frame_fraction);
    v("strata", c.strata);
    v("stratum_violation", c.stratum_violation);
    v("overexposed_luma", c.overexposed_luma);
    v("underexposed_luma", c.underexposed_luma);
    v("blur_floor", c.blur_floor);
    v("global_reject_severity", c.global_reject_severity);
    v("rainbow_hue_margin", c.rainbow_hue_margin);
    v("rainbow_stratum_fraction", c.rainbow_stratum_fraction);
    v("eyelash_luma", c.eyelash_luma);
    v("eyelash_min_area_fraction", c.eyelash_min_area_fraction);
    v("eyelash_max_ovalness", c.eyelash_max_ovalness);
}

template <class V>
void visit(preprocess::NormalizeConfig& c, V&& v) {
    v("weight_red", c.weights.red);
    v("weight_green", c.weights.green);
    v("weight_blue", c.weights.blue);
    v("saturation_gain", c.saturation_gain);
    v("contrast_gain", c.contrast_gain);
    v("bins", c.bins);
}

template <class V>
void visit(landmarks::LandmarkConfig& c, V&& v) {
    v("vessel_kernel_scale", c.vessel_kernel_scale);
    v("disc_size_prior", c.disc_size_prior);
    v("size_prior_sigma", c.size_prior_sigma);
    v("size_ratio_min", c.size_ratio_min);
    v("size_ratio_max", c.size_ratio_max);
    v("growth_limit", c.growth_limit);
    v("disc_scan_high", c.disc_scan_high);
    v("disc_scan_low", c.disc_scan_low);
    v("disc_scan_levels", c.disc_scan_levels);
    v("border_band", c.border_band);
    v("min_prominence", c.min_prominence);
    v("brighten_delta", c.brighten_delta);
    v("stability_shift", c.stability_shift);
    v("center_exclusion", c.center_exclusion);
    v("large_blur_scale", c.large_blur_scale);
    v("macula_distance_diameters", c.macula_distance_diameters);
    v("macula_compactness", c.macula_compactness);
    v("macula_min_depth", c.macula_min_depth);
    v("macula_search_offset", c.macula_search_offset);
    v("macula_cross_check", c.macula_cross_check);
}

template <class V>
void visit(lesions::LesionConfig& c, V&& v) {
    v("small_blur_scale", c.small_blur_scale);
    v("edge_band", c.edge_band);
    v("vessel_kernel_scale", c.vessel_kernel_scale);
    v("disc_margin", c.disc_margin);
    v("macula_core", c.macula_core);
    v("dark_levels", c.dark_levels);
    v("dark_low", c.dark_low);
    v("dark_high", c.dark_high);
    v("bright_levels", c.bright_levels);
    v("bright_high", c.bright_high);
    v("bright_low", c.bright_low);
    v("seed_sigma", c.seed_sigma);
    v("grow_sigma", c.grow_sigma);
    v("min_area", c.min_area);
    v("oval_max_vessel", c.oval_max_vessel);
    v("oval_min_lesion", c.oval_min_lesion);
    v("hemorrhage_width_ratio", c.hemorrhage_width_ratio);
    v("ma_max_diameter", c.ma_max_diameter);
    v("vessel_proximity", c.vessel_proximity);
    v("local_vessel_radius", c.local_vessel_radius);
    v("exudate_cluster_radius", c.exudate_cluster_radius);
    v("scatter_ratio", c.scatter_ratio);
    v("baseline_draws", c.baseline_draws);
    v("baseline_seed", c.baseline_seed);
    v("severe_hemorrhages", c.severe_hemorrhages);
    v("severe_quadrants", c.severe_quadrants);
    v("review_retained_below", c.review_retained_below);
}

template <class V>
void visit(ServiceConfig& c, V&& v) {
    v("max_upload_bytes", c.max_upload_bytes);
    v("workers", c.workers);
}

template <class T>
json section(const T& c) {
    json j = json::object();
    visit(const_cast<T&>(c), [&](const char* name, auto& value) { j[name] = value; });
    return j;
}

template <class T>
void read_section(const json& j, const char* name, T& c) {
    if (!j.contains(name)) return;
    const json& s = j.at(name);
    if (!s.is_object()) throw InvalidInput(std::string("config section '") + name + "' must be an object");
    std::size_t seen = 0;
    visit(c, [&](const char* key, auto& value) {
        using V = std::remove_reference_t<decltype(value)>;
        auto it = s.find(key);
        if (it == s.end()) return;
        ++seen;
        const bool ok = std::is_floating_point_v<V> ? it->is_number()
                        : std::is_unsigned_v<V>     ? it->is_number_unsigned()
                                                    : it->is_number_integer();
        if (!ok) throw InvalidInput(std::string("config ") + name + "." + key + " has the wrong type");
        value = it->template get<V>();
    });
    if (seen != s.size()) {
        for (auto it = s.begin(); it != s.end(); ++it) {
            bool known = false;
            visit(c, [&](const char* key, auto&) { known = known || it.key() == key; });
            if (!known) throw InvalidInput(std::string("unknown config key ") + name + "." + it.key());
        }
    }
}

void require(bool ok, const char* what) {
    if (!ok) throw InvalidInput(std::string("config constant out of range: ") + what);
}

bool unit(double v) { return v >= 0.0 && v <= 1.0; }
bool open_unit(double v) { return v > 0.0 && v < 1.0; }

} // namespace

void PipelineConfig::validate() const {
    const auto& g = gate;
    require(g.crop_scale > 0.0 && g.crop_scale <= 1.0, "gate.crop_scale");
    require(g.reject_fraction >= 0.0 && g.reject_fraction < 1.0, "gate.reject_fraction");
    require(open_unit(g.field_luma_floor), "gate.field_luma_floor");
    require(open_unit(g.full_frame_fraction), "gate.full_frame_fraction");
    require(g.strata >= 2 && g.strata <= 256, "gate.strata");
    require(unit(g.stratum_violation), "gate.stratum_violation");
    require(open_unit(g.overexposed_luma) && open_unit(g.underexposed_luma) && g.underexposed_luma < g.overexposed_luma,
            "gate exposure lumas");
    require(g.blur_floor >= 0.0, "gate.blur_floor");
    require(unit(g.global_reject_severity), "gate.global_reject_severity");
    require(g.rainbow_hue_margin >= 0 && g.rainbow_hue_margin <= 255, "gate.rainbow_hue_margin");
    require(unit(g.rainbow_stratum_fraction), "gate.rainbow_stratum_fraction");
    require(open_unit(g.eyelash_luma), "gate.eyelash_luma");
    require(unit(g.eyelash_min_area_fraction), "gate.eyelash_min_area_fraction");
    require(unit(g.eyelash_max_ovalness), "gate.eyelash_max_ovalness");

    require(normalize.weights.valid(), "normalize weights");
    require(normalize.saturation_gain > 0.0 && normalize.contrast_gain > 0.0, "normalize gains");
    require(normalize.bins >= 2 && normalize.bins <= 65536, "normalize.bins");

    const auto& l = landmarks;
    require(open_unit(l.vessel_kernel_scale), "landmarks.vessel_kernel_scale");
    require(l.disc_size_prior > 0.0 && l.disc_size_prior <= 0.5, "landmarks.disc_size_prior");
    require(l.size_prior_sigma > 0.0, "landmarks.size_prior_sigma");
    require(l.size_ratio_min > 0.0 && l.size_ratio_min < 1.0 && l.size_ratio_max > 1.0, "landmarks size ratios");
    require(l.growth_limit >= 1.0, "landmarks.growth_limit");
    require(unit(l.disc_scan_high) && unit(l.disc_scan_low) && l.disc_scan_low < l.disc_scan_high, "landmarks disc scan");
    require(l.disc_scan_levels >= 1, "landmarks.disc_scan_levels");
    require(open_unit(l.border_band), "landmarks.border_band");
    require(l.min_prominence >= 0.0, "landmarks.min_prominence");
    require(l.brighten_delta > 0.0 && l.brighten_delta < 0.5, "landmarks.brighten_delta");
    require(l.stability_shift > 0.0, "landmarks.stability_shift");
    require(open_unit(l.center_exclusion), "landmarks.center_exclusion");
    require(open_unit(l.large_blur_scale), "landmarks.large_blur_scale");
    require(l.macula_distance_diameters > 0.0, "landmarks.macula_distance_diameters");
    require(unit(l.macula_compactness), "landmarks.macula_compactness");
    require(l.macula_min_depth >= 0.0 && l.macula_search_offset >= 0.0 && l.macula_cross_check > 0.0,
            "landmarks macula search");

    const auto& s = lesions;
    require(open_unit(s.small_blur_scale), "lesions.small_blur_scale");
    require(open_unit(s.edge_band), "lesions.edge_band");
    require(open_unit(s.vessel_kernel_scale), "lesions.vessel_kernel_scale");
    require(s.disc_margin >= 0.0 && s.macula_core >= 0.0, "lesions exclusion margins");
    require(s.dark_levels >= 1 && s.bright_levels >= 1, "lesions threshold levels");
    require(unit(s.dark_low) && unit(s.dark_high) && s.dark_low < s.dark_high, "lesions dark schedule");
    require(unit(s.bright_low) && unit(s.bright_high) && s.bright_low < s.bright_high, "lesions bright schedule");
    require(s.seed_sigma > 0.0 && s.grow_sigma > 0.0, "lesions contrast gates");
    require(s.min_area >= 1, "lesions.min_area");
    require(unit(s.oval_max_vessel) && unit(s.oval_min_lesion), "lesions ovalness bounds");
    require(s.hemorrhage_width_ratio > 0.0, "lesions.hemorrhage_width_ratio");
    require(s.ma_max_diameter > 0.0, "lesions.ma_max_diameter");
    require(s.vessel_proximity >= 0, "lesions.vessel_proximity");
    require(s.local_vessel_radius > 0.0, "lesions.local_vessel_radius");
    require(s.exudate_cluster_radius > 0.0, "lesions.exudate_cluster_radius");
    require(s.scatter_ratio > 0.0, "lesions.scatter_ratio");
    require(s.baseline_draws >= 1, "lesions.baseline_draws");
    require(s.severe_hemorrhages >= 1 && s.severe_quadrants >= 1 && s.severe_quadrants <= 4, "lesions severe grade");
    require(unit(s.review_retained_below), "lesions.review_retained_below");

    require(service.max_upload_bytes >= 1, "service.max_upload_bytes");
    require(service.workers >= 1 && service.workers <= 64, "service.workers");
}

nlohmann::json to_json(const PipelineConfig& cfg) {
    return json{{"gate", section(cfg.gate)},
                {"normalize", section(cfg.normalize)},
                {"landmarks", section(cfg.landmarks)},
                {"lesions", section(cfg.lesions)},
                {"service", section(cfg.service)}};
}

PipelineConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidInput("config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const auto& k = it.key();
        if (k != "gate" && k != "normalize" && k != "landmarks" && k != "lesions" && k != "service") {
            throw InvalidInput("unknown config section " + k);
        }
    }
    PipelineConfig cfg;
    read_section(j, "gate", cfg.gate);
    read_section(j, "normalize", cfg.normalize);
    read_section(j, "landmarks", cfg.landmarks);
    read_section(j, "lesions", cfg.lesions);
    read_section(j, "service", cfg.service);
    cfg.validate();
    return cfg;
}

PipelineConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw InvalidInput("cannot open config " + path);
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw InvalidInput("config " + path + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

std::string fingerprint(const PipelineConfig& cfg) {
    const std::string text = to_json(cfg).dump();
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw Error("SHA-256 digest failed");
    }
    std::string hex;
    hex.reserve(2 * len);
    char buf[3];
    for (unsigned int i = 0; i < len; ++i) {
        std::snprintf(buf, sizeof buf, "%02x", digest[i]);
        hex += buf;
    }
    return hex;
}

} // namespace fundus
