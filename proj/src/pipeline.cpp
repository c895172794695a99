#include "fundus/pipeline.hpp"

#include "fundus/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>

namespace fundus {

using nlohmann::json;

void CaseMetadata::validate() const {
    if (clinic.empty()) throw InvalidInput("metadata field 'clinic' is required");
    if (patient_ref.empty()) throw InvalidInput("metadata field 'patient_ref' is required");
    if (eye != "left" && eye != "right") throw InvalidInput("metadata field 'eye' must be 'left' or 'right'");
}

void ReviewDecision::validate() const {
    if (reviewer.empty()) throw InvalidInput("review needs a reviewer");
    if (action != "confirm" && action != "override") throw InvalidInput("review action must be confirm or override");
    if (level < 0 || level > 4) throw InvalidInput("review level must be 0-4");
    if (action == "override" && note.empty()) throw InvalidInput("an override needs a note");
}

std::string to_string(CaseStatus s) {
    switch (s) {
    case CaseStatus::Accepted: return "accepted";
    case CaseStatus::Rejected: return "rejected";
    case CaseStatus::Failed: return "failed";
    }
    return "failed";
}

CaseStatus case_status_from_string(const std::string& s) {
    if (s == "accepted") return CaseStatus::Accepted;
    if (s == "rejected") return CaseStatus::Rejected;
    if (s == "failed") return CaseStatus::Failed;
    throw InvalidInput("unknown case status " + s);
}

std::string utc_now() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

namespace {

RegionSummary summarize(const morphology::Region& r) {
    return {r.cx, r.cy, r.area, r.bbox, r.ovalness, r.mean_width};
}

std::vector<RegionSummary> summarize(const std::vector<morphology::Region>& rs) {
    std::vector<RegionSummary> out;
    out.reserve(rs.size());
    for (const auto& r : rs) out.push_back(summarize(r));
    return out;
}

json region_json(const RegionSummary& r) {
    return {{"cx", r.cx},
            {"cy", r.cy},
            {"area", r.area},
            {"bbox", {r.bbox.x0, r.bbox.y0, r.bbox.x1, r.bbox.y1}},
            {"ovalness", r.ovalness},
            {"mean_width", r.mean_width}};
}

RegionSummary region_from(const json& j) {
    RegionSummary r;
    r.cx = j.at("cx").get<double>();
    r.cy = j.at("cy").get<double>();
    r.area = j.at("area").get<std::size_t>();
    const auto& b = j.at("bbox");
    r.bbox = {b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(), b.at(3).get<int>()};
    r.ovalness = j.at("ovalness").get<double>();
    r.mean_width = j.at("mean_width").get<double>();
    return r;
}

json regions_json(const std::vector<RegionSummary>& rs) {
    json a = json::array();
    for (const auto& r : rs) a.push_back(region_json(r));
    return a;
}

std::vector<RegionSummary> regions_from(const json& j) {
    std::vector<RegionSummary> out;
    for (const auto& e : j) out.push_back(region_from(e));
    return out;
}

json landmarks_json(const landmarks::Landmarks& lm) {
    return {{"disc",
             {{"x", lm.disc.x},
              {"y", lm.disc.y},
              {"radius", lm.disc.radius},
              {"confidence", lm.disc.confidence},
              {"stable", lm.disc.stable}}},
            {"macula",
             {{"x", lm.macula.x},
              {"y", lm.macula.y},
              {"method", landmarks::to_string(lm.macula.method)},
              {"confidence", lm.macula.confidence}}}};
}

landmarks::Landmarks landmarks_from(const json& j) {
    landmarks::Landmarks lm;
    const auto& d = j.at("disc");
    lm.disc = {d.at("x").get<double>(), d.at("y").get<double>(), d.at("radius").get<double>(),
               d.at("confidence").get<double>(), d.at("stable").get<bool>()};
    const auto& m = j.at("macula");
    lm.macula = {m.at("x").get<double>(), m.at("y").get<double>(),
                 landmarks::macula_method_from_string(m.at("method").get<std::string>()),
                 m.at("confidence").get<double>()};
    return lm;
}

json cluster_json(const lesions::ClusterStats& c) {
    return {{"member_count", c.member_count},
            {"mean_pairwise_distance", c.mean_pairwise_distance},
            {"mean_distance_to_macula", c.mean_distance_to_macula},
            {"scatter_baseline", c.scatter_baseline}};
}

json lesions_json(const LesionSummary& s) {
    json j = {{"counts",
               {{"hemorrhages", s.hemorrhages.size()},
                {"microaneurysms", s.microaneurysms.size()},
                {"hard_exudates", s.hard_exudates.size()},
                {"bright_unclassified", s.bright_unclassified.size()}}},
              {"vessel_pixels", s.vessel_pixels},
              {"hemorrhages", regions_json(s.hemorrhages)},
              {"microaneurysms", regions_json(s.microaneurysms)},
              {"hard_exudates", regions_json(s.hard_exudates)},
              {"bright_unclassified", regions_json(s.bright_unclassified)},
              {"cluster", nullptr}};
    if (s.cluster) j["cluster"] = cluster_json(*s.cluster);
    return j;
}

LesionSummary lesions_from(const json& j) {
    LesionSummary s;
    s.vessel_pixels = j.at("vessel_pixels").get<std::size_t>();
    s.hemorrhages = regions_from(j.at("hemorrhages"));
    s.microaneurysms = regions_from(j.at("microaneurysms"));
    s.hard_exudates = regions_from(j.at("hard_exudates"));
    s.bright_unclassified = regions_from(j.at("bright_unclassified"));
    if (const auto& c = j.at("cluster"); !c.is_null()) {
        s.cluster = lesions::ClusterStats{c.at("member_count").get<std::size_t>(),
                                          c.at("mean_pairwise_distance").get<double>(),
                                          c.at("mean_distance_to_macula").get<double>(),
                                          c.at("scatter_baseline").get<double>()};
    }
    return s;
}

// Row runs [y, x0, x1] of a region list.
json runs_of(const Mask& m) {
    json out = json::array();
    for (int y = 0; y < m.height(); ++y) {
        int x = 0;
        while (x < m.width()) {
            if (!m.at(x, y)) {
                ++x;
                continue;
            }
            const int x0 = x;
            while (x < m.width() && m.at(x, y)) ++x;
            out.push_back({y, x0, x - 1});
        }
    }
    return out;
}

json runs_of(const std::vector<morphology::Region>& rs, int w, int h) {
    Mask m(w, h);
    for (const auto& r : rs) morphology::paint(m, r);
    return runs_of(m);
}

void paint_color(RasterImage& img, const morphology::Region& r, std::uint8_t cr, std::uint8_t cg, std::uint8_t cb) {
    for (const auto& p : r.pixels) img.set(p.x, p.y, cr, cg, cb);
}

void draw_circle(RasterImage& img, double cx, double cy, double radius, std::uint8_t c, double thickness = 1.5) {
    const int x0 = std::max(0, static_cast<int>(std::floor(cx - radius - thickness)));
    const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(cx + radius + thickness)));
    const int y0 = std::max(0, static_cast<int>(std::floor(cy - radius - thickness)));
    const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(cy + radius + thickness)));
    for (int y = y0; y <= y1; ++y) {
        for (int x = x0; x <= x1; ++x) {
            if (std::abs(std::hypot(x - cx, y - cy) - radius) <= thickness * 0.5) img.set(x, y, c, c, c);
        }
    }
}

CaseReport base_report(const PipelineConfig& cfg, const CaseMetadata& meta, const std::string& case_id,
                       const std::string& received) {
    CaseReport r;
    r.case_id = case_id;
    r.received = received;
    r.metadata = meta;
    r.config_fingerprint = fingerprint(cfg);
    r.pipeline_version = kPipelineVersion;
    return r;
}

} // namespace

RasterImage render_overlay(const RasterImage& base, const lesions::LesionSet* set, const landmarks::Landmarks* lm) {
    RasterImage out = base;
    if (set) {
        for (std::size_t i = 0; i < out.pixel_count(); ++i) {
            if (set->vessel_mask.pixel_count() == out.pixel_count() && set->vessel_mask[i]) {
                out.plane(RasterImage::Red)[i] = 0;
                out.plane(RasterImage::Green)[i] = 90;
                out.plane(RasterImage::Blue)[i] = 255;
            }
        }
        for (const auto& r : set->hemorrhages) paint_color(out, r, 255, 0, 0);
        for (const auto& r : set->hard_exudates) paint_color(out, r, 255, 255, 0);
        for (const auto& r : set->bright_unclassified) paint_color(out, r, 0, 255, 255);
        for (const auto& r : set->microaneurysms) {
            paint_color(out, r, 255, 140, 0);
            // dots are too small to see unmarked
            const double ring = std::max(6.0, r.equivalent_diameter());
            const int x0 = static_cast<int>(std::floor(r.cx - ring - 1));
            const int y0 = static_cast<int>(std::floor(r.cy - ring - 1));
            for (int y = std::max(0, y0); y <= std::min(out.height() - 1, y0 + static_cast<int>(2 * ring) + 2); ++y) {
                for (int x = std::max(0, x0); x <= std::min(out.width() - 1, x0 + static_cast<int>(2 * ring) + 2); ++x) {
                    if (std::abs(std::hypot(x - r.cx, y - r.cy) - ring) <= 0.75) out.set(x, y, 255, 140, 0);
                }
            }
        }
    }
    if (lm) {
        draw_circle(out, lm->disc.x, lm->disc.y, lm->disc.radius, 255, 2.0);
        draw_circle(out, lm->macula.x, lm->macula.y, lm->disc.radius, 255, 2.0);
    }
    return out;
}

nlohmann::json layers_json(int width, int height, const lesions::LesionSet* set, const landmarks::Landmarks* lm) {
    json j = {{"width", width}, {"height", height}, {"layers", json::object()}, {"disc", nullptr}, {"macula", nullptr}};
    if (set) {
        j["layers"]["vessels"] = runs_of(set->vessel_mask);
        j["layers"]["hemorrhages"] = runs_of(set->hemorrhages, width, height);
        j["layers"]["microaneurysms"] = runs_of(set->microaneurysms, width, height);
        j["layers"]["hard_exudates"] = runs_of(set->hard_exudates, width, height);
        j["layers"]["bright_unclassified"] = runs_of(set->bright_unclassified, width, height);
    }
    if (lm) {
        j["disc"] = {{"x", lm->disc.x}, {"y", lm->disc.y}, {"radius", lm->disc.radius}};
        j["macula"] = {{"x", lm->macula.x}, {"y", lm->macula.y}};
    }
    return j;
}

PipelineResult run_pipeline(const RasterImage& image, const PipelineConfig& cfg, const CaseMetadata& meta,
                            const std::string& case_id, const std::string& received) {
    PipelineResult res;
    CaseReport& r = res.report;
    r = base_report(cfg, meta, case_id, received);
    r.width = image.width();
    r.height = image.height();
    r.overlay = "overlay.png";

    auto reject = [&](const RasterImage& base, std::string reason) {
        r.status = CaseStatus::Rejected;
        r.reason = std::move(reason);
        res.overlay_png = encode_png(render_overlay(base, nullptr, nullptr));
        res.layers = layers_json(image.width(), image.height(), nullptr, nullptr);
        return res;
    };

    auto gated = preprocess::gate(image, cfg.gate);
    r.quality = gated.report;
    r.field = gated.field;
    if (!gated.report.accepted) return reject(image, gated.report.reason);

    const RasterImage& img = *gated.image;
    const auto& field = *gated.field;
    const RasterImage leveled = adjust_levels(img, cfg.normalize.saturation_gain, cfg.normalize.contrast_gain);
    const GrayImage working = fuse_channels(leveled, cfg.normalize.weights);

    landmarks::Landmarks lm;
    try {
        const GrayImage suppressed = landmarks::suppress_vessels(working, field, cfg.landmarks);
        const auto candidates = landmarks::detect_disc_candidates(suppressed, field, cfg.landmarks);
        lm.disc = landmarks::select_disc(candidates, suppressed, field, cfg.landmarks);
        const auto verdict = landmarks::validate_geometry(lm.disc, field, cfg.landmarks);
        if (!verdict.ok) return reject(img, landmarks::to_string(verdict.reason));
        lm.macula = landmarks::detect_macula(working, lm.disc, field, cfg.landmarks, &suppressed);
    } catch (const DiscMissingError&) {
        return reject(img, landmarks::to_string(landmarks::GeometryReason::DiscMissing));
    }

    const auto set = lesions::detect_lesions(working, field, lm.disc, lm.macula, cfg.lesions);
    const auto g = lesions::grade(set, r.quality, field, lm.macula, lm.disc, cfg.lesions);

    r.status = CaseStatus::Accepted;
    r.landmarks = lm;
    LesionSummary s;
    s.vessel_pixels = set.vessel_mask.count();
    s.hemorrhages = summarize(set.hemorrhages);
    s.microaneurysms = summarize(set.microaneurysms);
    s.hard_exudates = summarize(set.hard_exudates);
    s.bright_unclassified = summarize(set.bright_unclassified);
    s.cluster = set.cluster;
    r.lesions = std::move(s);
    r.grade = g;

    res.overlay_png = encode_png(render_overlay(img, &set, &lm));
    res.layers = layers_json(img.width(), img.height(), &set, &lm);
    return res;
}

PipelineResult run_pipeline(std::span<const std::uint8_t> bytes, const PipelineConfig& cfg, const CaseMetadata& meta,
                            const std::string& case_id, const std::string& received) {
    RasterImage image;
    try {
        image = decode_image(bytes);
    } catch (const Error& e) {
        PipelineResult res;
        res.report = base_report(cfg, meta, case_id, received);
        res.report.status = CaseStatus::Failed;
        res.report.reason = std::string("decode failed: ") + e.what();
        res.layers = layers_json(0, 0, nullptr, nullptr);
        return res;
    }
    return run_pipeline(image, cfg, meta, case_id, received);
}

nlohmann::json to_json(const preprocess::QualityReport& q) {
    json defects = json::array();
    for (const auto& d : q.defects) {
        defects.push_back({{"kind", preprocess::to_string(d.kind)},
                           {"location", preprocess::to_string(d.location)},
                           {"severity", d.severity}});
    }
    return {{"defects", defects},
            {"crop_top", q.crop_top},
            {"crop_bottom", q.crop_bottom},
            {"retained_fraction", q.retained_fraction},
            {"accepted", q.accepted},
            {"reason", q.reason}};
}

preprocess::QualityReport quality_from_json(const nlohmann::json& j) {
    preprocess::QualityReport q;
    for (const auto& d : j.at("defects")) {
        q.defects.push_back({preprocess::defect_kind_from_string(d.at("kind").get<std::string>()),
                             preprocess::defect_location_from_string(d.at("location").get<std::string>()),
                             d.at("severity").get<double>()});
    }
    q.crop_top = j.at("crop_top").get<int>();
    q.crop_bottom = j.at("crop_bottom").get<int>();
    q.retained_fraction = j.at("retained_fraction").get<double>();
    q.accepted = j.at("accepted").get<bool>();
    q.reason = j.at("reason").get<std::string>();
    return q;
}

nlohmann::json to_json(const lesions::DRGrade& g) {
    return {{"level", g.level}, {"referral", g.referral}, {"rationale", g.rationale}};
}

nlohmann::json to_json(const ReviewDecision& r) {
    return {{"decision_id", r.decision_id}, {"reviewer", r.reviewer}, {"action", r.action}, {"level", r.level},
            {"referral", r.referral},       {"note", r.note},         {"decided_at", r.decided_at}};
}

ReviewDecision review_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw InvalidInput("review must be a JSON object");
    try {
        ReviewDecision r;
        r.decision_id = j.value("decision_id", std::string{});
        r.reviewer = j.at("reviewer").get<std::string>();
        r.action = j.at("action").get<std::string>();
        r.level = j.at("level").get<int>();
        r.referral = j.at("referral").get<bool>();
        r.note = j.value("note", std::string{});
        r.decided_at = j.value("decided_at", std::string{});
        return r;
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("malformed review: ") + e.what());
    }
}

nlohmann::json to_json(const CaseReport& r) {
    json j = {{"case_id", r.case_id},
              {"received", r.received},
              {"metadata", {{"clinic", r.metadata.clinic}, {"patient_ref", r.metadata.patient_ref}, {"eye", r.metadata.eye}}},
              {"status", to_string(r.status)},
              {"reason", r.reason},
              {"width", r.width},
              {"height", r.height},
              {"quality", to_json(r.quality)},
              {"field", nullptr},
              {"landmarks", nullptr},
              {"lesions", nullptr},
              {"grade", nullptr},
              {"overlay", r.overlay},
              {"config_fingerprint", r.config_fingerprint},
              {"pipeline_version", r.pipeline_version},
              {"review", nullptr}};
    if (r.field) j["field"] = {{"cx", r.field->cx}, {"cy", r.field->cy}, {"radius", r.field->radius}};
    if (r.landmarks) j["landmarks"] = landmarks_json(*r.landmarks);
    if (r.lesions) j["lesions"] = lesions_json(*r.lesions);
    if (r.grade) j["grade"] = to_json(*r.grade);
    if (r.review) j["review"] = to_json(*r.review);
    return j;
}

CaseReport report_from_json(const nlohmann::json& j) {
    try {
        CaseReport r;
        r.case_id = j.at("case_id").get<std::string>();
        r.received = j.at("received").get<std::string>();
        const auto& m = j.at("metadata");
        r.metadata = {m.at("clinic").get<std::string>(), m.at("patient_ref").get<std::string>(),
                      m.at("eye").get<std::string>()};
        r.status = case_status_from_string(j.at("status").get<std::string>());
        r.reason = j.at("reason").get<std::string>();
        r.width = j.at("width").get<int>();
        r.height = j.at("height").get<int>();
        r.quality = quality_from_json(j.at("quality"));
        if (const auto& f = j.at("field"); !f.is_null()) {
            r.field = preprocess::FieldGeometry{f.at("cx").get<double>(), f.at("cy").get<double>(),
                                                f.at("radius").get<double>()};
        }
        if (const auto& l = j.at("landmarks"); !l.is_null()) r.landmarks = landmarks_from(l);
        if (const auto& l = j.at("lesions"); !l.is_null()) r.lesions = lesions_from(l);
        if (const auto& g = j.at("grade"); !g.is_null()) {
            r.grade = lesions::DRGrade{g.at("level").get<int>(), g.at("referral").get<bool>(),
                                       g.at("rationale").get<std::string>()};
        }
        r.overlay = j.at("overlay").get<std::string>();
        r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
        r.pipeline_version = j.at("pipeline_version").get<std::string>();
        if (const auto& v = j.at("review"); !v.is_null()) r.review = review_from_json(v);
        return r;
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("malformed case report: ") + e.what());
    }
}

} // namespace fundus
