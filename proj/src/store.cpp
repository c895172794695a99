#include "fundus/store.hpp"

#include "fundus/error.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace fundus {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_string(JobState s) {
    switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Done: return "done";
    case JobState::Failed: return "failed";
    }
    return "failed";
}

JobState job_state_from_string(const std::string& s) {
    if (s == "queued") return JobState::Queued;
    if (s == "running") return JobState::Running;
    if (s == "done") return JobState::Done;
    if (s == "failed") return JobState::Failed;
    throw InvalidInput("unknown job state " + s);
}

void Job::advance(JobState next) {
    const bool ok = (state == JobState::Queued && (next == JobState::Running || next == JobState::Failed)) ||
                    (state == JobState::Running && (next == JobState::Done || next == JobState::Failed));
    if (!ok) throw Conflict("job " + id + " cannot move from " + to_string(state) + " to " + to_string(next));
    state = next;
}

nlohmann::json to_json(const Job& j) {
    return {{"id", j.id},
            {"state", to_string(j.state)},
            {"submitted", j.submitted},
            {"completed", j.completed},
            {"error", j.error},
            {"metadata", {{"clinic", j.metadata.clinic}, {"patient_ref", j.metadata.patient_ref}, {"eye", j.metadata.eye}}}};
}

Job job_from_json(const nlohmann::json& j) {
    try {
        Job job;
        job.id = j.at("id").get<std::string>();
        job.state = job_state_from_string(j.at("state").get<std::string>());
        job.submitted = j.at("submitted").get<std::string>();
        job.completed = j.at("completed").get<std::string>();
        job.error = j.at("error").get<std::string>();
        const auto& m = j.at("metadata");
        job.metadata = {m.at("clinic").get<std::string>(), m.at("patient_ref").get<std::string>(),
                        m.at("eye").get<std::string>()};
        return job;
    } catch (const json::exception& e) {
        throw InvalidInput(std::string("malformed job record: ") + e.what());
    }
}

CaseStore::CaseStore(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_ / "cases", ec);
    if (ec) throw StorageError("cannot create store at " + root_.string() + ": " + ec.message());
}

fs::path CaseStore::dir(const std::string& id) const {
    const bool safe = !id.empty() && std::all_of(id.begin(), id.end(), [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_';
    });
    if (!safe) throw NotFound("no case " + id);
    return root_ / "cases" / id;
}

std::string CaseStore::new_case_id() {
    std::lock_guard lock(id_mutex_);
    static thread_local std::mt19937_64 salt{std::random_device{}()};
    for (;;) {
        const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
        std::tm tm{};
        gmtime_r(&t, &tm);
        char buf[64];
        std::snprintf(buf, sizeof buf, "c%04d%02d%02d-%02d%02d%02d-%04x%04x", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                      tm.tm_hour, tm.tm_min, tm.tm_sec, (counter_++) & 0xffffu, static_cast<unsigned>(salt() & 0xffffu));
        std::error_code ec;
        if (fs::create_directory(root_ / "cases" / buf, ec)) return buf;
        if (ec) throw StorageError("cannot create case directory: " + ec.message());
    }
}

std::mutex& CaseStore::lock_for(const std::string& id) {
    std::lock_guard lock(locks_mutex_);
    auto& m = locks_[id];
    if (!m) m = std::make_unique<std::mutex>();
    return *m;
}

void CaseStore::write_file(const std::string& id, const std::string& name, const std::string& bytes) {
    const fs::path d = dir(id);
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw StorageError("cannot create " + d.string() + ": " + ec.message());
    const fs::path tmp = d / (name + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw StorageError("cannot write " + tmp.string());
    }
    fs::rename(tmp, d / name, ec);
    if (ec) throw StorageError("cannot commit " + (d / name).string() + ": " + ec.message());
}

std::string CaseStore::read_file(const std::string& id, const std::string& name) const {
    const fs::path p = dir(id) / name;
    std::ifstream f(p, std::ios::binary);
    if (!f) {
        if (!fs::exists(dir(id))) throw NotFound("no case " + id);
        throw NotFound("case " + id + " has no " + name);
    }
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void CaseStore::save_upload(const std::string& id, const Bytes& payload) {
    write_file(id, "upload.bin", std::string(payload.begin(), payload.end()));
}

Bytes CaseStore::load_upload(const std::string& id) const {
    const std::string s = read_file(id, "upload.bin");
    return Bytes(s.begin(), s.end());
}

void CaseStore::save_job(const Job& job) { write_file(job.id, "job.json", to_json(job).dump(2)); }

Job CaseStore::load_job(const std::string& id) const {
    const std::string text = read_file(id, "job.json");
    try {
        return job_from_json(json::parse(text));
    } catch (const json::parse_error& e) {
        throw StorageError("job record " + id + " is corrupt: " + e.what());
    } catch (const InvalidInput& e) {
        throw StorageError("job record " + id + " is corrupt: " + e.what());
    }
}

void CaseStore::save_result(const PipelineResult& result) {
    const auto& id = result.report.case_id;
    if (!result.overlay_png.empty()) {
        write_file(id, "overlay.png", std::string(result.overlay_png.begin(), result.overlay_png.end()));
    }
    write_file(id, "layers.json", result.layers.dump());
    save_report(result.report);
}

void CaseStore::save_report(const CaseReport& report) { write_file(report.case_id, "report.json", to_json(report).dump(2)); }

CaseReport CaseStore::load_report(const std::string& id) const {
    const std::string text = read_file(id, "report.json");
    try {
        return report_from_json(json::parse(text));
    } catch (const json::parse_error& e) {
        throw StorageError("report " + id + " is corrupt: " + e.what());
    } catch (const InvalidInput& e) {
        throw StorageError("report " + id + " is corrupt: " + e.what());
    }
}

Bytes CaseStore::load_overlay(const std::string& id) const {
    const std::string s = read_file(id, "overlay.png");
    return Bytes(s.begin(), s.end());
}

nlohmann::json CaseStore::load_layers(const std::string& id) const {
    try {
        return json::parse(read_file(id, "layers.json"));
    } catch (const json::parse_error& e) {
        throw StorageError("layers of " + id + " are corrupt: " + e.what());
    }
}

bool CaseStore::has_report(const std::string& id) const { return fs::exists(dir(id) / "report.json"); }

std::vector<std::string> CaseStore::case_ids() const {
    std::vector<std::string> ids;
    std::error_code ec;
    for (const auto& e : fs::directory_iterator(root_ / "cases", ec)) {
        if (e.is_directory()) ids.push_back(e.path().filename().string());
    }
    std::sort(ids.begin(), ids.end());
    return ids;
}

CaseListing CaseStore::list(const CaseFilter& f) const {
    auto within = [](const std::string& ts, const std::string& from, const std::string& to) {
        if (!from.empty() && ts < from) return false;
        if (!to.empty() && ts.substr(0, to.size()) > to) return false;
        return true;
    };
    CaseListing out;
    std::vector<json> matched;
    for (const auto& id : case_ids()) {
        try {
            if (!fs::exists(dir(id) / "job.json")) continue;
            const Job job = load_job(id);
            if (!f.clinic.empty() && job.metadata.clinic != f.clinic) continue;
            if (!within(job.submitted, f.from, f.to)) continue;
            std::optional<CaseReport> rep;
            if (job.state == JobState::Done) rep = load_report(id);
            const bool reviewed = rep && rep->review.has_value();
            if (f.reviewed && *f.reviewed != reviewed) continue;
            std::string state = to_string(job.state);
            if (rep && rep->status == CaseStatus::Rejected) state = "rejected";
            if (!f.state.empty() && state != f.state && to_string(job.state) != f.state) continue;
            json item = {{"case_id", id},
                         {"clinic", job.metadata.clinic},
                         {"patient_ref", job.metadata.patient_ref},
                         {"eye", job.metadata.eye},
                         {"state", state},
                         {"job_state", to_string(job.state)},
                         {"submitted", job.submitted},
                         {"completed", job.completed},
                         {"reviewed", reviewed},
                         {"summary", job.state == JobState::Failed ? job.error : ""}};
            if (rep) {
                if (rep->grade) {
                    item["summary"] = "level " + std::to_string(rep->grade->level) +
                                      (rep->grade->referral ? ", referral" : ", no referral");
                } else {
                    item["summary"] = "rejected: " + rep->reason;
                }
            }
            matched.push_back(std::move(item));
        } catch (const StorageError&) {
            out.unreadable.push_back(id);
        } catch (const NotFound&) {
            out.unreadable.push_back(id);
        }
    }
    out.total = matched.size();
    for (std::size_t i = f.offset; i < matched.size() && out.items.size() < f.limit; ++i) out.items.push_back(matched[i]);
    return out;
}

} // namespace fundus
