#pragma once

#include "fundus/codec.hpp"
#include "fundus/pipeline.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace fundus {

enum class JobState { Queued, Running, Done, Failed };
std::string to_string(JobState s);
JobState job_state_from_string(const std::string& s);

struct Job {
    std::string id;
    JobState state = JobState::Queued;
    std::string submitted;
    std::string completed;
    std::string error;
    CaseMetadata metadata;

    /// Moves forward only: queued -> running -> done|failed. Throws Conflict otherwise.
    void advance(JobState next);
};

nlohmann::json to_json(const Job& j);
Job job_from_json(const nlohmann::json& j);

struct CaseFilter {
    std::string clinic;
    /// Inclusive bounds compared against the received timestamp; a date-only bound covers the
    /// whole day.
    std::string from;
    std::string to;
    std::string state;
    std::optional<bool> reviewed;
    std::size_t offset = 0;
    std::size_t limit = 50;
};

struct CaseListing {
    std::size_t total = 0;
    std::vector<nlohmann::json> items;
    /// Case ids whose records could not be read.
    std::vector<std::string> unreadable;
};

/// One directory per case under <root>/cases: job.json, upload.bin, report.json, overlay.png,
/// layers.json. Every file is written to a temporary name and renamed into place.
class CaseStore {
public:
    explicit CaseStore(std::filesystem::path root);

    const std::filesystem::path& root() const { return root_; }

    std::string new_case_id();

    void save_upload(const std::string& id, const Bytes& payload);
    Bytes load_upload(const std::string& id) const;
    void save_job(const Job& job);
    /// Throws NotFound for an unknown id and StorageError for an unreadable record.
    Job load_job(const std::string& id) const;
    void save_result(const PipelineResult& result);
    void save_report(const CaseReport& report);
    CaseReport load_report(const std::string& id) const;
    Bytes load_overlay(const std::string& id) const;
    nlohmann::json load_layers(const std::string& id) const;
    bool has_report(const std::string& id) const;

    std::vector<std::string> case_ids() const;
    CaseListing list(const CaseFilter& filter) const;

    /// Serializes writers of one case.
    std::mutex& lock_for(const std::string& id);

private:
    std::filesystem::path dir(const std::string& id) const;
    void write_file(const std::string& id, const std::string& name, const std::string& bytes);
    std::string read_file(const std::string& id, const std::string& name) const;

    std::filesystem::path root_;
    std::mutex locks_mutex_;
    std::map<std::string, std::unique_ptr<std::mutex>> locks_;
    std::mutex id_mutex_;
    unsigned counter_ = 0;
};

} // namespace fundus
