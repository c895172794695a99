#pragma once

#include "fundus/config.hpp"
#include "fundus/pipeline.hpp"
#include "fundus/store.hpp"

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace fundus {

/// In-process job queue over a CaseStore. Jobs left queued by a previous process are picked up
/// again; jobs caught running are marked failed.
class Service {
public:
    Service(std::filesystem::path data_dir, PipelineConfig cfg);
    ~Service();
    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Throws PayloadTooLarge or InvalidInput; never dedups identical uploads.
    Job submit(const Bytes& payload, const CaseMetadata& meta);
    Job status(const std::string& id) const;
    /// Throws NotFound for unknown ids and Conflict before the job is done.
    CaseReport report(const std::string& id) const;
    Bytes overlay(const std::string& id) const;
    nlohmann::json layers(const std::string& id) const;
    /// Records a review once; repeating the same decision id is a no-op, any other second
    /// decision is a Conflict.
    CaseReport review(const std::string& id, ReviewDecision decision);
    CaseListing list(const CaseFilter& filter) const { return store_.list(filter); }

    /// Blocks until the queue is empty and no worker is busy.
    void wait_idle();
    std::size_t queue_depth() const;

    const PipelineConfig& config() const { return cfg_; }
    CaseStore& store() { return store_; }

private:
    void worker();
    void process(const std::string& id);
    void require_done(const std::string& id) const;

    PipelineConfig cfg_;
    CaseStore store_;
    mutable std::mutex mutex_;
    std::condition_variable wake_;
    std::condition_variable idle_;
    std::deque<std::string> queue_;
    std::size_t busy_ = 0;
    bool stopping_ = false;
    std::vector<std::thread> workers_;
};

/// Registers the JSON API on an httplib server.
void mount_routes(httplib::Server& server, Service& service);

/// Owns an httplib server running on a background thread.
class HttpServer {
public:
    explicit HttpServer(Service& service);
    ~HttpServer();

    /// Binds and starts serving; port 0 picks a free port. Returns the bound port.
    int start(const std::string& host, int port);
    /// Serves on the calling thread until stop().
    void run(const std::string& host, int port);
    void stop();

private:
    Service& service_;
    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
};

} // namespace fundus
