#include "fundus/service.hpp"

#include "fundus/error.hpp"

#include <httplib.h>

#include <algorithm>

namespace fundus {

using nlohmann::json;

Service::Service(std::filesystem::path data_dir, PipelineConfig cfg) : cfg_(std::move(cfg)), store_(std::move(data_dir)) {
    cfg_.validate();
    for (const auto& id : store_.case_ids()) {
        Job job;
        try {
            job = store_.load_job(id);
        } catch (const Error&) {
            continue;
        }
        if (job.state == JobState::Queued) {
            queue_.push_back(id);
        } else if (job.state == JobState::Running) {
            job.advance(JobState::Failed);
            job.error = "interrupted by a service restart";
            job.completed = utc_now();
            store_.save_job(job);
        }
    }
    for (int i = 0; i < cfg_.service.workers; ++i) workers_.emplace_back([this] { worker(); });
}

Service::~Service() {
    {
        std::lock_guard lock(mutex_);
        stopping_ = true;
    }
    wake_.notify_all();
    for (auto& t : workers_) t.join();
}

Job Service::submit(const Bytes& payload, const CaseMetadata& meta) {
    if (payload.size() > cfg_.service.max_upload_bytes) {
        throw PayloadTooLarge("upload of " + std::to_string(payload.size()) + " bytes exceeds the limit of " +
                              std::to_string(cfg_.service.max_upload_bytes));
    }
    if (payload.empty()) throw InvalidInput("upload is empty");
    meta.validate();
    Job job;
    job.id = store_.new_case_id();
    job.metadata = meta;
    job.submitted = utc_now();
    {
        std::lock_guard lock(store_.lock_for(job.id));
        store_.save_upload(job.id, payload);
        store_.save_job(job);
    }
    {
        std::lock_guard lock(mutex_);
        queue_.push_back(job.id);
    }
    wake_.notify_one();
    return job;
}

Job Service::status(const std::string& id) const { return store_.load_job(id); }

void Service::require_done(const std::string& id) const {
    const Job job = store_.load_job(id);
    if (job.state == JobState::Failed) throw Conflict("job " + id + " failed: " + job.error);
    if (job.state != JobState::Done) throw Conflict("job " + id + " is " + to_string(job.state));
}

CaseReport Service::report(const std::string& id) const {
    require_done(id);
    return store_.load_report(id);
}

Bytes Service::overlay(const std::string& id) const {
    require_done(id);
    return store_.load_overlay(id);
}

nlohmann::json Service::layers(const std::string& id) const {
    require_done(id);
    return store_.load_layers(id);
}

CaseReport Service::review(const std::string& id, ReviewDecision decision) {
    decision.validate();
    std::lock_guard lock(store_.lock_for(id));
    require_done(id);
    CaseReport rep = store_.load_report(id);
    if (rep.status != CaseStatus::Accepted) throw Conflict("case " + id + " carries no grade to review");
    if (rep.review) {
        if (!decision.decision_id.empty() && rep.review->decision_id == decision.decision_id) return rep;
        throw Conflict("case " + id + " was already reviewed");
    }
    if (decision.action == "confirm") {
        decision.level = rep.grade->level;
        decision.referral = rep.grade->referral;
    }
    decision.decided_at = utc_now();
    rep.review = decision;
    store_.save_report(rep);
    return rep;
}

void Service::wait_idle() {
    std::unique_lock lock(mutex_);
    idle_.wait(lock, [this] { return queue_.empty() && busy_ == 0; });
}

std::size_t Service::queue_depth() const {
    std::lock_guard lock(mutex_);
    return queue_.size();
}

void Service::worker() {
    for (;;) {
        std::string id;
        {
            std::unique_lock lock(mutex_);
            wake_.wait(lock, [this] { return stopping_ || !queue_.empty(); });
            if (stopping_) return;
            id = queue_.front();
            queue_.pop_front();
            ++busy_;
        }
        process(id);
        {
            std::lock_guard lock(mutex_);
            --busy_;
        }
        idle_.notify_all();
    }
}

void Service::process(const std::string& id) {
    Job job;
    try {
        std::lock_guard lock(store_.lock_for(id));
        job = store_.load_job(id);
        job.advance(JobState::Running);
        store_.save_job(job);
    } catch (const Error&) {
        return;
    }
    try {
        const Bytes payload = store_.load_upload(id);
        PipelineResult res = run_pipeline(payload, cfg_, job.metadata, id, job.submitted);
        std::lock_guard lock(store_.lock_for(id));
        if (res.report.status == CaseStatus::Failed) {
            job.error = res.report.reason;
            job.advance(JobState::Failed);
        } else {
            store_.save_result(res);
            job.advance(JobState::Done);
        }
        job.completed = utc_now();
        store_.save_job(job);
    } catch (const std::exception& e) {
        std::lock_guard lock(store_.lock_for(id));
        job.error = e.what();
        if (job.state == JobState::Running) job.advance(JobState::Failed);
        job.completed = utc_now();
        try {
            store_.save_job(job);
        } catch (const Error&) {
        }
    }
}

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(2), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& message) {
    send_json(res, status, {{"error", message}});
}

template <class F>
void guarded(httplib::Response& res, F&& f) {
    try {
        f();
    } catch (const NotFound& e) {
        send_error(res, 404, e.what());
    } catch (const Conflict& e) {
        send_error(res, 409, e.what());
    } catch (const PayloadTooLarge& e) {
        send_error(res, 413, e.what());
    } catch (const InvalidInput& e) {
        send_error(res, 400, e.what());
    } catch (const std::exception& e) {
        send_error(res, 500, e.what());
    }
}

std::string field_value(const httplib::Request& req, const std::string& name) {
    if (req.has_file(name)) return req.get_file_value(name).content;
    if (req.has_param(name)) return req.get_param_value(name);
    return {};
}

} // namespace

void mount_routes(httplib::Server& server, Service& service) {
    server.set_payload_max_length(service.config().service.max_upload_bytes + 64 * 1024);

    server.Get("/api/health", [&service](const httplib::Request&, httplib::Response& res) {
        send_json(res, 200, {{"status", "ok"}, {"version", kPipelineVersion}, {"queue_depth", service.queue_depth()},
                             {"config_fingerprint", fingerprint(service.config())}});
    });

    server.Post("/api/cases", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            if (!req.has_file("image")) throw InvalidInput("multipart field 'image' is required");
            const auto file = req.get_file_value("image");
            const CaseMetadata meta{field_value(req, "clinic"), field_value(req, "patient_ref"), field_value(req, "eye")};
            const Job job = service.submit(Bytes(file.content.begin(), file.content.end()), meta);
            send_json(res, 202, {{"job_id", job.id}, {"case_id", job.id}, {"state", to_string(job.state)}});
        });
    });

    server.Get("/api/jobs/:id", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, to_json(service.status(req.path_params.at("id")))); });
    });

    server.Get("/api/cases", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            CaseFilter f;
            f.clinic = req.get_param_value("clinic");
            f.from = req.get_param_value("from");
            f.to = req.get_param_value("to");
            f.state = req.get_param_value("state");
            if (req.has_param("reviewed")) f.reviewed = req.get_param_value("reviewed") == "true";
            try {
                if (req.has_param("offset")) f.offset = std::stoul(req.get_param_value("offset"));
                if (req.has_param("limit")) f.limit = std::min<std::size_t>(200, std::stoul(req.get_param_value("limit")));
            } catch (const std::exception&) {
                throw InvalidInput("offset and limit must be non-negative integers");
            }
            const auto listing = service.list(f);
            send_json(res, 200, {{"total", listing.total}, {"offset", f.offset}, {"limit", f.limit},
                                 {"items", listing.items}, {"unreadable", listing.unreadable}});
        });
    });

    server.Get("/api/cases/:id", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, to_json(service.report(req.path_params.at("id")))); });
    });

    server.Get("/api/cases/:id/overlay.png", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            const Bytes png = service.overlay(req.path_params.at("id"));
            res.status = 200;
            res.set_content(std::string(png.begin(), png.end()), "image/png");
        });
    });

    server.Get("/api/cases/:id/layers", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] { send_json(res, 200, service.layers(req.path_params.at("id"))); });
    });

    server.Post("/api/cases/:id/review", [&service](const httplib::Request& req, httplib::Response& res) {
        guarded(res, [&] {
            json body;
            try {
                body = json::parse(req.body);
            } catch (const json::parse_error& e) {
                throw InvalidInput(std::string("review body is not JSON: ") + e.what());
            }
            send_json(res, 200, to_json(service.review(req.path_params.at("id"), review_from_json(body))));
        });
    });
}

HttpServer::HttpServer(Service& service) : service_(service), server_(std::make_unique<httplib::Server>()) {
    mount_routes(*server_, service_);
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::start(const std::string& host, int port) {
    const int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw StorageError("cannot bind " + host + ":" + std::to_string(port));
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
    return bound;
}

void HttpServer::run(const std::string& host, int port) {
    if (!server_->listen(host, port)) throw StorageError("cannot listen on " + host + ":" + std::to_string(port));
}

void HttpServer::stop() {
    if (server_) server_->stop();
    if (thread_.joinable()) thread_.join();
}

} // namespace fundus
