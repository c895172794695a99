#include "fundus/codec.hpp"
#include "fundus/config.hpp"
#include "fundus/error.hpp"
#include "fundus/evaluation.hpp"
#include "fundus/phantom.hpp"
#include "fundus/pipeline.hpp"
#include "fundus/service.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fundus;

namespace {

Bytes read_bytes(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    if (!f) throw InvalidInput("cannot open " + p.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    const std::string s = ss.str();
    return Bytes(s.begin(), s.end());
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    f << text;
    if (!f) throw StorageError("cannot write " + p.string());
}

void write_bytes(const fs::path& p, const Bytes& b) {
    std::ofstream f(p, std::ios::binary);
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size()));
    if (!f) throw StorageError("cannot write " + p.string());
}

PipelineConfig config_or_default(const std::string& path) { return path.empty() ? PipelineConfig{} : load_config(path); }

void save_outputs(const PipelineResult& res, const fs::path& out) {
    fs::create_directories(out);
    write_text(out / "report.json", to_json(res.report).dump(2) + "\n");
    if (!res.overlay_png.empty()) write_bytes(out / "overlay.png", res.overlay_png);
    write_text(out / "layers.json", res.layers.dump());
}

// grades.json: {"id": level|null, ...}; truth may also be a phantom manifest.
std::map<std::string, int> read_grades(const fs::path& p) {
    json j;
    {
        std::ifstream f(p);
        if (!f) throw InvalidInput("cannot open " + p.string());
        j = json::parse(f);
    }
    std::map<std::string, int> out;
    if (j.is_object() && j.contains("images")) {
        for (const auto& e : j.at("images")) out[e.at("id").get<std::string>()] = e.at("grade").get<int>();
        return out;
    }
    if (!j.is_object()) throw InvalidInput(p.string() + " must map case ids to grades");
    for (auto it = j.begin(); it != j.end(); ++it) {
        // rejected images carry no grade and count as level 0
        out[it.key()] = it->is_null() ? 0 : it->get<int>();
    }
    return out;
}

std::atomic<HttpServer*> g_server{nullptr};

void on_signal(int) {
    if (auto* s = g_server.load()) s->stop();
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Fundus image screening pipeline"};
    app.require_subcommand(1);

    std::string image, config_path, out_dir, batch_dir, pred_path, ref_path, data_dir = "data", host = "0.0.0.0";
    std::uint64_t seed = 7;
    int n = 10, port = 8080, workers = 0;
    std::vector<double> mix{0.4, 0.2, 0.3, 0.1};

    auto* analyze = app.add_subcommand("analyze", "Analyze one image and print its case report");
    analyze->add_option("image", image, "PNG or JPEG fundus image")->required()->check(CLI::ExistingFile);
    analyze->add_option("--config", config_path, "Pipeline config JSON")->check(CLI::ExistingFile);
    analyze->add_option("--out", out_dir, "Directory for report.json, overlay.png and layers.json");

    auto* batch = app.add_subcommand("batch", "Analyze every PNG/JPEG in a directory");
    batch->add_option("dir", batch_dir, "Input directory")->required()->check(CLI::ExistingDirectory);
    batch->add_option("--config", config_path, "Pipeline config JSON")->check(CLI::ExistingFile);
    batch->add_option("--out", out_dir, "Output directory (default <dir>/results)");

    auto* gen = app.add_subcommand("gen-phantom", "Write a synthetic phantom corpus with ground truth");
    gen->add_option("--seed", seed, "Corpus seed");
    gen->add_option("--n", n, "Image count")->check(CLI::NonNegativeNumber);
    gen->add_option("--mix", mix, "Grade proportions for levels 0-3")->expected(4);
    gen->add_option("--out", out_dir, "Output directory")->required();

    auto* eval = app.add_subcommand("eval", "Quadratic-weighted kappa of predicted vs reference grades");
    eval->add_option("--pred", pred_path, "grades.json from batch")->required()->check(CLI::ExistingFile);
    eval->add_option("--ref", ref_path, "Reference grades or phantom manifest.json")->required()->check(CLI::ExistingFile);

    auto* serve = app.add_subcommand("serve", "Run the HTTP upload/report service");
    serve->add_option("--port", port, "TCP port");
    serve->add_option("--host", host, "Bind address");
    serve->add_option("--data", data_dir, "Case store directory");
    serve->add_option("--config", config_path, "Pipeline config JSON")->check(CLI::ExistingFile);
    serve->add_option("--workers", workers, "Worker threads (overrides config)");

    auto* show = app.add_subcommand("config", "Print the effective configuration and its fingerprint");
    show->add_option("--config", config_path, "Pipeline config JSON")->check(CLI::ExistingFile);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*analyze) {
            const auto cfg = config_or_default(config_path);
            const auto res = run_pipeline(read_bytes(image), cfg, {}, fs::path(image).stem().string(), utc_now());
            if (!out_dir.empty()) save_outputs(res, out_dir);
            std::cout << to_json(res.report).dump(2) << '\n';
            return res.report.status == CaseStatus::Failed ? 2 : 0;
        }
        if (*batch) {
            const auto cfg = config_or_default(config_path);
            const fs::path out = out_dir.empty() ? fs::path(batch_dir) / "results" : fs::path(out_dir);
            std::vector<fs::path> files;
            for (const auto& e : fs::directory_iterator(batch_dir)) {
                auto ext = e.path().extension().string();
                std::transform(ext.begin(), ext.end(), ext.begin(), ::tolower);
                const auto name = e.path().filename().string();
                const bool derived = name.find(".vessels.") != std::string::npos;
                if (e.is_regular_file() && !derived && (ext == ".png" || ext == ".jpg" || ext == ".jpeg")) {
                    files.push_back(e.path());
                }
            }
            std::sort(files.begin(), files.end());
            json grades = json::object();
            for (const auto& f : files) {
                const std::string id = f.stem().string();
                const auto res = run_pipeline(read_bytes(f), cfg, {}, id, utc_now());
                save_outputs(res, out / id);
                grades[id] = res.report.grade ? json(res.report.grade->level) : json(nullptr);
                std::printf("%-24s %-9s %s\n", id.c_str(), to_string(res.report.status).c_str(),
                            res.report.grade ? ("level " + std::to_string(res.report.grade->level) +
                                                (res.report.grade->referral ? " referral" : ""))
                                                   .c_str()
                                             : res.report.reason.c_str());
            }
            fs::create_directories(out);
            write_text(out / "grades.json", grades.dump(2) + "\n");
            return 0;
        }
        if (*gen) {
            if (mix.size() != 4) throw InvalidInput("--mix needs four proportions");
            const auto entries = phantom::corpus(seed, n, {mix[0], mix[1], mix[2], mix[3]});
            phantom::write_corpus(entries, out_dir, seed);
            std::printf("wrote %zu phantoms to %s\n", entries.size(), out_dir.c_str());
            return 0;
        }
        if (*eval) {
            const auto pred = read_grades(pred_path);
            const auto ref = read_grades(ref_path);
            std::vector<int> a, b;
            for (const auto& [id, level] : ref) {
                auto it = pred.find(id);
                if (it == pred.end()) throw InvalidInput("no prediction for " + id);
                a.push_back(level);
                b.push_back(it->second);
            }
            const auto m = evaluation::confusion_from_grades(a, b, 5);
            std::cout << evaluation::format_confusion(m);
            try {
                std::printf("kappa %.3f (n=%zu)\n", evaluation::quadratic_weighted_kappa(m), a.size());
            } catch (const DegenerateAgreement&) {
                std::printf("kappa undefined (all grades identical, n=%zu)\n", a.size());
            }
            return 0;
        }
        if (*serve) {
            auto cfg = config_or_default(config_path);
            if (workers > 0) cfg.service.workers = workers;
            Service service(data_dir, cfg);
            HttpServer server(service);
            g_server = &server;
            std::signal(SIGINT, on_signal);
            std::signal(SIGTERM, on_signal);
            std::printf("serving on %s:%d, data in %s\n", host.c_str(), port, data_dir.c_str());
            std::fflush(stdout);
            server.run(host, port);
            g_server = nullptr;
            return 0;
        }
        if (*show) {
            const auto cfg = config_or_default(config_path);
            std::cout << to_json(cfg).dump(2) << "\nfingerprint " << fingerprint(cfg) << '\n';
            return 0;
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
