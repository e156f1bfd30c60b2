#include <csignal>
#include <filesystem>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "ccta/classifier.hpp"
#include "ccta/curation.hpp"
#include "ccta/dataset.hpp"
#include "ccta/evaluation.hpp"
#include "ccta/phantom.hpp"
#include "ccta/service/cohort_eval.hpp"
#include "ccta/service/http.hpp"
#include "ccta/service/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string file_hash(const fs::path& p) { return fs::exists(p) ? ccta::sha256_hex(ccta::read_file(p.string())) : ""; }

void write_provenance(const fs::path& dir, const std::string& command, const json& config, const json& inputs,
                      const json& outputs, const json& failures = json::array()) {
    fs::create_directories(dir);
    json p{{"tool", "ccta"},
           {"command", command},
           {"config", config},
           {"inputs", inputs},
           {"outputs", outputs},
           {"failures", failures}};
    ccta::write_file((dir / "provenance.json").string(), p.dump(1) + "\n");
}

json read_json_file(const std::string& path) {
    try {
        return json::parse(ccta::read_file(path));
    } catch (const json::exception& e) {
        throw ccta::Error(ccta::ErrorKind::MalformedInput, path + ": " + e.what());
    }
}

int cmd_phantom(const std::string& spec_path, std::optional<std::uint64_t> seed, const std::string& out) {
    ccta::CohortSpec spec;
    if (!spec_path.empty()) spec = ccta::cohort_spec_from_json(read_json_file(spec_path));
    if (seed) spec.seed = *seed;
    spec.validate();
    const auto ids = ccta::write_cohort(out, spec);
    json outputs = json::object();
    for (const auto& id : ids) {
        outputs[id] = {{"volume_raw", file_hash(fs::path(out) / (id + ".vol.raw"))},
                       {"truth", file_hash(fs::path(out) / (id + ".truth.json"))}};
    }
    write_provenance(out, "phantom", ccta::to_json(spec), json::object(), outputs);
    std::cout << "wrote " << ids.size() << " cases to " << out << "\n";
    return 0;
}

int cmd_dataset(const std::string& cohort, int da_fold, std::uint64_t seed, const std::string& out) {
    const ccta::MpvParams params;
    const auto corpus = ccta::load_corpus(cohort, params);
    require(!corpus.cases.empty(), ccta::ErrorKind::EmptySubset, "cohort has no cases");
    const auto split = ccta::split_cases(corpus.case_entries(), {3, 1, 1}, seed);
    auto manifest = ccta::assemble_vessel_dataset(split, corpus.labels(), corpus.mpv_refs(), da_fold, seed);
    manifest.source = {{"cohort_dir", fs::absolute(cohort).lexically_normal().string()}, {"mpv", ccta::to_json(params)}};
    fs::create_directories(out);
    const auto text = ccta::manifest_text(manifest);
    ccta::write_file((fs::path(out) / "manifest.json").string(), text);
    const auto report = ccta::manifest_report(manifest);
    ccta::write_file((fs::path(out) / "manifest_report.txt").string(), report);
    write_provenance(out, "dataset", {{"da_fold", da_fold}, {"seed", seed}, {"split_ratio", {3, 1, 1}}},
                     {{"cohort.json", file_hash(fs::path(cohort) / "cohort.json")}},
                     {{"manifest.json", ccta::sha256_hex(text)}});
    std::cout << report;
    return 0;
}

ccta::MpvProvider provider_for(const ccta::DatasetManifest& m, std::shared_ptr<ccta::Corpus>& holder) {
    const std::string dir = m.source.value("cohort_dir", "");
    require(!dir.empty(), ccta::ErrorKind::ManifestError, "manifest does not name its cohort directory");
    const auto params = ccta::mpv_params_from_json(m.source.value("mpv", json::object()));
    holder = std::make_shared<ccta::Corpus>(ccta::load_corpus(dir, params));
    return holder->provider();
}

int cmd_train(const std::string& manifest_path, const std::string& config_path, std::optional<std::uint64_t> seed,
              const std::string& out) {
    const auto manifest = ccta::manifest_from_json(read_json_file(manifest_path));
    ccta::ModelSpec spec;
    ccta::TrainConfig cfg;
    if (!config_path.empty()) {
        const auto j = read_json_file(config_path);
        if (j.contains("model")) spec = ccta::model_spec_from_json(j.at("model"));
        if (j.contains("train")) cfg = ccta::train_config_from_json(j.at("train"));
    }
    if (seed) cfg.seed = *seed;
    std::shared_ptr<ccta::Corpus> corpus;
    const auto provider = provider_for(manifest, corpus);
    const auto model = ccta::train(manifest, spec, cfg, provider, [](const ccta::EpochLog& e) {
        std::cout << "epoch " << e.epoch << " loss " << e.loss << " val_acc " << e.val_accuracy
                  << (e.saved ? " saved" : "") << "\n";
    });
    fs::create_directories(out);
    const auto base = (fs::path(out) / "model").string();
    ccta::write_model(base, model);
    write_provenance(out, "train", {{"model", ccta::to_json(spec)}, {"train", ccta::to_json(cfg)}},
                     {{"manifest.json", file_hash(manifest_path)}},
                     {{"model_hash", ccta::model_hash(model)}, {"model.weights.raw", file_hash(base + ".weights.raw")}});
    std::cout << "model " << base << " hash " << ccta::model_hash(model) << "\n";
    return 0;
}

int cmd_eval(const std::string& model_path, const std::string& cohort, double threshold, bool tracking,
             const std::string& out) {
    const auto scorer = ccta::service::make_scorer(model_path == "baseline" ? "" : model_path);
    ccta::service::PipelineParams params;
    params.threshold = threshold;
    const auto ev = ccta::service::evaluate_cohort(
        cohort, *scorer, threshold,
        tracking ? ccta::service::ExtractionSource::Tracking : ccta::service::ExtractionSource::GroundTruth, params);
    fs::create_directories(out);
    const auto text = ccta::service::render_text(ev);
    ccta::write_file((fs::path(out) / "report.txt").string(), text);
    ccta::write_file((fs::path(out) / "report.json").string(), ccta::service::to_json(ev).dump(1) + "\n");
    if (ev.roc) ccta::write_file((fs::path(out) / "roc.csv").string(), ccta::roc_csv(*ev.roc));
    json failures = json::array();
    for (const auto& [id, why] : ev.incomplete) {
        failures.push_back({{"case_id", id}, {"reason", why}});
        std::cerr << "workflow-incomplete " << id << ": " << why << "\n";
    }
    write_provenance(out, "eval",
                     {{"threshold", threshold}, {"extractions", tracking ? "tracking" : "ground-truth"}, {"scorer", scorer->name()}},
                     {{"cohort.json", file_hash(fs::path(cohort) / "cohort.json")},
                      {"model.weights.raw", model_path == "baseline" ? "" : file_hash(model_path + ".weights.raw")}},
                     {{"report.json", file_hash(fs::path(out) / "report.json")}}, failures);
    std::cout << text;
    return ev.incomplete.empty() ? 0 : 2;
}

httplib::Server* g_server = nullptr;

int cmd_serve(const std::string& config_path, std::optional<double> threshold) {
    auto cfg = ccta::service::load_config(config_path);
    if (threshold) {
        cfg.threshold = *threshold;
        cfg.pipeline.threshold = *threshold;
        cfg.validate();
    }
    ccta::service::Service svc(cfg, ccta::service::make_scorer(cfg.model_path));
    svc.start_workers();
    httplib::Server server;
    ccta::service::register_routes(server, svc);
    g_server = &server;
    std::signal(SIGINT, [](int) {
        if (g_server) g_server->stop();
    });
    std::signal(SIGTERM, [](int) {
        if (g_server) g_server->stop();
    });
    write_provenance(cfg.data_dir, "serve",
                     {{"host", cfg.host}, {"port", cfg.port}, {"model", cfg.model_path}, {"threshold", cfg.threshold}},
                     json::object(), json::object());
    std::cout << "listening on " << cfg.host << ":" << cfg.port << std::endl;
    if (!server.listen(cfg.host, cfg.port)) {
        std::cerr << "error: cannot listen on " << cfg.host << ":" << cfg.port << "\n";
        return 1;
    }
    svc.stop();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Coronary CTA plaque-exclusion toolkit"};
    app.require_subcommand(1);

    std::string out = ".";
    std::string config;
    std::string cohort_spec;
    std::string cohort;
    std::string manifest;
    std::string model = "baseline";
    std::uint64_t seed_value = 0;
    int da_fold = 6;
    double threshold = 0.5;
    bool tracking = false;

    auto* phantom = app.add_subcommand("phantom", "Generate a synthetic cohort");
    phantom->add_option("--cohort-spec", cohort_spec, "Cohort spec JSON");
    auto* phantom_seed = phantom->add_option("--seed", seed_value, "Cohort seed");
    phantom->add_option("--out", out, "Output directory")->required();

    auto* dataset = app.add_subcommand("dataset", "Split a cohort and build the dataset manifest");
    dataset->add_option("--cohort", cohort, "Cohort directory")->required();
    dataset->add_option("--da-fold", da_fold, "Augmentation multiplier for training positives");
    dataset->add_option("--seed", seed_value, "Split and augmentation seed");
    dataset->add_option("--out", out, "Output directory")->required();

    auto* train = app.add_subcommand("train", "Train the classifier from a manifest");
    train->add_option("--manifest", manifest, "manifest.json")->required();
    train->add_option("--config", config, "JSON with optional 'model' and 'train' objects");
    auto* train_seed = train->add_option("--seed", seed_value, "Training seed");
    train->add_option("--out", out, "Output directory")->required();

    auto* eval = app.add_subcommand("eval", "Evaluate a classifier on a cohort");
    eval->add_option("--model", model, "Model base path or 'baseline'");
    eval->add_option("--cohort", cohort, "Cohort directory")->required();
    eval->add_option("--threshold", threshold, "Decision threshold");
    eval->add_flag("--tracking", tracking, "Use tracked centrelines instead of reference extractions");
    eval->add_option("--out", out, "Output directory")->required();

    auto* serve = app.add_subcommand("serve", "Run the HTTP service");
    serve->add_option("--config", config, "Service config JSON");
    auto* serve_threshold = serve->add_option("--threshold", threshold, "Decision threshold");

    CLI11_PARSE(app, argc, argv);

    try {
        if (phantom->parsed())
            return cmd_phantom(cohort_spec, phantom_seed->count() ? std::optional(seed_value) : std::nullopt, out);
        if (dataset->parsed()) return cmd_dataset(cohort, da_fold, seed_value, out);
        if (train->parsed())
            return cmd_train(manifest, config, train_seed->count() ? std::optional(seed_value) : std::nullopt, out);
        if (eval->parsed()) return cmd_eval(model, cohort, threshold, tracking, out);
        if (serve->parsed()) return cmd_serve(config, serve_threshold->count() ? std::optional(threshold) : std::nullopt);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
