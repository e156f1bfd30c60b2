#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "ccta/annotation.hpp"
#include "ccta/classifier.hpp"
#include "ccta/evaluation.hpp"
#include "ccta/phantom.hpp"
#include "ccta/service/pipeline.hpp"
#include "ccta/service/store.hpp"
#include "ccta/volume.hpp"

namespace ccta::service {

struct ServiceConfig {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string data_dir = "ccta-data";
    std::string model_path;  ///< model base path; empty selects the baseline scorer
    double threshold = 0.5;
    unsigned workers = 1;
    std::uint64_t snapshot_every = 50;
    PipelineParams pipeline{};

    void validate() const {
        require(port > 0 && port < 65536, ErrorKind::InvalidArgument, "port out of range");
        require(threshold >= 0 && threshold <= 1, ErrorKind::InvalidArgument, "threshold must be in [0, 1]");
        require(!data_dir.empty(), ErrorKind::InvalidArgument, "data_dir must not be empty");
        require(workers >= 1, ErrorKind::InvalidArgument, "workers must be >= 1");
    }
};

inline ServiceConfig config_from_json(const nlohmann::json& j) {
    ServiceConfig c;
    try {
        c.host = j.value("host", c.host);
        c.port = j.value("port", c.port);
        c.data_dir = j.value("data_dir", c.data_dir);
        c.model_path = j.value("model", c.model_path);
        c.threshold = j.value("threshold", c.threshold);
        c.workers = j.value("workers", c.workers);
        c.snapshot_every = j.value("snapshot_every", c.snapshot_every);
        if (j.contains("mpv")) c.pipeline.mpv = mpv_params_from_json(j.at("mpv"));
        if (j.contains("tracking_threshold")) c.pipeline.tracking.threshold = j.at("tracking_threshold");
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorKind::MalformedInput, std::string("config: ") + e.what());
    }
    c.pipeline.threshold = c.threshold;
    c.validate();
    return c;
}

/// CCTA_PORT, CCTA_DATA_DIR, CCTA_MODEL and CCTA_THRESHOLD override the file.
inline void apply_env_overrides(ServiceConfig& c, const std::function<const char*(const char*)>& getenv_fn = std::getenv) {
    try {
        if (const char* v = getenv_fn("CCTA_PORT")) c.port = std::stoi(v);
        if (const char* v = getenv_fn("CCTA_DATA_DIR")) c.data_dir = v;
        if (const char* v = getenv_fn("CCTA_MODEL")) c.model_path = v;
        if (const char* v = getenv_fn("CCTA_THRESHOLD")) c.threshold = std::stod(v);
    } catch (const std::logic_error& e) {
        throw Error(ErrorKind::InvalidArgument, std::string("environment override: ") + e.what());
    }
    c.pipeline.threshold = c.threshold;
    c.validate();
}

inline ServiceConfig load_config(const std::string& path) {
    ServiceConfig c;
    if (!path.empty()) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(read_file(path));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::MalformedInput, path + ": " + e.what());
        }
        c = config_from_json(j);
    }
    apply_env_overrides(c);
    return c;
}

enum class JobState { Queued, Processing, InferenceReady, Failed };

inline const char* to_string(JobState s) {
    switch (s) {
    case JobState::Queued: return "Queued";
    case JobState::Processing: return "Processing";
    case JobState::InferenceReady: return "InferenceReady";
    case JobState::Failed: return "Failed";
    }
    return "?";
}

inline JobState job_state_from_string(const std::string& s) {
    if (s == "Queued") return JobState::Queued;
    if (s == "Processing") return JobState::Processing;
    if (s == "InferenceReady") return JobState::InferenceReady;
    if (s == "Failed") return JobState::Failed;
    throw Error(ErrorKind::MalformedInput, "unknown job state " + s);
}

struct StudyJob {
    std::string job_id;
    std::string case_id;
    std::string volume_sha256;
    double phase_pct = 75;
    JobState state = JobState::Queued;
    std::vector<StageTiming> stage_timings_ms;
    std::string error;
    nlohmann::json metadata = nlohmann::json::object();
};

inline nlohmann::json to_json(const StudyJob& j) {
    nlohmann::json timings = nlohmann::json::array();
    for (const auto& t : j.stage_timings_ms) timings.push_back({{"stage", t.stage}, {"ms", t.ms}});
    nlohmann::json out{{"job_id", j.job_id},
                       {"case_id", j.case_id},
                       {"volume_sha256", j.volume_sha256},
                       {"phase_pct", j.phase_pct},
                       {"state", to_string(j.state)},
                       {"stage_timings_ms", timings},
                       {"metadata", j.metadata}};
    out["error"] = j.error.empty() ? nlohmann::json(nullptr) : nlohmann::json(j.error);
    return out;
}

inline StudyJob study_job_from_json(const nlohmann::json& j) {
    StudyJob s;
    s.job_id = j.at("job_id");
    s.case_id = j.at("case_id");
    s.volume_sha256 = j.at("volume_sha256");
    s.phase_pct = j.at("phase_pct");
    s.state = job_state_from_string(j.at("state"));
    for (const auto& t : j.at("stage_timings_ms")) s.stage_timings_ms.push_back({t.at("stage"), t.at("ms")});
    if (!j.at("error").is_null()) s.error = j.at("error");
    s.metadata = j.value("metadata", nlohmann::json::object());
    return s;
}

enum class Adjudication { Accept, Reject };

inline const char* to_string(Adjudication a) { return a == Adjudication::Accept ? "Accept" : "Reject"; }

inline Adjudication adjudication_from_string(const std::string& s) {
    if (s == "Accept") return Adjudication::Accept;
    if (s == "Reject") return Adjudication::Reject;
    throw Error(ErrorKind::InvalidArgument, "decision must be Accept or Reject");
}

struct AdjudicationRecord {
    std::string case_id;
    Adjudication decision = Adjudication::Accept;
    std::string reviewer;
    std::string note;
    std::string timestamp;
};

inline nlohmann::json to_json(const AdjudicationRecord& a) {
    return {{"case_id", a.case_id},
            {"decision", to_string(a.decision)},
            {"reviewer", a.reviewer},
            {"note", a.note},
            {"timestamp", a.timestamp}};
}

inline AdjudicationRecord adjudication_from_json(const nlohmann::json& j) {
    return {j.at("case_id"), adjudication_from_string(j.at("decision")), j.at("reviewer"), j.value("note", ""),
            j.at("timestamp")};
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                  tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

/// Persisted output of a finished case.
struct CaseRecord {
    InferenceResult result;
    VesselTree tree;
    std::vector<Extraction> extractions;
};

inline nlohmann::json to_json(const CaseRecord& r) {
    nlohmann::json ex = nlohmann::json::array();
    for (const auto& e : r.extractions) ex.push_back(ccta::to_json(e));
    return {{"result", to_json(r.result)}, {"tree", ccta::to_json(r.tree)}, {"extractions", ex}};
}

inline CaseRecord case_record_from_json(const nlohmann::json& j) {
    CaseRecord r;
    r.result = inference_result_from_json(j.at("result"));
    r.tree = tree_from_json(j.at("tree"));
    for (const auto& e : j.at("extractions")) r.extractions.push_back(extraction_from_json(e));
    return r;
}

inline std::shared_ptr<const VesselScorer> make_scorer(const std::string& model_path) {
    if (model_path.empty()) return std::make_shared<BaselineScorer>();
    auto model = std::make_shared<const Model>(read_model(model_path));
    return std::make_shared<ModelScorer>(model, "model:" + model_hash(*model).substr(0, 16));
}

/// Study ingestion, background processing, results, adjudication and
/// durable state under `data_dir`.
class Service {
public:
    Service(ServiceConfig cfg, std::shared_ptr<const VesselScorer> scorer)
        : cfg_(std::move(cfg)), scorer_(std::move(scorer)), root_(cfg_.data_dir),
          log_(std::filesystem::path(cfg_.data_dir) / "records.jsonl") {
        cfg_.validate();
        cfg_.pipeline.threshold = cfg_.threshold;
        std::filesystem::create_directories(root_ / "volumes");
        std::filesystem::create_directories(root_ / "cases");
        std::filesystem::create_directories(root_ / "reports");
        recover();
    }

    ~Service() { stop(); }

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    [[nodiscard]] const ServiceConfig& config() const { return cfg_; }

    /// Validates and stores a study; returns the existing job for identical content.
    std::string ingest_study(const std::string& header_text, const std::string& raw, const nlohmann::json& metadata,
                             double phase_pct) {
        require(metadata.is_object() && metadata.contains("case_id") && metadata.at("case_id").is_string(),
                ErrorKind::MalformedInput, "metadata must carry a string case_id");
        const std::string case_id = metadata.at("case_id");
        require(!case_id.empty() && case_id.find('/') == std::string::npos && case_id.find("..") == std::string::npos,
                ErrorKind::InvalidArgument, "invalid case id");
        require(phase_pct >= 0 && phase_pct <= 100, ErrorKind::InvalidArgument, "phase_pct must be in [0, 100]");
        (void)volume_from_parts(header_text, raw);  // validates header, size and values
        (void)seeds_for(metadata);
        const std::string content = sha256_hex(header_text + '\n' + raw);
        const std::string job_id = "job-" + sha256_hex(case_id + ":" + content).substr(0, 16);

        std::unique_lock lock(mutex_);
        if (const auto it = case_job_.find(case_id); it != case_job_.end()) {
            const auto& existing = jobs_.at(it->second);
            require(existing.volume_sha256 == content, ErrorKind::DuplicateCase,
                    "case " + case_id + " already exists with different content");
            return existing.job_id;
        }
        const auto base = (root_ / "volumes" / content).string();
        write_file(base + ".vol.json", header_text);
        write_file(base + ".vol.raw", raw);
        StudyJob job;
        job.job_id = job_id;
        job.case_id = case_id;
        job.volume_sha256 = content;
        job.phase_pct = phase_pct;
        job.metadata = metadata;
        persist_job(job);
        queue_.push_back(job_id);
        cv_.notify_one();
        return job_id;
    }

    /// Processes one queued job on the calling thread; false when idle.
    bool process_next() {
        std::string job_id;
        {
            std::unique_lock lock(mutex_);
            if (queue_.empty()) return false;
            job_id = queue_.front();
            queue_.pop_front();
        }
        process(job_id);
        return true;
    }

    void process_all() {
        while (process_next()) {
        }
    }

    void start_workers() {
        std::unique_lock lock(mutex_);
        if (!workers_.empty()) return;
        stopping_ = false;
        for (unsigned i = 0; i < cfg_.workers; ++i)
            workers_.emplace_back([this] {
                for (;;) {
                    std::string job_id;
                    {
                        std::unique_lock l(mutex_);
                        cv_.wait(l, [this] { return stopping_ || !queue_.empty(); });
                        if (stopping_) return;
                        job_id = queue_.front();
                        queue_.pop_front();
                    }
                    process(job_id);
                }
            });
    }

    void stop() {
        {
            std::unique_lock lock(mutex_);
            stopping_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_)
            if (t.joinable()) t.join();
        workers_.clear();
        std::unique_lock lock(mutex_);
        snapshot_locked();
    }

    [[nodiscard]] StudyJob job(const std::string& job_id) const {
        std::unique_lock lock(mutex_);
        const auto it = jobs_.find(job_id);
        require(it != jobs_.end(), ErrorKind::UnknownCase, "unknown job " + job_id);
        return it->second;
    }

    [[nodiscard]] nlohmann::json worklist() const {
        std::unique_lock lock(mutex_);
        nlohmann::json out = nlohmann::json::array();
        for (const auto& [case_id, job_id] : case_job_) {
            const auto& j = jobs_.at(job_id);
            nlohmann::json e{{"case_id", case_id}, {"job_id", job_id}, {"state", to_string(j.state)}};
            const auto r = records_.find(case_id);
            e["case_decision"] = r == records_.end() ? nlohmann::json(nullptr)
                                                     : nlohmann::json(to_string(r->second.result.case_decision));
            e["latency_ms"] = r == records_.end() ? nlohmann::json(nullptr) : nlohmann::json(r->second.result.total_latency_ms);
            const auto a = adjudications_.find(case_id);
            e["adjudication"] = a == adjudications_.end() || a->second.empty()
                                    ? nlohmann::json(nullptr)
                                    : nlohmann::json(to_string(a->second.back().decision));
            e["error"] = j.error.empty() ? nlohmann::json(nullptr) : nlohmann::json(j.error);
            out.push_back(std::move(e));
        }
        return out;
    }

    [[nodiscard]] CaseRecord case_record(const std::string& case_id) const {
        std::unique_lock lock(mutex_);
        const auto& j = job_for_case_locked(case_id);
        require(j.state == JobState::InferenceReady, ErrorKind::InvalidState,
                "case " + case_id + " is " + to_string(j.state));
        return records_.at(case_id);
    }

    [[nodiscard]] nlohmann::json result_json(const std::string& case_id) const {
        const auto rec = case_record(case_id);
        return {{"result", to_json(rec.result)}, {"overlay", to_json(build_overlay(rec.result, rec.tree, rec.extractions))}};
    }

    /// PNG bytes and sidecar of one stored MPV.
    [[nodiscard]] std::pair<std::string, nlohmann::json> mpv(const std::string& case_id,
                                                             const std::string& extraction_id) const {
        const auto rec = case_record(case_id);
        const bool known = std::any_of(rec.extractions.begin(), rec.extractions.end(),
                                       [&](const Extraction& e) { return e.extraction_id == extraction_id; });
        require(known, ErrorKind::UnknownExtraction, "unknown extraction " + extraction_id);
        const auto base = (root_ / "cases" / case_id / extraction_id).string();
        return {read_file(base + ".mpv.png"), nlohmann::json::parse(read_file(base + ".mpv.json"))};
    }

    AdjudicationRecord adjudicate(const std::string& case_id, const std::string& decision, const std::string& reviewer,
                                  const std::string& note) {
        std::unique_lock lock(mutex_);
        const auto& j = job_for_case_locked(case_id);
        require(j.state == JobState::InferenceReady, ErrorKind::InvalidState,
                "case " + case_id + " is " + to_string(j.state) + ", not InferenceReady");
        require(!reviewer.empty(), ErrorKind::InvalidArgument, "reviewer is required");
        AdjudicationRecord rec{case_id, adjudication_from_string(decision), reviewer, note, utc_timestamp()};
        append_locked("adjudication", to_json(rec));
        adjudications_[case_id].push_back(rec);
        return rec;
    }

    [[nodiscard]] std::vector<AdjudicationRecord> adjudication_history(const std::string& case_id) const {
        std::unique_lock lock(mutex_);
        (void)job_for_case_locked(case_id);
        const auto it = adjudications_.find(case_id);
        return it == adjudications_.end() ? std::vector<AdjudicationRecord>{} : it->second;
    }

    /// `live`: case-level report over finished cases whose metadata carries a
    /// ground-truth case_class. Any other name reads `reports/<name>.json`.
    [[nodiscard]] nlohmann::json cohort_metrics(const std::string& set) const {
        if (set.empty() || set == "live") {
            std::unique_lock lock(mutex_);
            std::vector<bool> pred, truth;
            int incomplete = 0, total = 0;
            for (const auto& [case_id, job_id] : case_job_) {
                const auto& j = jobs_.at(job_id);
                if (!j.metadata.contains("case_class")) continue;
                ++total;
                if (j.state == JobState::Failed) ++incomplete;
                if (j.state != JobState::InferenceReady) continue;
                truth.push_back(is_diseased(case_class_from_string(j.metadata.at("case_class"))));
                pred.push_back(records_.at(case_id).result.case_decision == Decision::PlaqueDetected);
            }
            nlohmann::json out{{"set", "live"}, {"total", total}, {"workflow_incomplete", incomplete}};
            if (!pred.empty()) {
                const auto cm = confusion(pred, truth);
                out["case_level"] = to_json(make_report("live: case level", cm, metrics(cm), std::nullopt, true, cfg_.threshold));
            } else {
                out["case_level"] = nullptr;
            }
            return out;
        }
        require(set.find('/') == std::string::npos && set.find("..") == std::string::npos, ErrorKind::InvalidArgument,
                "invalid set name");
        const auto path = root_ / "reports" / (set + ".json");
        require(std::filesystem::exists(path), ErrorKind::UnknownCase, "unknown report set " + set);
        return nlohmann::json::parse(read_file(path.string()));
    }

    void store_report(const std::string& set, const nlohmann::json& report) {
        require(!set.empty() && set.find('/') == std::string::npos && set.find("..") == std::string::npos,
                ErrorKind::InvalidArgument, "invalid set name");
        write_file((root_ / "reports" / (set + ".json")).string(), report.dump(1) + "\n");
    }

    [[nodiscard]] std::size_t queued() const {
        std::unique_lock lock(mutex_);
        return queue_.size();
    }

    static std::vector<Vec3> seeds_for(const nlohmann::json& metadata) {
        try {
            if (metadata.contains("seeds_mm")) {
                std::vector<Vec3> seeds;
                for (const auto& s : metadata.at("seeds_mm")) seeds.push_back({s.at(0), s.at(1), s.at(2)});
                require(!seeds.empty(), ErrorKind::InvalidArgument, "seeds_mm is empty");
                return seeds;
            }
            return template_ostia(metadata.value("template", std::string("standard-left-right")));
        } catch (const nlohmann::json::exception& e) {
            throw Error(ErrorKind::MalformedInput, std::string("seeds_mm: ") + e.what());
        }
    }

private:
    void process(const std::string& job_id) {
        StudyJob job;
        {
            std::unique_lock lock(mutex_);
            job = jobs_.at(job_id);
            if (job.state != JobState::Queued) return;
            job.state = JobState::Processing;
            persist_job(job);
        }
        PipelineOutput out;
        std::string load_error;
        const auto t0 = std::chrono::steady_clock::now();
        Volume volume;
        try {
            volume = read_volume((root_ / "volumes" / job.volume_sha256).string());
        } catch (const std::exception& e) {
            load_error = e.what();
        }
        const double load_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        if (load_error.empty()) out = run_pipeline(volume, seeds_for(job.metadata), job.case_id, *scorer_, cfg_.pipeline);
        out.result.stage_timings_ms.insert(out.result.stage_timings_ms.begin(), {"load", load_ms});
        out.result.total_latency_ms += load_ms;

        std::string persist_error;
        if (out.ok) {
            try {
                const auto t1 = std::chrono::steady_clock::now();
                const auto dir = root_ / "cases" / job.case_id;
                std::filesystem::create_directories(dir);
                for (const auto& [id, m] : out.mpvs) write_mpv((dir / id).string(), m);
                const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t1).count();
                out.result.stage_timings_ms.push_back({"persist", ms});
                out.result.total_latency_ms += ms;
            } catch (const std::exception& e) {
                persist_error = e.what();
            }
        }

        std::unique_lock lock(mutex_);
        job.stage_timings_ms = out.result.stage_timings_ms;
        if (!load_error.empty()) {
            job.state = JobState::Failed;
            job.error = "load: " + load_error;
        } else if (!out.ok) {
            job.state = JobState::Failed;
            job.error = out.error == kInadequateQuality ? out.error : out.failed_stage + ": " + out.error;
        } else if (!persist_error.empty()) {
            job.state = JobState::Failed;
            job.error = "persist: " + persist_error;
        } else {
            CaseRecord rec{out.result, out.tree, out.extractions};
            append_locked("result", to_json(rec));
            records_[job.case_id] = std::move(rec);
            job.state = JobState::InferenceReady;
        }
        persist_job(job);
    }

    const StudyJob& job_for_case_locked(const std::string& case_id) const {
        const auto it = case_job_.find(case_id);
        require(it != case_job_.end(), ErrorKind::UnknownCase, "unknown case " + case_id);
        return jobs_.at(it->second);
    }

    void persist_job(const StudyJob& job) {
        append_locked("job", to_json(job));
        jobs_[job.job_id] = job;
        case_job_[job.case_id] = job.job_id;
    }

    void append_locked(const std::string& type, const nlohmann::json& payload) {
        const auto seq = log_.append(type, payload);
        if (cfg_.snapshot_every > 0 && seq % cfg_.snapshot_every == 0) snapshot_locked();
    }

    void apply_record(const std::string& type, const nlohmann::json& payload) {
        if (type == "job") {
            auto job = study_job_from_json(payload);
            case_job_[job.case_id] = job.job_id;
            jobs_[job.job_id] = std::move(job);
        } else if (type == "result") {
            auto rec = case_record_from_json(payload);
            records_[rec.result.case_id] = std::move(rec);
        } else if (type == "adjudication") {
            auto a = adjudication_from_json(payload);
            adjudications_[a.case_id].push_back(std::move(a));
        } else {
            throw Error(ErrorKind::MalformedInput, "unknown record type " + type);
        }
    }

    [[nodiscard]] nlohmann::json state_json() const {
        nlohmann::json jobs = nlohmann::json::array(), results = nlohmann::json::array(),
                       adj = nlohmann::json::array();
        for (const auto& [id, j] : jobs_) jobs.push_back(to_json(j));
        for (const auto& [id, r] : records_) results.push_back(to_json(r));
        for (const auto& [id, list] : adjudications_)
            for (const auto& a : list) adj.push_back(to_json(a));
        return {{"jobs", jobs}, {"results", results}, {"adjudications", adj}};
    }

    void snapshot_locked() { write_snapshot(root_ / "snapshot.json", log_.last_seq(), state_json()); }

    void recover() {
        std::uint64_t from = 0;
        if (auto snap = read_snapshot(root_ / "snapshot.json")) {
            from = snap->first;
            const auto& s = snap->second;
            for (const auto& j : s.at("jobs")) apply_record("job", j);
            for (const auto& r : s.at("results")) apply_record("result", r);
            for (const auto& a : s.at("adjudications")) apply_record("adjudication", a);
            log_.set_last_seq(from);
        }
        log_.replay([&](std::uint64_t seq, const std::string& type, const nlohmann::json& payload) {
            if (seq > from) apply_record(type, payload);
        });
        // at-least-once: unfinished work goes back on the queue
        for (auto& [id, job] : jobs_)
            if (job.state == JobState::Queued || job.state == JobState::Processing) {
                job.state = JobState::Queued;
                queue_.push_back(id);
            }
    }

    ServiceConfig cfg_;
    std::shared_ptr<const VesselScorer> scorer_;
    std::filesystem::path root_;
    RecordLog log_;
    mutable std::mutex mutex_;
    std::condition_variable cv_;
    std::deque<std::string> queue_;
    std::vector<std::thread> workers_;
    bool stopping_ = false;
    std::map<std::string, StudyJob> jobs_;
    std::map<std::string, std::string> case_job_;
    std::map<std::string, CaseRecord> records_;
    std::map<std::string, std::vector<AdjudicationRecord>> adjudications_;
};

}  // namespace ccta::service
