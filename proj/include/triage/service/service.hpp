#pragma once

#include "triage/service/overlay.hpp"
#include "triage/service/store.hpp"
#include "triage/triage.hpp"

#include "json.hpp"

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace triage::service {

// Turns a stored volume into scores and masks on its own grid. Called from
// worker threads concurrently; must not mutate shared state.
using Scorer = std::function<PipelineOutput(const Volume&)>;

Scorer pipeline_scorer(std::shared_ptr<const TriageModels> models);

struct WorklistItem {
    int rank = 0; // 1-based over active then read studies
    StudyRecord record;
};

struct WorklistView {
    RankMode mode = RankMode::Identification;
    std::vector<WorklistItem> active; // unread SCORED, rank_studies order
    std::vector<WorklistItem> read;   // read SCORED, same order
    std::vector<StudyRecord> pending; // QUEUED / PROCESSING by ingestion
    std::vector<StudyRecord> failed;
    std::int64_t generated_at = 0; // ms since the epoch
};

nlohmann::json to_json(const WorklistView& v);

struct ServiceOptions {
    int workers = 2;
    nlohmann::json model_status = nlohmann::json::object(); // echoed by health()
};

// Study lifecycle over a RecordLog. Mutations are serialized by one mutex;
// inference runs on the worker pool outside it, so readers never wait on a
// model. The destructor finishes the study each worker holds and leaves the
// rest QUEUED for the next start.
class TriageService {
public:
    // scorer may be empty: studies then fail with "no models loaded".
    TriageService(const std::filesystem::path& store_dir, Scorer scorer, ServiceOptions opts = {});
    ~TriageService();

    TriageService(const TriageService&) = delete;
    TriageService& operator=(const TriageService&) = delete;

    // Identity is the FNV-1a 64 hash of the file bytes (plus the .hdr for raw
    // volumes). Unloadable files produce a FAILED record with the reason.
    std::string ingest(const std::filesystem::path& file, const std::string& display_name = {});

    WorklistView worklist(RankMode mode) const;
    StudyRecord study(const std::string& id) const;                           // UnknownStudy
    StudyRecord mark_read(const std::string& id, std::optional<std::string> note = {}); // UnknownStudy, NotScored
    RgbImage overlay(const std::string& id, int slice, OverlayStyle style = OverlayStyle::Fill) const;
    nlohmann::json health() const;

    // Blocks until no study is QUEUED or PROCESSING; false on timeout.
    bool wait_idle(double timeout_seconds) const;
    const std::filesystem::path& store_dir() const { return store_dir_; }

private:
    void worker_loop();
    void process(const std::string& id);
    std::int64_t next_timestamp();

    std::filesystem::path store_dir_;
    Scorer scorer_;
    ServiceOptions opts_;

    mutable std::mutex mu_;
    mutable std::condition_variable idle_cv_;
    std::condition_variable work_cv_;
    RecordLog log_;
    std::deque<std::string> queue_;
    int in_flight_ = 0;
    bool stopping_ = false;
    std::int64_t last_ts_ = 0;
    std::vector<std::thread> workers_;
};

// Content hash of a volume file as used for study identity.
std::string content_hash(const std::filesystem::path& file);

} // namespace triage::service
