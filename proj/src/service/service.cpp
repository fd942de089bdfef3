#include "triage/service/service.hpp"

#include "triage/error.hpp"
#include "triage/volume_io.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>

namespace triage::service {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::int64_t now_ms()
{
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
        .count();
}

bool read_bytes(const fs::path& p, std::string& out)
{
    std::ifstream in(p, std::ios::binary);
    if (!in)
        return false;
    out.assign(std::istreambuf_iterator<char>(in), {});
    return true;
}

void fnv1a(std::uint64_t& h, const std::string& bytes)
{
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
}

} // namespace

std::string content_hash(const fs::path& file)
{
    std::uint64_t h = 14695981039346656037ull;
    std::string bytes;
    if (!read_bytes(file, bytes)) {
        // nothing to hash; the path keeps repeated attempts on one missing file together
        fnv1a(h, "missing:" + fs::absolute(file).string());
    } else {
        fnv1a(h, bytes);
        std::string ext = file.extension().string();
        std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
        if (ext == ".raw" && read_bytes(raw_header_path(file), bytes))
            fnv1a(h, bytes);
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

Scorer pipeline_scorer(std::shared_ptr<const TriageModels> models)
{
    return [models](const Volume& v) { return run_pipeline(v, *models); };
}

json to_json(const WorklistView& v)
{
    auto items = [](const std::vector<WorklistItem>& xs) {
        json a = json::array();
        for (const auto& it : xs)
            a.push_back({{"rank", it.rank}, {"study", to_json(it.record)}});
        return a;
    };
    auto records = [](const std::vector<StudyRecord>& xs) {
        json a = json::array();
        for (const auto& r : xs)
            a.push_back(to_json(r));
        return a;
    };
    return {{"mode", to_string(v.mode)},
            {"generated_at", v.generated_at},
            {"active", items(v.active)},
            {"read", items(v.read)},
            {"pending", records(v.pending)},
            {"failed", records(v.failed)}};
}

TriageService::TriageService(const fs::path& store_dir, Scorer scorer, ServiceOptions opts)
    : store_dir_(store_dir), scorer_(std::move(scorer)), opts_(std::move(opts)), log_(store_dir)
{
    if (opts_.workers < 1)
        throw Error(ErrorCode::InvalidArgument, "service needs at least one worker");
    std::vector<const StudyRecord*> unfinished;
    for (const auto& [id, r] : log_.records()) {
        last_ts_ = std::max(last_ts_, r.ingested_at);
        if (r.status == StudyStatus::Queued || r.status == StudyStatus::Processing)
            unfinished.push_back(&r);
    }
    std::sort(unfinished.begin(), unfinished.end(),
              [](const StudyRecord* a, const StudyRecord* b) { return a->ingested_at < b->ingested_at; });
    std::vector<std::string> requeue;
    for (const StudyRecord* r : unfinished)
        requeue.push_back(r->study_id);
    for (const auto& id : requeue) {
        StudyRecord r = *log_.find(id);
        if (r.status == StudyStatus::Processing) {
            r.status = StudyStatus::Queued; // interrupted mid-inference
            log_.put(r);
        }
        queue_.push_back(id);
    }
    for (int i = 0; i < opts_.workers; ++i)
        workers_.emplace_back([this] { worker_loop(); });
}

TriageService::~TriageService()
{
    {
        std::lock_guard lk(mu_);
        stopping_ = true;
    }
    work_cv_.notify_all();
    for (auto& t : workers_)
        t.join();
}

std::int64_t TriageService::next_timestamp()
{
    last_ts_ = std::max(now_ms(), last_ts_ + 1);
    return last_ts_;
}

std::string TriageService::ingest(const fs::path& file, const std::string& display_name)
{
    const std::string id = content_hash(file);
    {
        std::lock_guard lk(mu_);
        if (log_.find(id))
            return id;
    }
    StudyRecord r;
    r.study_id = id;
    r.filename = display_name.empty() ? file.filename().string() : display_name;
    std::optional<Volume> v;
    try {
        v = load_volume(file).with_study_id(id);
        r.shape = v->shape();
    } catch (const std::exception& e) {
        r.status = StudyStatus::Failed;
        r.error = e.what();
    }

    std::lock_guard lk(mu_);
    if (log_.find(id))
        return id; // a concurrent ingest of the same bytes won
    if (v) {
        try {
            save_volume(*v, log_.volume_path(id));
        } catch (const std::exception& e) {
            r.status = StudyStatus::Failed;
            r.error = std::string("storing the volume: ") + e.what();
        }
    }
    r.ingested_at = next_timestamp();
    log_.put(r);
    if (r.status == StudyStatus::Queued) {
        queue_.push_back(id);
        work_cv_.notify_one();
    } else {
        idle_cv_.notify_all();
    }
    return id;
}

void TriageService::worker_loop()
{
    for (;;) {
        std::string id;
        {
            std::unique_lock lk(mu_);
            work_cv_.wait(lk, [&] { return stopping_ || !queue_.empty(); });
            if (stopping_)
                return;
            id = queue_.front();
            queue_.pop_front();
            ++in_flight_;
            StudyRecord r = *log_.find(id);
            r.status = StudyStatus::Processing;
            log_.put(r);
        }
        process(id);
        {
            std::lock_guard lk(mu_);
            --in_flight_;
        }
        idle_cv_.notify_all();
    }
}

void TriageService::process(const std::string& id)
{
    std::optional<TriageResult> result;
    std::string error;
    try {
        if (!scorer_)
            throw Error(ErrorCode::InvalidArgument, "no models loaded");
        const Volume v = load_volume(log_.volume_path(id)).with_study_id(id);
        PipelineOutput out = scorer_(v);
        save_mask(out.lesion, log_.lesion_path(id));
        save_mask(out.lungs, log_.lungs_path(id));
        out.result.study_id = id;
        result = out.result;
    } catch (const std::exception& e) {
        error = e.what();
    }
    std::lock_guard lk(mu_);
    StudyRecord r = *log_.find(id);
    if (result) {
        r.status = StudyStatus::Scored;
        r.result = *result;
    } else {
        r.status = StudyStatus::Failed;
        r.error = error;
    }
    log_.put(r);
}

WorklistView TriageService::worklist(RankMode mode) const
{
    WorklistView view;
    view.mode = mode;
    std::vector<RankEntry> scored;
    std::map<std::string, const StudyRecord*> by_id;
    std::lock_guard lk(mu_);
    for (const auto& [id, r] : log_.records()) {
        switch (r.status) {
        case StudyStatus::Scored:
            scored.push_back({*r.result, r.ingested_at});
            by_id[id] = &r;
            break;
        case StudyStatus::Queued:
        case StudyStatus::Processing: view.pending.push_back(r); break;
        case StudyStatus::Failed: view.failed.push_back(r); break;
        }
    }
    int rank = 0;
    const auto ordered = rank_studies(std::move(scored), mode);
    for (const auto& e : ordered) {
        const StudyRecord& r = *by_id.at(e.result.study_id);
        if (!r.read)
            view.active.push_back({++rank, r});
    }
    for (const auto& e : ordered) {
        const StudyRecord& r = *by_id.at(e.result.study_id);
        if (r.read)
            view.read.push_back({++rank, r});
    }
    auto by_time = [](const StudyRecord& a, const StudyRecord& b) {
        return a.ingested_at != b.ingested_at ? a.ingested_at < b.ingested_at : a.study_id < b.study_id;
    };
    std::sort(view.pending.begin(), view.pending.end(), by_time);
    std::sort(view.failed.begin(), view.failed.end(), by_time);
    view.generated_at = now_ms();
    return view;
}

StudyRecord TriageService::study(const std::string& id) const
{
    std::lock_guard lk(mu_);
    const StudyRecord* r = log_.find(id);
    if (!r)
        throw Error(ErrorCode::UnknownStudy, "no study " + id);
    return *r;
}

StudyRecord TriageService::mark_read(const std::string& id, std::optional<std::string> note)
{
    std::lock_guard lk(mu_);
    const StudyRecord* cur = log_.find(id);
    if (!cur)
        throw Error(ErrorCode::UnknownStudy, "no study " + id);
    if (cur->status != StudyStatus::Scored)
        throw Error(ErrorCode::NotScored, "study " + id + " is " + to_string(cur->status));
    if (cur->read && (!note || note == cur->note))
        return *cur;
    StudyRecord r = *cur;
    r.read = true;
    if (note)
        r.note = std::move(note);
    log_.put(r);
    return r;
}

RgbImage TriageService::overlay(const std::string& id, int slice, OverlayStyle style) const
{
    const StudyRecord r = study(id);
    if (r.status != StudyStatus::Scored)
        throw Error(ErrorCode::NotScored, "study " + id + " is " + to_string(r.status));
    if (slice < 0 || slice >= r.shape.z)
        throw Error(ErrorCode::SliceOutOfRange,
                    "slice " + std::to_string(slice) + " outside [0, " + std::to_string(r.shape.z) + ")");
    // volume and masks are immutable once the record is SCORED
    const Volume v = load_volume(log_.volume_path(id));
    const Mask lesion = load_mask(log_.lesion_path(id), MaskKind::Lesion);
    return render_overlay(v, lesion, slice, r.result->severity, style);
}

json TriageService::health() const
{
    std::lock_guard lk(mu_);
    json counts{{"QUEUED", 0}, {"PROCESSING", 0}, {"SCORED", 0}, {"FAILED", 0}};
    for (const auto& [_, r] : log_.records())
        counts[to_string(r.status)] = counts[to_string(r.status)].get<int>() + 1;
    return {{"status", "ok"},
            {"models_loaded", bool(scorer_)},
            {"models", opts_.model_status},
            {"workers", opts_.workers},
            {"queue_length", queue_.size()},
            {"studies", counts}};
}

bool TriageService::wait_idle(double timeout_seconds) const
{
    std::unique_lock lk(mu_);
    auto idle = [&] {
        if (!queue_.empty() || in_flight_ > 0)
            return false;
        for (const auto& [_, r] : log_.records())
            if (r.status == StudyStatus::Queued || r.status == StudyStatus::Processing)
                return false;
        return true;
    };
    return idle_cv_.wait_for(lk, std::chrono::duration<double>(timeout_seconds), idle);
}

} // namespace triage::service
