#include "triage/service/store.hpp"

#include "triage/error.hpp"

#include <string>

namespace triage::service {

using nlohmann::json;
namespace fs = std::filesystem;

const char* to_string(StudyStatus s)
{
    switch (s) {
    case StudyStatus::Queued: return "QUEUED";
    case StudyStatus::Processing: return "PROCESSING";
    case StudyStatus::Scored: return "SCORED";
    case StudyStatus::Failed: return "FAILED";
    }
    return "?";
}

StudyStatus study_status_from_string(const std::string& s)
{
    for (StudyStatus v : {StudyStatus::Queued, StudyStatus::Processing, StudyStatus::Scored, StudyStatus::Failed})
        if (s == to_string(v))
            return v;
    throw Error(ErrorCode::InvalidArgument, "unknown study status '" + s + "'");
}

void StudyRecord::validate() const
{
    if (study_id.empty())
        throw Error(ErrorCode::InvalidArgument, "study record without id");
    if (result.has_value() != (status == StudyStatus::Scored))
        throw Error(ErrorCode::InvalidArgument, "study " + study_id + ": result present iff SCORED");
    if (read && status != StudyStatus::Scored)
        throw Error(ErrorCode::InvalidArgument, "study " + study_id + ": read implies SCORED");
}

json to_json(const StudyRecord& r)
{
    json j{{"study_id", r.study_id},
           {"ingested_at", r.ingested_at},
           {"filename", r.filename},
           {"status", to_string(r.status)},
           {"read", r.read},
           {"shape", {r.shape.z, r.shape.y, r.shape.x}},
           {"result", r.result ? to_json(*r.result) : json(nullptr)},
           {"note", r.note ? json(*r.note) : json(nullptr)},
           {"error", r.error ? json(*r.error) : json(nullptr)}};
    return j;
}

StudyRecord study_record_from_json(const json& j)
{
    try {
        StudyRecord r;
        r.study_id = j.at("study_id");
        r.ingested_at = j.at("ingested_at");
        r.filename = j.value("filename", "");
        r.status = study_status_from_string(j.at("status"));
        r.read = j.at("read");
        const auto s = j.at("shape").get<std::vector<int>>();
        if (s.size() != 3)
            throw Error(ErrorCode::InvalidArgument, "record shape must have 3 entries");
        r.shape = {s[0], s[1], s[2]};
        if (!j.at("result").is_null())
            r.result = triage_result_from_json(j.at("result"));
        if (!j.at("note").is_null())
            r.note = j.at("note").get<std::string>();
        if (!j.at("error").is_null())
            r.error = j.at("error").get<std::string>();
        r.validate();
        return r;
    } catch (const json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("study record: ") + e.what());
    }
}

RecordLog::RecordLog(const fs::path& dir) : dir_(dir)
{
    fs::create_directories(dir_ / "volumes");
    fs::create_directories(dir_ / "masks");
    const fs::path log = dir_ / "records.jsonl";
    if (fs::exists(log)) {
        std::ifstream in(log);
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty())
                continue;
            try {
                StudyRecord r = study_record_from_json(json::parse(line));
                records_[r.study_id] = std::move(r);
            } catch (const std::exception& e) {
                ++dropped_;
                warn("record log: dropping unreadable line (" + std::string(e.what()) + ")");
            }
        }
    }
    // compaction: write the snapshot aside, then swap it in
    const fs::path tmp = dir_ / "records.jsonl.tmp";
    {
        std::ofstream c(tmp, std::ios::trunc);
        for (const auto& [_, r] : records_)
            c << to_json(r).dump() << '\n';
        c.flush();
        if (!c)
            throw Error(ErrorCode::IOFailure, "cannot write " + tmp.string());
    }
    fs::rename(tmp, log);
    out_.open(log, std::ios::app);
    if (!out_)
        throw Error(ErrorCode::IOFailure, "cannot append to " + log.string());
}

const StudyRecord* RecordLog::find(const std::string& id) const
{
    auto it = records_.find(id);
    return it == records_.end() ? nullptr : &it->second;
}

void RecordLog::put(const StudyRecord& r)
{
    r.validate();
    out_ << to_json(r).dump() << '\n';
    out_.flush();
    if (!out_)
        throw Error(ErrorCode::IOFailure, "record log write failed for " + r.study_id);
    records_[r.study_id] = r;
}

fs::path RecordLog::volume_path(const std::string& id) const { return dir_ / "volumes" / (id + ".nii"); }
fs::path RecordLog::lesion_path(const std::string& id) const { return dir_ / "masks" / (id + "_lesion.nii"); }
fs::path RecordLog::lungs_path(const std::string& id) const { return dir_ / "masks" / (id + "_lungs.nii"); }

} // namespace triage::service
