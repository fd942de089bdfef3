#pragma once

#include "triage/triage.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace triage::service {

enum class StudyStatus { Queued, Processing, Scored, Failed };
const char* to_string(StudyStatus s);
StudyStatus study_status_from_string(const std::string& s);

struct StudyRecord {
    std::string study_id;
    std::int64_t ingested_at = 0; // ms since the epoch, strictly increasing per store
    std::string filename;
    StudyStatus status = StudyStatus::Queued;
    std::optional<TriageResult> result; // present iff Scored
    bool read = false;                  // implies Scored
    std::optional<std::string> note;
    std::optional<std::string> error; // Failed only
    Shape3 shape{};                   // of the stored volume; zero when it never loaded

    void validate() const; // InvalidArgument when the invariants above break

    friend bool operator==(const StudyRecord&, const StudyRecord&) = default;
};

nlohmann::json to_json(const StudyRecord& r);
StudyRecord study_record_from_json(const nlohmann::json& j);

// Append-only record log at <dir>/records.jsonl: one full record per line, the
// last line for an id wins. Opening replays the log, drops a torn final line
// and rewrites the file with one line per study. Not thread-safe; the service
// serializes writers.
class RecordLog {
public:
    explicit RecordLog(const std::filesystem::path& dir);

    const std::map<std::string, StudyRecord>& records() const { return records_; }
    const StudyRecord* find(const std::string& id) const;
    void put(const StudyRecord& r); // appends and flushes before updating the index

    std::filesystem::path volume_path(const std::string& id) const;
    std::filesystem::path lesion_path(const std::string& id) const;
    std::filesystem::path lungs_path(const std::string& id) const;
    const std::filesystem::path& dir() const { return dir_; }
    // Lines discarded while replaying (torn writes, unparsable records).
    int dropped_lines() const { return dropped_; }

private:
    std::filesystem::path dir_;
    std::map<std::string, StudyRecord> records_;
    std::ofstream out_;
    int dropped_ = 0;
};

} // namespace triage::service
