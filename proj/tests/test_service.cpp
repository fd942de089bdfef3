#include "doctest.h"

#include "support/fixtures.hpp"
#include "triage/error.hpp"
#include "triage/service/http.hpp"
#include "triage/service/service.hpp"
#include "triage/volume_io.hpp"

#include "httplib.h"

#include <atomic>
#include <fstream>
#include <future>
#include <set>
#include <thread>

using namespace triage;
using namespace triage::service;
namespace fs = std::filesystem;

namespace {

struct Quiet {
    Quiet() { set_warnings_enabled(false); }
    ~Quiet() { set_warnings_enabled(true); }
};

ErrorCode code_of(auto&& fn)
{
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("no error thrown");
    return ErrorCode::InvalidArgument;
}

struct Cohort {
    std::vector<fs::path> files;
    std::vector<Phantom> phantoms;
};

Cohort write_cohort(const fs::path& dir, int n, std::uint64_t seed = 300)
{
    Cohort c;
    fs::create_directories(dir);
    for (int i = 0; i < n; ++i) {
        PhantomSpec spec = random_phantom_spec(seed + std::uint64_t(i), i % 3 != 2);
        spec.noise_sigma = 1.0;
        c.phantoms.push_back(generate_phantom(spec));
        c.files.push_back(dir / ("study" + std::to_string(i) + ".nii"));
        save_volume(c.phantoms.back().volume, c.files.back());
    }
    return c;
}

// Independent re-sort of a snapshot by the ranking contract.
std::vector<std::string> oracle_order(std::vector<StudyRecord> scored, RankMode mode)
{
    auto score = [&](const StudyRecord& r) {
        return mode == RankMode::Identification ? r.result->covid_probability : r.result->severity;
    };
    std::sort(scored.begin(), scored.end(), [&](const StudyRecord& a, const StudyRecord& b) {
        if (score(a) != score(b))
            return score(a) > score(b);
        if (a.ingested_at != b.ingested_at)
            return a.ingested_at < b.ingested_at;
        return a.study_id < b.study_id;
    });
    std::vector<std::string> ids;
    for (const auto& r : scored)
        ids.push_back(r.study_id);
    return ids;
}

std::vector<std::string> ids_of(const std::vector<WorklistItem>& items)
{
    std::vector<std::string> ids;
    for (const auto& it : items)
        ids.push_back(it.record.study_id);
    return ids;
}

// A scorer held at a gate until released.
struct Gate {
    std::promise<void> open;
    std::shared_future<void> opened = open.get_future().share();
    std::atomic<int> entered{0};

    Scorer scorer()
    {
        return [this](const Volume& v) {
            ++entered;
            opened.wait();
            return fixture::phantom_scorer(v);
        };
    }
};

bool wait_for(auto&& pred, double seconds = 10)
{
    const auto end = std::chrono::steady_clock::now() + std::chrono::duration<double>(seconds);
    while (std::chrono::steady_clock::now() < end) {
        if (pred())
            return true;
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    return pred();
}

} // namespace

TEST_CASE("study record json round trip and invariants")
{
    StudyRecord r;
    r.study_id = "abc";
    r.ingested_at = 12;
    r.filename = "x.nii";
    r.status = StudyStatus::Scored;
    r.result = TriageResult{"abc", 0.7, 0.3, 2, 0.3, 0.1, "oracle", 5.0};
    r.read = true;
    r.note = "seen";
    r.shape = {16, 48, 48};
    CHECK(study_record_from_json(to_json(r)) == r);

    StudyRecord bad = r;
    bad.status = StudyStatus::Queued;
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument);
    bad.result.reset();
    CHECK(code_of([&] { bad.validate(); }) == ErrorCode::InvalidArgument); // read but not scored
    bad.read = false;
    CHECK_NOTHROW(bad.validate());
    CHECK(study_status_from_string("FAILED") == StudyStatus::Failed);
    CHECK(code_of([] { study_status_from_string("DONE"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("record log compacts on open and drops a torn tail")
{
    Quiet q;
    fixture::TempDir dir;
    StudyRecord r;
    r.study_id = "s1";
    r.ingested_at = 1;
    {
        RecordLog log(dir.path);
        log.put(r);
        r.status = StudyStatus::Failed;
        r.error = "boom";
        log.put(r);
        StudyRecord r2;
        r2.study_id = "s2";
        r2.ingested_at = 2;
        log.put(r2);
    }
    { std::ofstream(dir / "records.jsonl", std::ios::app) << "{\"study_id\": \"s3\", \"ingest"; }
    RecordLog log(dir.path);
    CHECK(log.dropped_lines() == 1);
    REQUIRE(log.records().size() == 2);
    CHECK(log.find("s1")->status == StudyStatus::Failed);
    CHECK(*log.find("s1")->error == "boom");
    std::ifstream in(dir / "records.jsonl");
    int lines = 0;
    for (std::string l; std::getline(in, l);)
        ++lines;
    CHECK(lines == 2);
}

TEST_CASE("content hash identifies bytes, not names")
{
    fixture::TempDir dir;
    const Phantom p = generate_phantom(random_phantom_spec(5, true));
    save_volume(p.volume, dir / "a.nii");
    fs::copy_file(dir / "a.nii", dir / "b.nii");
    save_volume(generate_phantom(random_phantom_spec(6, true)).volume, dir / "c.nii");
    CHECK(content_hash(dir / "a.nii") == content_hash(dir / "b.nii"));
    CHECK(content_hash(dir / "a.nii") != content_hash(dir / "c.nii"));
    CHECK(content_hash(dir / "a.nii").size() == 16);
}

TEST_CASE("service: empty store, lifecycle, idempotent and failed ingest")
{
    Quiet q;
    fixture::TempDir dir;
    const Cohort c = write_cohort(dir / "in", 6);
    TriageService svc(dir / "store", fixture::phantom_scorer);

    const WorklistView empty = svc.worklist(RankMode::Identification);
    CHECK(empty.active.empty());
    CHECK(empty.read.empty());
    CHECK(empty.pending.empty());
    CHECK(empty.generated_at > 0);

    std::vector<std::string> ids;
    for (const auto& f : c.files)
        ids.push_back(svc.ingest(f));
    CHECK(svc.ingest(c.files[0]) == ids[0]);
    fs::copy_file(c.files[1], dir / "in" / "renamed.nii");
    CHECK(svc.ingest(dir / "in" / "renamed.nii") == ids[1]);

    { std::ofstream(dir / "in" / "corrupt.nii") << "not a volume"; }
    const std::string bad = svc.ingest(dir / "in" / "corrupt.nii");
    const std::string missing = svc.ingest(dir / "in" / "nowhere.nii");
    CHECK(svc.study(bad).status == StudyStatus::Failed);
    CHECK(!svc.study(bad).error->empty());
    CHECK(svc.study(missing).status == StudyStatus::Failed);

    REQUIRE(svc.wait_idle(60));
    std::set<std::string> distinct(ids.begin(), ids.end());
    CHECK(distinct.size() == 6);
    for (std::size_t i = 0; i < ids.size(); ++i) {
        const StudyRecord r = svc.study(ids[i]);
        REQUIRE(r.status == StudyStatus::Scored);
        CHECK(r.result->study_id == ids[i]);
        CHECK(r.result->severity == doctest::Approx(c.phantoms[i].severity).epsilon(1e-12));
        CHECK(r.shape == c.phantoms[i].volume.shape());
    }
    const auto h = svc.health();
    CHECK(h["studies"]["SCORED"] == 6);
    CHECK(h["studies"]["FAILED"] == 2);
    CHECK(h["models_loaded"] == true);

    for (RankMode m : {RankMode::Identification, RankMode::Severity}) {
        const WorklistView v = svc.worklist(m);
        CHECK(v.failed.size() == 2);
        std::vector<StudyRecord> snap;
        for (const auto& id : ids)
            snap.push_back(svc.study(id));
        CHECK(ids_of(v.active) == oracle_order(snap, m));
        for (std::size_t i = 0; i < v.active.size(); ++i)
            CHECK(v.active[i].rank == int(i) + 1);
    }
    CHECK(code_of([&] { svc.study("ffffffffffffffff"); }) == ErrorCode::UnknownStudy);
}

TEST_CASE("service: mark_read queue semantics, errors and restart")
{
    Quiet q;
    fixture::TempDir dir;
    const Cohort c = write_cohort(dir / "in", 5, 400);
    std::vector<std::string> before_ids;
    {
        TriageService svc(dir / "store", fixture::phantom_scorer);
        for (const auto& f : c.files)
            svc.ingest(f);
        REQUIRE(svc.wait_idle(60));
        const WorklistView v0 = svc.worklist(RankMode::Severity);
        REQUIRE(v0.active.size() == 5);
        const std::string top = v0.active[0].record.study_id;
        const std::string second = v0.active[1].record.study_id;
        StudyRecord r = svc.mark_read(top, "clear findings");
        CHECK(r.read);
        CHECK(*r.note == "clear findings");
        const WorklistView v1 = svc.worklist(RankMode::Severity);
        CHECK(v1.active.size() == 4);
        CHECK(v1.active[0].record.study_id == second);
        CHECK(v1.active[0].rank == 1);
        REQUIRE(v1.read.size() == 1);
        CHECK(v1.read[0].record.study_id == top);
        CHECK(v1.read[0].rank == 5);
        // idempotent; a note-less repeat keeps the note
        CHECK(svc.mark_read(top) == r);
        CHECK(svc.worklist(RankMode::Severity).active.size() == 4);
        CHECK(code_of([&] { svc.mark_read("0000000000000000"); }) == ErrorCode::UnknownStudy);
        for (RankMode m : {RankMode::Identification, RankMode::Severity}) {
            const WorklistView v = svc.worklist(m);
            before_ids = ids_of(v.active);
            for (const auto& it : v.read)
                before_ids.push_back("read:" + it.record.study_id);
        }
    }
    TriageService again(dir / "store", fixture::phantom_scorer);
    const WorklistView v = again.worklist(RankMode::Severity);
    std::vector<std::string> after_ids = ids_of(v.active);
    for (const auto& it : v.read)
        after_ids.push_back("read:" + it.record.study_id);
    CHECK(after_ids == before_ids);
    CHECK(v.read[0].record.note == std::optional<std::string>("clear findings"));
}

TEST_CASE("service: pending section, NotScored, and unfinished work resumes after restart")
{
    Quiet q;
    fixture::TempDir dir;
    const Cohort c = write_cohort(dir / "in", 3, 500);
    std::vector<std::string> ids;
    {
        Gate gate;
        ServiceOptions opts;
        opts.workers = 1;
        TriageService svc(dir / "store", gate.scorer(), opts);
        for (const auto& f : c.files)
            ids.push_back(svc.ingest(f));
        REQUIRE(wait_for([&] { return gate.entered.load() == 1; }));
        const WorklistView v = svc.worklist(RankMode::Identification);
        CHECK(v.active.empty());
        CHECK(v.pending.size() == 3);
        CHECK(v.pending[0].status == StudyStatus::Processing);
        CHECK(v.pending[1].status == StudyStatus::Queued);
        CHECK(v.pending[0].ingested_at < v.pending[1].ingested_at);
        CHECK(code_of([&] { svc.mark_read(ids[2]); }) == ErrorCode::NotScored);
        CHECK(code_of([&] { svc.overlay(ids[2], 0); }) == ErrorCode::NotScored);
        CHECK_FALSE(svc.wait_idle(0.05));
        gate.open.set_value();
        // shutdown finishes the running study and may leave the rest queued
    }
    TriageService again(dir / "store", fixture::phantom_scorer);
    REQUIRE(again.wait_idle(60));
    for (const auto& id : ids)
        CHECK(again.study(id).status == StudyStatus::Scored);
}

TEST_CASE("service: scorer failures and missing models end in FAILED")
{
    Quiet q;
    fixture::TempDir dir;
    const Cohort c = write_cohort(dir / "in", 2, 600);
    {
        TriageService svc(dir / "a", [](const Volume&) -> PipelineOutput {
            throw Error(ErrorCode::EmptyMask, "no lungs found");
        });
        const std::string id = svc.ingest(c.files[0]);
        REQUIRE(svc.wait_idle(30));
        CHECK(svc.study(id).status == StudyStatus::Failed);
        CHECK(svc.study(id).error->find("no lungs found") != std::string::npos);
    }
    TriageService none(dir / "b", Scorer{});
    const std::string id = none.ingest(c.files[1]);
    REQUIRE(none.wait_idle(30));
    CHECK(none.study(id).status == StudyStatus::Failed);
    CHECK(none.health()["models_loaded"] == false);
}

TEST_CASE("concurrent mark_read never shows a read study as active")
{
    Quiet q;
    fixture::TempDir dir;
    const Cohort c = write_cohort(dir / "in", 8, 700);
    TriageService svc(dir / "store", fixture::phantom_scorer);
    std::vector<std::string> ids;
    for (const auto& f : c.files)
        ids.push_back(svc.ingest(f));
    REQUIRE(svc.wait_idle(60));

    std::atomic<bool> done{false};
    std::atomic<int> violations{0}, views{0};
    std::thread reader([&] {
        while (!done) {
            for (RankMode m : {RankMode::Identification, RankMode::Severity}) {
                const WorklistView v = svc.worklist(m);
                std::set<std::string> seen;
                for (const auto& it : v.active) {
                    if (it.record.read)
                        ++violations;
                    seen.insert(it.record.study_id);
                }
                for (const auto& it : v.read)
                    if (!it.record.read || seen.count(it.record.study_id))
                        ++violations;
                if (v.active.size() + v.read.size() != ids.size())
                    ++violations;
                ++views;
            }
        }
    });
    std::thread writer([&] {
        for (const auto& id : ids) {
            svc.mark_read(id);
            std::this_thread::sleep_for(std::chrono::milliseconds(1));
        }
    });
    writer.join();
    done = true;
    reader.join();
    CHECK(violations == 0);
    CHECK(views > 0);
    CHECK(svc.worklist(RankMode::Severity).active.empty());
}

// ---- Overlay ------------------------------------------------------------------

TEST_CASE("overlay tint sits exactly on the mask, hue follows severity")
{
    Quiet q;
    const Phantom p = generate_phantom(random_phantom_spec(11, true));
    REQUIRE(!p.lesion.empty());
    int lesion_slice = -1, clear_slice = -1;
    for (int z = 0; z < p.lesion.shape().z; ++z) {
        bool any = false;
        for (int y = 0; y < p.lesion.shape().y; ++y)
            for (int x = 0; x < p.lesion.shape().x; ++x)
                any = any || p.lesion.at(z, y, x);
        (any ? lesion_slice : clear_slice) = z;
    }
    REQUIRE(lesion_slice >= 0);

    for (OverlayStyle style : {OverlayStyle::Fill, OverlayStyle::Contour}) {
        const RgbImage img = render_overlay(p.volume, p.lesion, lesion_slice, p.severity, style);
        CHECK(img.width == p.volume.shape().x);
        CHECK(img.height == p.volume.shape().y);
        for (int y = 0; y < img.height; ++y) {
            for (int x = 0; x < img.width; ++x) {
                const auto px = img.at(y, x);
                const bool tinted = px[0] != px[1] || px[1] != px[2];
                if (style == OverlayStyle::Fill)
                    REQUIRE(tinted == p.lesion.at(lesion_slice, y, x));
                else if (tinted)
                    REQUIRE(p.lesion.at(lesion_slice, y, x));
            }
        }
    }
    if (clear_slice >= 0) {
        const RgbImage img = render_overlay(p.volume, p.lesion, clear_slice, p.severity);
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                const auto px = img.at(y, x);
                REQUIRE((px[0] == px[1] && px[1] == px[2]));
            }
    }

    // gray window: -1000 -> 0, 300 -> 255
    const Volume v({1, 2, 2}, {1, 1, 1}, {-1000.0f, 300.0f, -350.0f, -1000.0f});
    const RgbImage g = render_overlay(v, Mask::zeros_like(v, MaskKind::Lesion), 0, 0.0);
    CHECK(g.at(0, 0)[0] == 0);
    CHECK(g.at(0, 1)[0] == 255);
    CHECK(g.at(1, 0)[0] == 128);

    const auto mild = severity_color(0.1), severe = severity_color(0.6);
    CHECK(severity_color(0.0) == std::array<std::uint8_t, 3>{0, 255, 0});
    CHECK(severity_color(1.0) == std::array<std::uint8_t, 3>{255, 0, 0});
    CHECK(double(mild[1]) - mild[0] > double(severe[1]) - severe[0]);
    for (double s = 0; s < 1.0; s += 0.05) {
        const auto a = severity_color(s), b = severity_color(s + 0.05);
        CHECK(int(b[1]) - int(b[0]) < int(a[1]) - int(a[0]));
    }

    CHECK(code_of([&] { render_overlay(p.volume, p.lesion, -1, 0.2); }) == ErrorCode::SliceOutOfRange);
    CHECK(code_of([&] { render_overlay(p.volume, p.lesion, p.volume.shape().z, 0.2); }) ==
          ErrorCode::SliceOutOfRange);
    CHECK(code_of([&] { render_overlay(v, p.lesion, 0, 0.2); }) == ErrorCode::ShapeMismatch);
    CHECK(overlay_style_from_string("contour") == OverlayStyle::Contour);
}

TEST_CASE("bmp encoding: header, padding, bottom-up BGR rows")
{
    RgbImage img;
    img.width = 3;
    img.height = 2;
    img.rgb = {10, 20, 30, 40, 50, 60, 70, 80, 90, 1, 2, 3, 4, 5, 6, 7, 8, 9};
    const std::string b = encode_bmp(img);
    auto u32 = [&](std::size_t o) {
        return std::uint32_t(std::uint8_t(b[o])) | std::uint32_t(std::uint8_t(b[o + 1])) << 8 |
               std::uint32_t(std::uint8_t(b[o + 2])) << 16 | std::uint32_t(std::uint8_t(b[o + 3])) << 24;
    };
    CHECK(b.substr(0, 2) == "BM");
    CHECK(b.size() == 54 + 2 * 12);
    CHECK(u32(2) == b.size());
    CHECK(u32(10) == 54);
    CHECK(u32(18) == 3);
    CHECK(u32(22) == 2);
    CHECK(std::uint8_t(b[28]) == 24);
    // first stored row is the bottom image row
    CHECK(std::uint8_t(b[54]) == 3);
    CHECK(std::uint8_t(b[55]) == 2);
    CHECK(std::uint8_t(b[56]) == 1);
    CHECK(std::uint8_t(b[66]) == 30);
    CHECK(b[63] == 0); // row padding
}

TEST_CASE("service overlay matches the stored lesion mask")
{
    Quiet q;
    fixture::TempDir dir;
    const Cohort c = write_cohort(dir / "in", 1, 800);
    TriageService svc(dir / "store", fixture::phantom_scorer);
    const std::string id = svc.ingest(c.files[0]);
    REQUIRE(svc.wait_idle(30));
    const Mask stored = load_mask(svc.store_dir() / "masks" / (id + "_lesion.nii"), MaskKind::Lesion);
    CHECK(stored.data() == c.phantoms[0].lesion.data());
    for (int k = 0; k < stored.shape().z; ++k) {
        const RgbImage img = svc.overlay(id, k);
        CHECK(img.rgb == render_overlay(c.phantoms[0].volume, stored, k, svc.study(id).result->severity).rgb);
    }
    CHECK(code_of([&] { svc.overlay(id, stored.shape().z); }) == ErrorCode::SliceOutOfRange);
    CHECK(code_of([&] { svc.overlay("deadbeefdeadbeef", 0); }) == ErrorCode::UnknownStudy);
}

// ---- HTTP ---------------------------------------------------------------------

TEST_CASE("http api: routes, payloads and error statuses")
{
    Quiet q;
    fixture::TempDir dir;
    const Cohort c = write_cohort(dir / "in", 3, 900);
    TriageService svc(dir / "store", fixture::phantom_scorer, {2, {{"method", "oracle"}}});
    ApiServer api(svc);
    const int port = api.bind("127.0.0.1", 0);
    REQUIRE(port > 0);
    std::thread th([&] { api.listen(); });
    httplib::Client cli("127.0.0.1", port);
    REQUIRE(wait_for([&] { return bool(cli.Get("/healthz")); }));

    auto h = cli.Get("/healthz");
    REQUIRE(h);
    CHECK(h->status == 200);
    CHECK(nlohmann::json::parse(h->body)["models"]["method"] == "oracle");

    std::vector<std::string> ids;
    for (const auto& f : c.files) {
        std::ifstream in(f, std::ios::binary);
        const std::string bytes((std::istreambuf_iterator<char>(in)), {});
        httplib::MultipartFormDataItems items{{"volume", bytes, f.filename().string(), "application/octet-stream"}};
        auto r = cli.Post("/studies", items);
        REQUIRE(r);
        CHECK(r->status == 202);
        const auto j = nlohmann::json::parse(r->body);
        ids.push_back(j["study_id"]);
        CHECK(ids.back() == content_hash(f));
    }
    auto no_file = cli.Post("/studies", "{}", "application/json");
    REQUIRE(no_file);
    CHECK(no_file->status == 400);
    REQUIRE(svc.wait_idle(60));
    CHECK(svc.study(ids[0]).filename == c.files[0].filename().string());

    auto wl = cli.Get("/worklist?mode=severity");
    REQUIRE(wl);
    CHECK(wl->status == 200);
    const auto view = nlohmann::json::parse(wl->body);
    CHECK(view["mode"] == "severity");
    REQUIRE(view["active"].size() == 3);
    CHECK(view["active"][0]["rank"] == 1);
    std::vector<std::string> http_order;
    for (const auto& it : view["active"])
        http_order.push_back(it["study"]["study_id"]);
    CHECK(http_order == ids_of(svc.worklist(RankMode::Severity).active));
    CHECK(cli.Get("/worklist?mode=urgency")->status == 400);

    auto st = cli.Get("/studies/" + ids[1]);
    REQUIRE(st);
    CHECK(st->status == 200);
    const auto rec = nlohmann::json::parse(st->body);
    CHECK(rec["status"] == "SCORED");
    CHECK(rec["result"]["per_lung_fractions"].contains("left"));
    CHECK(cli.Get("/studies/0123456789abcdef")->status == 404);

    auto rd = cli.Post("/studies/" + ids[1] + "/read", R"({"note": "ok"})", "application/json");
    REQUIRE(rd);
    CHECK(rd->status == 200);
    CHECK(nlohmann::json::parse(rd->body)["read"] == true);
    CHECK(cli.Post("/studies/" + ids[2] + "/read", "", "application/json")->status == 200);
    CHECK(cli.Post("/studies/0123456789abcdef/read", "", "application/json")->status == 404);
    CHECK(cli.Post("/studies/" + ids[0] + "/read", "{bad", "application/json")->status == 400);
    CHECK(nlohmann::json::parse(cli.Get("/worklist?mode=identification")->body)["active"].size() == 1);

    auto ov = cli.Get("/studies/" + ids[0] + "/slices/3/overlay");
    REQUIRE(ov);
    CHECK(ov->status == 200);
    CHECK(ov->get_header_value("Content-Type") == "image/bmp");
    CHECK(ov->body == encode_bmp(svc.overlay(ids[0], 3)));
    CHECK(cli.Get("/studies/" + ids[0] + "/slices/3/overlay?style=contour")->body ==
          encode_bmp(svc.overlay(ids[0], 3, OverlayStyle::Contour)));
    auto oob = cli.Get("/studies/" + ids[0] + "/slices/99/overlay");
    REQUIRE(oob);
    CHECK(oob->status == 400);
    CHECK(nlohmann::json::parse(oob->body)["error"] == "SliceOutOfRange");
    CHECK(cli.Get("/studies/" + ids[0] + "/slices/-1/overlay")->status == 400);

    api.stop();
    th.join();
}
