#include "doctest.h"

#include "support/fixtures.hpp"
#include "triage/config.hpp"
#include "triage/error.hpp"
#include "triage/nn/weights_io.hpp"
#include "triage/volume_io.hpp"

#include <fstream>

using namespace triage;
using nlohmann::json;
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

// A training setup small enough for a unit test.
json tiny_config()
{
    return json::parse(R"({
        "cohort": {"train_lesioned": 3, "train_healthy": 3, "val_lesioned": 1, "val_healthy": 1,
                   "shape": [16, 32, 32], "seed": 70},
        "models": {
            "lungs": {"train": {"preset": "desk_lungs", "batches_total": 6, "val_every": 3}},
            "lesions": {"train": {"preset": "desk_multitask", "batches_total": 6, "val_every": 3}}
        }
    })");
}

} // namespace

TEST_CASE("experiment config: defaults, round trip and overrides")
{
    const ExperimentConfig d = default_experiment();
    CHECK_NOTHROW(d.validate());
    REQUIRE(d.lesions);
    CHECK(d.lesions->spec.kind == nn::NetKind::Multitask);
    CHECK(d.lungs.spec.kind == nn::NetKind::LungUnet2d);
    CHECK(d.lesions->train.cls_loss_weight == 0.1);
    CHECK(d.threshold.hu_min == -700.0);
    CHECK(d.threshold.sigma == 4.0);
    CHECK(d.service.workers == 2);

    const json j = to_json(d);
    CHECK(to_json(experiment_from_json(j)) == j);
    CHECK(to_json(experiment_from_json(json::object())) == j);

    const ExperimentConfig o = experiment_from_json(json::parse(R"({
        "preprocess": {"hu_hi": 400, "image_interpolation": "nearest"},
        "threshold": {"sigma": 2.5},
        "crop_margin": 4,
        "models": {"lesions": {"spec": {"kind": "UNET3D", "levels": 2}, "train": {"preset": "unet3d", "batches_total": 50}}},
        "service": {"workers": 3, "weights": "w.bin"}
    })"),
                                                       "/data/exp");
    CHECK(o.preprocess.hu_hi == 400.0);
    CHECK(o.preprocess.image_interpolation == Interpolation::Nearest);
    CHECK(o.threshold.sigma == 2.5);
    CHECK(o.threshold.hu_min == -700.0);
    CHECK(o.crop_margin == 4);
    REQUIRE(o.lesions);
    CHECK(o.lesions->spec.kind == nn::NetKind::Unet3d);
    CHECK(o.lesions->spec.levels == 2);
    CHECK(o.lesions->spec.base_channels == nn::default_spec(nn::NetKind::Unet3d).base_channels);
    CHECK(o.lesions->train.optimizer == train::OptimizerKind::Sgd);
    CHECK(o.lesions->train.batches_total == 50);
    CHECK(o.lesions->train.lr_schedule.front().lr == 0.01);
    CHECK(o.service.workers == 3);
    CHECK(o.service.weights == fs::path("/data/exp/w.bin"));

    const ExperimentConfig t = experiment_from_json(json::parse(R"({"models": {"lesions": "threshold"}})"));
    CHECK(!t.lesions);
    CHECK(to_json(experiment_from_json(to_json(t))) == to_json(t));
}

TEST_CASE("experiment config: malformed input is rejected")
{
    auto code = [](const char* text) { return code_of([&] { experiment_from_json(json::parse(text)); }); };
    CHECK(code(R"({"preproces": {}})") == ErrorCode::InvalidArgument);
    CHECK(code(R"({"threshold": {"sigma": -1}})") == ErrorCode::InvalidArgument);
    CHECK(code(R"({"models": {"lungs": {"train": {"cls_loss_weight": -0.1}}}})") == ErrorCode::InvalidArgument);
    CHECK(code(R"({"models": {"lungs": {"train": {"lr_schedule": [[0, 1e-3], [10]]}}}})") ==
          ErrorCode::InvalidArgument);
    CHECK(code(R"({"models": {"lungs": {"train": {"preset": "huge"}}}})") == ErrorCode::InvalidArgument);
    CHECK(code(R"({"models": {"lungs": {"spec": {"kind": "MULTITASK"}}}})") == ErrorCode::InvalidArgument);
    CHECK(code(R"({"models": {"lesions": {"spec": {"kind": "RESNET_CLS"}}}})") == ErrorCode::InvalidArgument);
    CHECK(code(R"({"models": {"lesions": {"spec": {"kind": "MULTITASK", "attach_level": 9}}}})") ==
          ErrorCode::InvalidSpec);
    CHECK(code(R"({"cohort": {"shape": [16, 32]}})") == ErrorCode::InvalidArgument);
    CHECK(code(R"({"data": {"train": [{"image": "a.nii", "lungs": "b.nii"}]}})") == ErrorCode::InvalidArgument);
    CHECK(code(R"({"data": {"train": [{"image": "a.nii", "lungs": "b.nii", "label": 2}]}})") ==
          ErrorCode::InvalidArgument);
    CHECK(code(R"({"service": {"workers": 0}})") == ErrorCode::InvalidArgument);

    fixture::TempDir dir;
    CHECK(code_of([&] { load_experiment(dir / "absent.json"); }) == ErrorCode::UnreadableFile);
    std::ofstream(dir / "broken.json") << "{ \"crop_margin\": ";
    CHECK(code_of([&] { load_experiment(dir / "broken.json"); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("experiment config file with comments and relative manifest paths")
{
    fixture::TempDir dir;
    {
        std::ofstream f(dir / "exp.json");
        f << "// desk run\n{\n  \"crop_margin\": 3, /* voxels */\n"
             "  \"data\": {\"train\": [{\"id\": \"s1\", \"image\": \"v/s1.nii\", \"lungs\": \"m/s1_lungs.nii\","
             " \"label\": 1}]}\n}\n";
    }
    const ExperimentConfig c = load_experiment(dir / "exp.json");
    CHECK(c.crop_margin == 3);
    REQUIRE(c.train_data.size() == 1);
    CHECK(c.train_data[0].id == "s1");
    CHECK(c.train_data[0].image == dir.path / "v/s1.nii");
    CHECK(c.train_data[0].lungs == dir.path / "m/s1_lungs.nii");
    CHECK(!c.train_data[0].lesions);
    CHECK(c.train_data[0].label == std::optional<int>(1));
}

TEST_CASE("run_experiment writes a loadable lungs + lesions bundle")
{
    Quiet q;
    fixture::TempDir dir;
    ExperimentConfig c = experiment_from_json(tiny_config());
    int lung_vals = 0, lesion_vals = 0;
    const ExperimentResult r =
        run_experiment(c, dir / "w.bin", [&](const std::string& m, const train::BatchLog&, const train::ValidationLog* v) {
            if (v)
                ++(m == "lungs" ? lung_vals : lesion_vals);
        });
    CHECK(r.lungs.batches.size() == 6);
    REQUIRE(r.lesions);
    CHECK(r.lesions->batches.size() == 6);
    CHECK(lung_vals == 2);
    CHECK(lesion_vals == 2);
    CHECK(nn::model_names(dir / "w.bin") == std::vector<std::string>{"lungs", "lesions"});
    const TriageModels m = TriageModels::load(dir / "w.bin");
    CHECK(m.method == LesionMethod::Multitask);
    CHECK(m.lungs->spec() == c.lungs.spec);
    CHECK(m.lesions->spec() == c.lesions->spec);

    // same config, same bytes
    run_experiment(c, dir / "w2.bin");
    std::ifstream a(dir / "w.bin", std::ios::binary), b(dir / "w2.bin", std::ios::binary);
    CHECK(std::string(std::istreambuf_iterator<char>(a), {}) == std::string(std::istreambuf_iterator<char>(b), {}));

    c.lesions.reset();
    run_experiment(c, dir / "t.bin");
    CHECK(TriageModels::load(dir / "t.bin").method == LesionMethod::Threshold);
}

TEST_CASE("run_experiment trains from a manifest on disk")
{
    Quiet q;
    fixture::TempDir dir;
    json train_entries = json::array(), val_entries = json::array();
    for (int i = 0; i < 4; ++i) {
        const Phantom p = generate_phantom(random_phantom_spec(90 + std::uint64_t(i), i % 2 == 0, {16, 32, 32}));
        const std::string id = "p" + std::to_string(i);
        save_volume(p.volume, dir / (id + ".nii"));
        save_mask(p.lungs, dir / (id + "_lungs.nii"));
        save_mask(p.lesion, dir / (id + "_lesion.nii"));
        json e{{"id", id}, {"image", id + ".nii"}, {"lungs", id + "_lungs.nii"}, {"label", p.label}};
        if (i != 1)
            e["lesions"] = id + "_lesion.nii"; // one label-only study
        (i < 3 ? train_entries : val_entries).push_back(e);
    }
    json cfg = tiny_config();
    cfg.erase("cohort");
    cfg["data"] = {{"train", train_entries}, {"val", val_entries}};
    std::ofstream(dir / "exp.json") << cfg.dump(2);
    const ExperimentConfig c = load_experiment(dir / "exp.json");
    REQUIRE(c.train_data.size() == 3);
    const ExperimentResult r = run_experiment(c, dir / "w.bin");
    CHECK(r.lesions->batches.size() == 6);
    CHECK(TriageModels::load(dir / "w.bin").method == LesionMethod::Multitask);

    json bad = cfg;
    bad["data"]["train"][0]["image"] = "missing.nii";
    std::ofstream(dir / "bad.json") << bad.dump(2);
    CHECK(code_of([&] { run_experiment(load_experiment(dir / "bad.json"), dir / "x.bin"); }) ==
          ErrorCode::UnreadableFile);
}
