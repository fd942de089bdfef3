// triage: train models, score studies, generate phantoms, run the worklist service.

#include "triage/config.hpp"
#include "triage/error.hpp"
#include "triage/nn/weights_io.hpp"
#include "triage/phantom.hpp"
#include "triage/service/http.hpp"
#include "triage/triage.hpp"
#include "triage/volume_io.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <algorithm>
#include <csignal>
#include <cstdio>
#include <fstream>
#include <iostream>

using namespace triage;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct ThresholdFlags {
    std::optional<double> hu_min, hu_max, sigma, v_min;

    void add(CLI::App* app)
    {
        app->add_option("--hu-min", hu_min, "threshold method: lower HU bound");
        app->add_option("--hu-max", hu_max, "threshold method: upper HU bound");
        app->add_option("--sigma", sigma, "threshold method: Gaussian sigma in voxels");
        app->add_option("--v-min", v_min, "threshold method: minimum component size as a fraction of the lungs");
    }

    void apply(ThresholdConfig& t) const
    {
        if (hu_min)
            t.hu_min = *hu_min;
        if (hu_max)
            t.hu_max = *hu_max;
        if (sigma)
            t.sigma = *sigma;
        if (v_min)
            t.v_min_fraction = *v_min;
        t.validate();
    }
};

bool is_volume_file(const fs::path& p)
{
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return char(std::tolower(c)); });
    return ext == ".nii" || ext == ".raw";
}

std::vector<fs::path> input_files(const fs::path& input)
{
    std::vector<fs::path> files;
    if (fs::is_regular_file(input)) {
        files.push_back(input);
    } else if (fs::is_directory(input)) {
        for (const auto& e : fs::directory_iterator(input))
            if (e.is_regular_file() && is_volume_file(e.path()))
                files.push_back(e.path());
        std::sort(files.begin(), files.end());
    } else {
        throw Error(ErrorCode::UnreadableFile, "no such input " + input.string());
    }
    if (files.empty())
        throw Error(ErrorCode::EmptyInput, "no .nii or .raw volumes in " + input.string());
    return files;
}

TriageModels load_models(const fs::path& weights, const ExperimentConfig& cfg, bool force_threshold)
{
    TriageModels m = TriageModels::load(weights);
    m.preprocess = cfg.preprocess;
    m.threshold = cfg.threshold;
    m.crop_margin = cfg.crop_margin;
    if (force_threshold) {
        m.lesions.reset();
        m.method = LesionMethod::Threshold;
    }
    return m;
}

json model_status(const fs::path& weights, const TriageModels& m)
{
    json j{{"weights", weights.string()}, {"method", to_string(m.method)}, {"lungs", nn::spec_to_json(m.lungs->spec())}};
    j["lesions"] = m.lesions ? nn::spec_to_json(m.lesions->spec()) : json(nullptr);
    return j;
}

int cmd_train(const fs::path& config, const fs::path& out, bool quiet)
{
    const ExperimentConfig cfg = config.empty() ? default_experiment() : load_experiment(config);
    ExperimentLog log;
    if (!quiet) {
        log = [](const std::string& model, const train::BatchLog& b, const train::ValidationLog* v) {
            if (!v)
                return;
            std::printf("%-7s batch %6d  loss %.5f  lr %.2g  val_loss %.5f", model.c_str(), b.batch, b.loss, b.lr,
                        v->loss);
            if (v->auc)
                std::printf("  val_auc %.4f", *v->auc);
            std::printf("\n");
            std::fflush(stdout);
        };
    }
    const ExperimentResult r = run_experiment(cfg, out, log);
    std::printf("lungs: best batch %d\n", r.lungs.best_batch);
    if (r.lesions) {
        std::printf("lesions: best batch %d", r.lesions->best_batch);
        if (r.lesions->best_auc)
            std::printf(", validation AUC %.4f", *r.lesions->best_auc);
        std::printf("\n");
    }
    std::printf("wrote %s (%.1f s)\n", out.string().c_str(), r.seconds);
    return 0;
}

int cmd_run(const fs::path& input, const fs::path& weights, const std::string& mode, const fs::path& output,
            const fs::path& config, bool threshold, const ThresholdFlags& flags, const fs::path& masks_dir)
{
    ExperimentConfig cfg = config.empty() ? default_experiment() : load_experiment(config);
    flags.apply(cfg.threshold);
    const TriageModels models = load_models(weights, cfg, threshold);
    if (!masks_dir.empty())
        fs::create_directories(masks_dir);

    std::vector<RankEntry> entries;
    std::int64_t order = 0;
    for (const fs::path& f : input_files(input)) {
        const std::string id = f.stem().string();
        try {
            const PipelineOutput out = run_pipeline(load_volume(f).with_study_id(id), models);
            if (!masks_dir.empty()) {
                save_mask(out.lesion, masks_dir / (id + "_lesion.nii"));
                save_mask(out.lungs, masks_dir / (id + "_lungs.nii"));
            }
            std::fprintf(stderr, "%s: p=%.4f severity=%.4f CT-%d\n", id.c_str(), out.result.covid_probability,
                         out.result.severity, out.result.ct_grade);
            entries.push_back({out.result, order++});
        } catch (const Error& e) {
            std::fprintf(stderr, "%s: skipped (%s)\n", f.string().c_str(), e.what());
        }
    }
    if (mode != "both")
        entries = rank_studies(std::move(entries), rank_mode_from_string(mode));
    json arr = json::array();
    for (const auto& e : entries)
        arr.push_back(to_json(e.result));
    std::ofstream out(output);
    out << arr.dump(2) << '\n';
    if (!out)
        throw Error(ErrorCode::IOFailure, "cannot write " + output.string());
    std::printf("%zu studies -> %s\n", entries.size(), output.string().c_str());
    return 0;
}

int cmd_phantom(const fs::path& out, int lesioned, int healthy, std::uint64_t seed, const std::vector<int>& shape)
{
    if (shape.size() != 3)
        throw Error(ErrorCode::InvalidArgument, "--shape takes z y x");
    fs::create_directories(out / "masks");
    json manifest = json::array();
    int nl = 0, nh = 0;
    for (int i = 0; nl + nh < lesioned + healthy; ++i) {
        const bool les = (i % 2 == 0 && nl < lesioned) || nh >= healthy;
        (les ? nl : nh)++;
        const Phantom p =
            generate_phantom(random_phantom_spec(seed + std::uint64_t(i), les, {shape[0], shape[1], shape[2]}));
        char name[32];
        std::snprintf(name, sizeof name, "phantom_%03d", i);
        save_volume(p.volume, out / (std::string(name) + ".nii"));
        save_mask(p.lungs, out / "masks" / (std::string(name) + "_lungs.nii"));
        save_mask(p.lesion, out / "masks" / (std::string(name) + "_lesion.nii"));
        manifest.push_back({{"id", name},
                            {"image", std::string(name) + ".nii"},
                            {"lungs", "masks/" + std::string(name) + "_lungs.nii"},
                            {"lesions", "masks/" + std::string(name) + "_lesion.nii"},
                            {"label", p.label},
                            {"severity", p.severity},
                            {"source", "phantom"}});
    }
    std::ofstream(out / "manifest.json") << manifest.dump(2) << '\n';
    std::printf("wrote %d phantoms to %s\n", lesioned + healthy, out.string().c_str());
    return 0;
}

service::ApiServer* g_server = nullptr;

extern "C" void on_signal(int)
{
    if (g_server)
        g_server->stop();
}

int cmd_serve(const fs::path& config, const fs::path& weights_flag, const std::string& host, int port,
              const fs::path& store, const ThresholdFlags& flags)
{
    ExperimentConfig cfg = config.empty() ? default_experiment() : load_experiment(config);
    flags.apply(cfg.threshold);
    const fs::path weights = weights_flag.empty() ? cfg.service.weights : weights_flag;
    service::Scorer scorer;
    service::ServiceOptions opts;
    opts.workers = cfg.service.workers;
    if (!weights.empty()) {
        auto models = std::make_shared<const TriageModels>(load_models(weights, cfg, false));
        opts.model_status = model_status(weights, *models);
        scorer = service::pipeline_scorer(models);
    } else {
        std::fprintf(stderr, "warning: no weights configured; studies will fail until restarted with models\n");
    }
    service::TriageService svc(store, scorer, opts);
    service::ApiServer api(svc);
    const int bound = api.bind(host, port);
    if (bound < 0)
        throw Error(ErrorCode::IOFailure, "cannot bind " + host + ":" + std::to_string(port));
    g_server = &api;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::printf("serving on http://%s:%d (store %s)\n", host.c_str(), bound, store.string().c_str());
    std::fflush(stdout);
    api.listen();
    g_server = nullptr;
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"COVID-19 CT triage: lung and lesion segmentation, severity scoring, worklist service"};
    app.require_subcommand(1);

    fs::path config, out, input, weights, output, store, masks_dir;
    std::string mode = "both", host = "127.0.0.1";
    int port = 8080;
    bool quiet = false, threshold = false;
    ThresholdFlags tflags;

    auto* train = app.add_subcommand("train", "train the lung and lesion networks");
    train->add_option("--config", config, "experiment config (JSON); defaults to the desk-scale setup");
    train->add_option("--out", out, "weights bundle to write")->required();
    train->add_flag("--quiet", quiet, "no per-validation log lines");

    auto* run = app.add_subcommand("run", "score a directory of volumes");
    run->add_option("--input", input, "volume file or directory of .nii/.raw volumes")->required();
    run->add_option("--weights", weights, "weights bundle")->required();
    run->add_option("--mode", mode, "ordering of results.json")
        ->check(CLI::IsMember({"identification", "severity", "both"}));
    run->add_option("--output", output, "results file")->required();
    run->add_option("--config", config, "experiment config for preprocessing and threshold settings");
    run->add_option("--masks", masks_dir, "also write lesion and lung masks here");
    run->add_flag("--threshold", threshold, "use the threshold baseline instead of the lesion network");
    tflags.add(run);

    auto* serve = app.add_subcommand("serve", "run the worklist service");
    serve->add_option("--config", config, "experiment config; its service section names the weights");
    serve->add_option("--weights", weights, "weights bundle (overrides the config)");
    serve->add_option("--host", host, "bind address");
    serve->add_option("--port", port, "port (0 picks a free one)");
    serve->add_option("--store", store, "state directory")->required();
    tflags.add(serve);

    int lesioned = 5, healthy = 5;
    std::uint64_t seed = 1;
    std::vector<int> shape{16, 48, 48};
    auto* phantom = app.add_subcommand("phantom", "write synthetic chest phantoms with masks and a manifest");
    phantom->add_option("--out", out, "output directory")->required();
    phantom->add_option("--lesioned", lesioned, "number with lesions");
    phantom->add_option("--healthy", healthy, "number without");
    phantom->add_option("--seed", seed, "first seed");
    phantom->add_option("--shape", shape, "z y x")->expected(3);

    auto* show = app.add_subcommand("config", "print the effective experiment config");
    show->add_option("--config", config, "config to load; defaults shown otherwise");

    CLI11_PARSE(app, argc, argv);
    try {
        if (*train)
            return cmd_train(config, out, quiet);
        if (*run)
            return cmd_run(input, weights, mode, output, config, threshold, tflags, masks_dir);
        if (*serve)
            return cmd_serve(config, weights, host, port, store, tflags);
        if (*phantom)
            return cmd_phantom(out, lesioned, healthy, seed, shape);
        if (*show) {
            std::cout << to_json(config.empty() ? default_experiment() : load_experiment(config)).dump(2) << '\n';
            return 0;
        }
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
