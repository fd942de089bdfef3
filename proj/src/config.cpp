#include "triage/config.hpp"

#include "triage/error.hpp"
#include "triage/nn/weights_io.hpp"
#include "triage/phantom.hpp"
#include "triage/triage.hpp"
#include "triage/volume_io.hpp"

#include <chrono>
#include <fstream>

namespace triage {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void bad(const std::string& what)
{
    throw Error(ErrorCode::InvalidArgument, "experiment config: " + what);
}

Interpolation interpolation_from(const std::string& s)
{
    if (s == "nearest")
        return Interpolation::Nearest;
    if (s == "linear")
        return Interpolation::Linear;
    bad("interpolation must be nearest or linear, got '" + s + "'");
}

const char* interpolation_name(Interpolation i) { return i == Interpolation::Nearest ? "nearest" : "linear"; }

Shape3 shape_from(const json& j)
{
    const auto v = j.get<std::vector<int>>();
    if (v.size() != 3)
        bad("shape needs three entries (z, y, x)");
    return {v[0], v[1], v[2]};
}

Spacing spacing_from(const json& j)
{
    const auto v = j.get<std::vector<double>>();
    if (v.size() != 3)
        bad("spacing needs three entries (z, y, x)");
    return {v[0], v[1], v[2]};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!j.is_object())
        bad(where + " must be an object");
    for (const auto& [k, _] : j.items()) {
        bool ok = false;
        for (const char* a : allowed)
            ok = ok || k == a;
        if (!ok)
            bad("unknown key '" + k + "' in " + where);
    }
}

PreprocessConfig preprocess_from(const json& j, PreprocessConfig c)
{
    check_keys(j, {"target_spacing_y", "target_spacing_x", "hu_lo", "hu_hi", "image_interpolation",
                   "mask_interpolation"},
               "preprocess");
    c.target_spacing_y = j.value("target_spacing_y", c.target_spacing_y);
    c.target_spacing_x = j.value("target_spacing_x", c.target_spacing_x);
    c.hu_lo = j.value("hu_lo", c.hu_lo);
    c.hu_hi = j.value("hu_hi", c.hu_hi);
    if (j.contains("image_interpolation"))
        c.image_interpolation = interpolation_from(j.at("image_interpolation"));
    if (j.contains("mask_interpolation"))
        c.mask_interpolation = interpolation_from(j.at("mask_interpolation"));
    return c;
}

ThresholdConfig threshold_from(const json& j, ThresholdConfig c)
{
    check_keys(j, {"hu_min", "hu_max", "sigma", "v_min_fraction", "connectivity", "truncate"}, "threshold");
    c.hu_min = j.value("hu_min", c.hu_min);
    c.hu_max = j.value("hu_max", c.hu_max);
    c.sigma = j.value("sigma", c.sigma);
    c.v_min_fraction = j.value("v_min_fraction", c.v_min_fraction);
    c.connectivity = j.value("connectivity", c.connectivity);
    c.truncate = j.value("truncate", c.truncate);
    return c;
}

ModelConfig model_from(const json& j, ModelConfig m, const std::string& where)
{
    check_keys(j, {"spec", "train", "init_seed"}, where);
    if (j.contains("spec"))
        m.spec = nn::spec_from_json(j.at("spec"));
    if (j.contains("train"))
        m.train = train_config_from_json(j.at("train"));
    m.init_seed = j.value("init_seed", m.init_seed);
    return m;
}

std::vector<DatasetEntry> entries_from(const json& j, const fs::path& base)
{
    if (!j.is_array())
        bad("dataset lists must be arrays");
    auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() || base.empty() ? fs::path(p) : base / p; };
    std::vector<DatasetEntry> out;
    for (const json& e : j) {
        check_keys(e, {"id", "image", "lungs", "lesions", "label", "severity", "source"}, "dataset entry");
        DatasetEntry d;
        d.image = resolve(e.at("image").get<std::string>());
        d.lungs = resolve(e.at("lungs").get<std::string>());
        d.id = e.value("id", d.image.stem().string());
        if (e.contains("lesions"))
            d.lesions = resolve(e.at("lesions").get<std::string>());
        if (e.contains("label")) {
            const int l = e.at("label");
            if (l != 0 && l != 1)
                bad("label must be 0 or 1 for " + d.id);
            d.label = l;
        }
        d.source = e.value("source", d.source);
        if (!d.lesions && !d.label)
            bad("entry " + d.id + " has neither a lesion mask nor a label");
        out.push_back(std::move(d));
    }
    return out;
}

json entries_to_json(const std::vector<DatasetEntry>& v)
{
    json a = json::array();
    for (const auto& d : v) {
        json e{{"id", d.id}, {"image", d.image.string()}, {"lungs", d.lungs.string()}, {"source", d.source}};
        if (d.lesions)
            e["lesions"] = d.lesions->string();
        if (d.label)
            e["label"] = *d.label;
        a.push_back(std::move(e));
    }
    return a;
}

json model_to_json(const ModelConfig& m)
{
    return {{"spec", nn::spec_to_json(m.spec)}, {"train", to_json(m.train)}, {"init_seed", m.init_seed}};
}

} // namespace

json to_json(const train::TrainConfig& c)
{
    json sched = json::array();
    for (const auto& s : c.lr_schedule)
        sched.push_back({s.batch, s.lr});
    return {{"batches_total", c.batches_total},
            {"batch_size", c.batch_size},
            {"optimizer", train::to_string(c.optimizer)},
            {"lr_schedule", sched},
            {"cls_loss_weight", c.cls_loss_weight},
            {"balance_sampling", c.balance_sampling},
            {"balance_mode", train::to_string(c.balance_mode)},
            {"seed", c.seed},
            {"val_every", c.val_every}};
}

train::TrainConfig train_config_from_json(const json& j)
{
    check_keys(j, {"preset", "batches_total", "batch_size", "optimizer", "lr_schedule", "cls_loss_weight",
                   "balance_sampling", "balance_mode", "seed", "val_every"},
               "train");
    try {
        train::TrainConfig c = j.contains("preset") ? train::preset(j.at("preset")) : train::TrainConfig{};
        c.batches_total = j.value("batches_total", c.batches_total);
        c.batch_size = j.value("batch_size", c.batch_size);
        if (j.contains("optimizer"))
            c.optimizer = train::optimizer_from_string(j.at("optimizer"));
        if (j.contains("lr_schedule")) {
            c.lr_schedule.clear();
            for (const json& s : j.at("lr_schedule")) {
                if (!s.is_array() || s.size() != 2)
                    bad("lr_schedule entries are [batch, lr] pairs");
                c.lr_schedule.push_back({s[0].get<int>(), s[1].get<double>()});
            }
        }
        c.cls_loss_weight = j.value("cls_loss_weight", c.cls_loss_weight);
        c.balance_sampling = j.value("balance_sampling", c.balance_sampling);
        if (j.contains("balance_mode"))
            c.balance_mode = train::balance_mode_from_string(j.at("balance_mode"));
        c.seed = j.value("seed", c.seed);
        c.val_every = j.value("val_every", c.val_every);
        c.validate();
        return c;
    } catch (const json::exception& e) {
        bad(std::string("train: ") + e.what());
    }
}

void ExperimentConfig::validate() const
{
    preprocess.validate();
    threshold.validate();
    if (crop_margin < 0)
        bad("crop_margin must be >= 0");
    lungs.spec.validate();
    lungs.train.validate();
    if (!lungs.spec.has_segmentation() || lungs.spec.kind == nn::NetKind::Multitask)
        bad("the lung model must be a segmentation U-Net");
    if (lesions) {
        lesions->spec.validate();
        lesions->train.validate();
        const auto k = lesions->spec.kind;
        if (k != nn::NetKind::Multitask && k != nn::NetKind::Unet2d && k != nn::NetKind::Unet3d)
            bad("the lesion model must be MULTITASK, UNET2D or UNET3D");
    }
    if (train_data.empty()) {
        if (cohort.train_lesioned < 0 || cohort.train_healthy < 0 || cohort.val_lesioned < 0 || cohort.val_healthy < 0)
            bad("cohort counts must be >= 0");
        if (cohort.train_lesioned + cohort.train_healthy == 0)
            bad("empty training cohort");
    }
    if (service.workers < 1)
        bad("service.workers must be >= 1");
}

ExperimentConfig default_experiment()
{
    ExperimentConfig c;
    c.lungs.spec = nn::default_spec(nn::NetKind::LungUnet2d);
    c.lungs.spec.levels = 3;
    c.lungs.spec.base_channels = 4;
    c.lungs.train = train::preset("desk_lungs");
    c.lungs.init_seed = 1;
    ModelConfig les;
    les.spec = nn::default_spec(nn::NetKind::Multitask);
    les.spec.levels = 3;
    les.spec.base_channels = 8;
    les.spec.fc_hidden = 32;
    les.train = train::preset("desk_multitask");
    les.init_seed = 2;
    c.lesions = les;
    return c;
}

ExperimentConfig experiment_from_json(const json& j, const fs::path& base_dir)
{
    check_keys(j, {"preprocess", "threshold", "crop_margin", "models", "cohort", "data", "service"}, "config");
    ExperimentConfig c = default_experiment();
    try {
        if (j.contains("preprocess"))
            c.preprocess = preprocess_from(j.at("preprocess"), c.preprocess);
        if (j.contains("threshold"))
            c.threshold = threshold_from(j.at("threshold"), c.threshold);
        c.crop_margin = j.value("crop_margin", c.crop_margin);
        if (j.contains("models")) {
            const json& m = j.at("models");
            check_keys(m, {"lungs", "lesions"}, "models");
            if (m.contains("lungs"))
                c.lungs = model_from(m.at("lungs"), c.lungs, "models.lungs");
            if (m.contains("lesions")) {
                const json& l = m.at("lesions");
                if (l.is_null() || (l.is_string() && l == "threshold")) {
                    c.lesions.reset();
                } else {
                    ModelConfig base = c.lesions.value_or(ModelConfig{});
                    // a different kind starts from that kind's defaults
                    if (l.contains("spec") && l.at("spec").contains("kind") &&
                        nn::net_kind_from_string(l.at("spec").at("kind")) != base.spec.kind)
                        base.spec = nn::default_spec(nn::net_kind_from_string(l.at("spec").at("kind")));
                    c.lesions = model_from(l, base, "models.lesions");
                }
            }
        }
        if (j.contains("cohort")) {
            const json& h = j.at("cohort");
            check_keys(h, {"train_lesioned", "train_healthy", "val_lesioned", "val_healthy", "shape", "spacing", "seed"},
                       "cohort");
            c.cohort.train_lesioned = h.value("train_lesioned", c.cohort.train_lesioned);
            c.cohort.train_healthy = h.value("train_healthy", c.cohort.train_healthy);
            c.cohort.val_lesioned = h.value("val_lesioned", c.cohort.val_lesioned);
            c.cohort.val_healthy = h.value("val_healthy", c.cohort.val_healthy);
            if (h.contains("shape"))
                c.cohort.shape = shape_from(h.at("shape"));
            if (h.contains("spacing"))
                c.cohort.spacing = spacing_from(h.at("spacing"));
            c.cohort.seed = h.value("seed", c.cohort.seed);
        }
        if (j.contains("data")) {
            const json& d = j.at("data");
            check_keys(d, {"train", "val"}, "data");
            if (d.contains("train"))
                c.train_data = entries_from(d.at("train"), base_dir);
            if (d.contains("val"))
                c.val_data = entries_from(d.at("val"), base_dir);
        }
        if (j.contains("service")) {
            const json& s = j.at("service");
            check_keys(s, {"workers", "weights"}, "service");
            c.service.workers = s.value("workers", c.service.workers);
            if (s.contains("weights")) {
                fs::path w = s.at("weights").get<std::string>();
                c.service.weights = w.is_absolute() || base_dir.empty() ? w : base_dir / w;
            }
        }
    } catch (const json::exception& e) {
        bad(e.what());
    }
    c.validate();
    return c;
}

ExperimentConfig load_experiment(const fs::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw Error(ErrorCode::UnreadableFile, "cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::InvalidArgument, "config " + path.string() + ": " + e.what());
    }
    return experiment_from_json(j, path.parent_path());
}

json to_json(const ExperimentConfig& c)
{
    const auto& p = c.preprocess;
    const auto& t = c.threshold;
    json j{{"preprocess",
            {{"target_spacing_y", p.target_spacing_y},
             {"target_spacing_x", p.target_spacing_x},
             {"hu_lo", p.hu_lo},
             {"hu_hi", p.hu_hi},
             {"image_interpolation", interpolation_name(p.image_interpolation)},
             {"mask_interpolation", interpolation_name(p.mask_interpolation)}}},
           {"threshold",
            {{"hu_min", t.hu_min},
             {"hu_max", t.hu_max},
             {"sigma", t.sigma},
             {"v_min_fraction", t.v_min_fraction},
             {"connectivity", t.connectivity},
             {"truncate", t.truncate}}},
           {"crop_margin", c.crop_margin},
           {"models", {{"lungs", model_to_json(c.lungs)}}},
           {"cohort",
            {{"train_lesioned", c.cohort.train_lesioned},
             {"train_healthy", c.cohort.train_healthy},
             {"val_lesioned", c.cohort.val_lesioned},
             {"val_healthy", c.cohort.val_healthy},
             {"shape", {c.cohort.shape.z, c.cohort.shape.y, c.cohort.shape.x}},
             {"spacing", {c.cohort.spacing.z, c.cohort.spacing.y, c.cohort.spacing.x}},
             {"seed", c.cohort.seed}}},
           {"service", {{"workers", c.service.workers}, {"weights", c.service.weights.string()}}}};
    j["models"]["lesions"] = c.lesions ? model_to_json(*c.lesions) : json("threshold");
    if (!c.train_data.empty() || !c.val_data.empty())
        j["data"] = {{"train", entries_to_json(c.train_data)}, {"val", entries_to_json(c.val_data)}};
    return j;
}

// ---- Training driver ----------------------------------------------------------

namespace {

void cohort_samples(const ExperimentConfig& c, int lesioned, int healthy, std::uint64_t seed0,
                    const std::string& prefix, std::vector<train::Sample>& lungs, std::vector<train::Sample>& lesions)
{
    int nl = 0, nh = 0;
    for (int i = 0; nl + nh < lesioned + healthy; ++i) {
        const bool les = (i % 2 == 0 && nl < lesioned) || nh >= healthy;
        (les ? nl : nh)++;
        const Phantom p = generate_phantom(random_phantom_spec(seed0 + std::uint64_t(i), les, c.cohort.shape,
                                                               c.cohort.spacing));
        PhantomSamples s = phantom_samples(p, prefix + std::to_string(i), c.preprocess, c.crop_margin);
        lungs.push_back(std::move(s.lungs));
        lesions.push_back(std::move(s.lesions));
    }
}

void manifest_samples(const ExperimentConfig& c, const std::vector<DatasetEntry>& entries,
                      std::vector<train::Sample>& lungs, std::vector<train::Sample>& lesions)
{
    for (const auto& e : entries) {
        const Volume v = load_volume(e.image);
        const Mask lm = load_mask(e.lungs, MaskKind::Lungs);
        std::optional<Mask> les;
        if (e.lesions)
            les = load_mask(*e.lesions, MaskKind::Lesion);
        PhantomSamples s = study_samples(v, lm, les, e.label, e.id, e.source, c.preprocess, c.crop_margin);
        lungs.push_back(std::move(s.lungs));
        lesions.push_back(std::move(s.lesions));
    }
}

} // namespace

ExperimentResult run_experiment(const ExperimentConfig& c, const fs::path& out, const ExperimentLog& log)
{
    c.validate();
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<train::Sample> lung_tr, les_tr, lung_val, les_val;
    if (c.train_data.empty()) {
        cohort_samples(c, c.cohort.train_lesioned, c.cohort.train_healthy, c.cohort.seed, "train", lung_tr, les_tr);
        cohort_samples(c, c.cohort.val_lesioned, c.cohort.val_healthy, c.cohort.seed + 4000, "val", lung_val, les_val);
    } else {
        manifest_samples(c, c.train_data, lung_tr, les_tr);
        manifest_samples(c, c.val_data, lung_val, les_val);
    }

    auto logger = [&](const std::string& name) -> train::ProgressFn {
        if (!log)
            return {};
        return [&log, name](const train::BatchLog& b, const train::ValidationLog* v) { log(name, b, v); };
    };

    ExperimentResult r;
    nn::Network<float> lungs(c.lungs.spec, c.lungs.init_seed);
    r.lungs = train::train(lungs, lung_tr, lung_val, c.lungs.train, logger("lungs"));
    std::vector<nn::NamedModel<float>> bundle{{"lungs", &lungs}};

    std::optional<nn::Network<float>> lesions;
    if (c.lesions) {
        // segmentation-only nets cannot use label-only studies
        if (!c.lesions->spec.has_classification()) {
            std::erase_if(les_tr, [](const train::Sample& s) { return !s.mask; });
            std::erase_if(les_val, [](const train::Sample& s) { return !s.mask; });
        }
        lesions.emplace(c.lesions->spec, c.lesions->init_seed);
        r.lesions = train::train(*lesions, les_tr, les_val, c.lesions->train, logger("lesions"));
        bundle.push_back({"lesions", &*lesions});
    }
    nn::save_weights<float>(bundle, out);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return r;
}

} // namespace triage
