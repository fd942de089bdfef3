#include "triage/train.hpp"

#include "triage/error.hpp"
#include "triage/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace triage::train {

void Sample::validate() const
{
    if (!mask && !label)
        throw Error(ErrorCode::InvalidArgument, "sample '" + id + "' has neither a mask nor a label");
    if (mask && mask->shape() != image.shape())
        throw Error(ErrorCode::InvalidArgument, "sample '" + id + "' mask is not aligned with its image");
    if (label && *label != 0 && *label != 1)
        throw Error(ErrorCode::InvalidArgument, "sample '" + id + "' label must be 0 or 1");
}

// ---- Loss ---------------------------------------------------------------------

namespace {

double clamp_prob(double p) { return std::clamp(p, kBceEpsilon, 1.0 - kBceEpsilon); }

bool clamped(double p) { return p < kBceEpsilon || p > 1.0 - kBceEpsilon; }

} // namespace

double bce(double p, int y)
{
    const double q = clamp_prob(p);
    return y ? -std::log(q) : -std::log(1.0 - q);
}

double sample_loss(const LossSample& s, std::size_t n_seg, std::size_t n_cls, double lambda,
                   std::vector<double>& grad_seg, double& grad_cls, double* seg_part, double* cls_part)
{
    const bool has_seg = !s.seg_target.empty();
    const bool has_cls = s.cls_target.has_value();
    if (!has_seg && !has_cls)
        throw Error(ErrorCode::NoTargets, "sample has neither a mask nor a label");
    double seg = 0.0, cls = 0.0;
    grad_seg.clear();
    grad_cls = 0.0;
    if (has_seg) {
        if (s.seg_prob.size() != s.seg_target.size())
            throw Error(ErrorCode::ShapeMismatch, "segmentation prediction and target differ in size");
        const double per_voxel = 1.0 / (double(n_seg) * double(s.seg_prob.size()));
        grad_seg.resize(s.seg_prob.size());
        double sum = 0.0;
        for (std::size_t i = 0; i < s.seg_prob.size(); ++i) {
            const double p = s.seg_prob[i];
            const int y = s.seg_target[i];
            sum += bce(p, y);
            grad_seg[i] = clamped(p) ? 0.0 : per_voxel * (p - double(y));
        }
        seg = sum / double(s.seg_prob.size()) / double(n_seg);
    }
    if (has_cls) {
        const double p = s.cls_prob;
        cls = bce(p, *s.cls_target) / double(n_cls);
        grad_cls = clamped(p) ? 0.0 : lambda / double(n_cls) * (p - double(*s.cls_target));
    }
    if (seg_part)
        *seg_part = seg;
    if (cls_part)
        *cls_part = cls;
    return seg + lambda * cls;
}

LossResult multitask_loss(const std::vector<LossSample>& batch, double lambda)
{
    if (!(lambda >= 0.0))
        throw Error(ErrorCode::InvalidArgument, "classification loss weight must be non-negative");
    if (batch.empty())
        throw Error(ErrorCode::NoTargets, "empty batch");
    std::size_t n_seg = 0, n_cls = 0;
    for (const auto& s : batch) {
        n_seg += !s.seg_target.empty();
        n_cls += s.cls_target.has_value();
    }
    LossResult r;
    r.grad_seg_logits.resize(batch.size());
    r.grad_cls_logit.resize(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        double seg = 0.0, cls = 0.0;
        r.total += sample_loss(batch[i], n_seg, n_cls, lambda, r.grad_seg_logits[i], r.grad_cls_logit[i], &seg, &cls);
        r.seg += seg;
        r.cls += cls;
    }
    return r;
}

// ---- Sampling -----------------------------------------------------------------

const char* to_string(BalanceMode m)
{
    switch (m) {
    case BalanceMode::None: return "none";
    case BalanceMode::Label: return "label";
    case BalanceMode::Supervision: return "supervision";
    }
    return "?";
}

BalanceMode balance_mode_from_string(const std::string& s)
{
    for (BalanceMode m : {BalanceMode::None, BalanceMode::Label, BalanceMode::Supervision})
        if (s == to_string(m))
            return m;
    throw Error(ErrorCode::InvalidArgument, "unknown balance mode '" + s + "'");
}

BatchSampler::BatchSampler(const std::vector<Sample>& data, int batch_size, BalanceMode mode, std::uint64_t seed)
    : batch_size_(batch_size), stratum_(data.size(), -1), rng_(seed)
{
    if (data.empty())
        throw Error(ErrorCode::NoTargets, "cannot sample from an empty dataset");
    if (batch_size < 1)
        throw Error(ErrorCode::InvalidArgument, "batch size must be positive");
    for (std::size_t i = 0; i < data.size(); ++i) {
        int s = -1;
        if (mode == BalanceMode::Label && data[i].label)
            s = *data[i].label ? 0 : 1;
        else if (mode == BalanceMode::Supervision)
            s = data[i].mask ? 0 : 1;
        stratum_[i] = s;
        if (s >= 0)
            members_[s].push_back(i);
    }
    balanced_ = mode != BalanceMode::None && !members_[0].empty() && !members_[1].empty();
    if (mode != BalanceMode::None && !balanced_)
        warn(std::string("balanced sampling by ") + to_string(mode) +
             " found a single stratum; falling back to plain shuffling");
    order_.resize(data.size());
    std::iota(order_.begin(), order_.end(), 0);
    cursor_ = order_.size();
}

std::vector<std::size_t> BatchSampler::next()
{
    std::vector<std::size_t> batch;
    batch.reserve(std::size_t(batch_size_));
    if (balanced_) {
        const int big = int(batches_ % 2);
        const int counts[2] = {big == 0 ? (batch_size_ + 1) / 2 : batch_size_ / 2,
                               big == 1 ? (batch_size_ + 1) / 2 : batch_size_ / 2};
        for (int s = 0; s < 2; ++s) {
            std::uniform_int_distribution<std::size_t> pick(0, members_[s].size() - 1);
            for (int k = 0; k < counts[s]; ++k)
                batch.push_back(members_[s][pick(rng_)]);
        }
        std::shuffle(batch.begin(), batch.end(), rng_);
    } else {
        while (int(batch.size()) < batch_size_) {
            if (cursor_ == order_.size()) {
                std::shuffle(order_.begin(), order_.end(), rng_);
                cursor_ = 0;
            }
            batch.push_back(order_[cursor_++]);
        }
    }
    ++batches_;
    return batch;
}

std::vector<std::vector<std::size_t>> balanced_batches(const std::vector<Sample>& data, int batch_size,
                                                       BalanceMode mode, int count, std::uint64_t seed)
{
    BatchSampler sampler(data, batch_size, mode, seed);
    std::vector<std::vector<std::size_t>> out;
    out.reserve(std::size_t(std::max(count, 0)));
    for (int i = 0; i < count; ++i)
        out.push_back(sampler.next());
    return out;
}

// ---- Optimizers -------------------------------------------------------------------

const char* to_string(OptimizerKind k) { return k == OptimizerKind::Adam ? "adam" : "sgd"; }

OptimizerKind optimizer_from_string(const std::string& s)
{
    if (s == "adam")
        return OptimizerKind::Adam;
    if (s == "sgd")
        return OptimizerKind::Sgd;
    throw Error(ErrorCode::InvalidArgument, "unknown optimizer '" + s + "'");
}

double lr_at(const std::vector<LrStep>& schedule, int batch)
{
    if (schedule.empty())
        throw Error(ErrorCode::InvalidArgument, "empty learning-rate schedule");
    double lr = schedule.front().lr;
    for (const auto& s : schedule)
        if (s.batch <= batch)
            lr = s.lr;
    return lr;
}

void Adam::step(const std::vector<nn::Param<float>*>& params, double lr)
{
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (m_.empty()) {
        for (auto* p : params) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1, double(t_));
    const double c2 = 1.0 - std::pow(b2, double(t_));
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k];
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = p.grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            p.value[i] -= float(lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps));
        }
    }
}

void Sgd::step(const std::vector<nn::Param<float>*>& params, double lr)
{
    if (velocity_.empty())
        for (auto* p : params)
            velocity_.emplace_back(p->size(), 0.0);
    for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k];
        auto& vel = velocity_[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            vel[i] = momentum_ * vel[i] + double(p.grad[i]);
            p.value[i] -= float(lr * vel[i]);
        }
    }
}

// ---- Config -------------------------------------------------------------------------

void TrainConfig::validate() const
{
    if (batches_total < 1 || batch_size < 1)
        throw Error(ErrorCode::InvalidArgument, "batches_total and batch_size must be positive");
    if (!(cls_loss_weight >= 0.0))
        throw Error(ErrorCode::InvalidArgument, "cls_loss_weight must be non-negative");
    if (lr_schedule.empty())
        throw Error(ErrorCode::InvalidArgument, "lr_schedule must not be empty");
    for (std::size_t i = 0; i < lr_schedule.size(); ++i) {
        if (!(lr_schedule[i].lr > 0.0))
            throw Error(ErrorCode::InvalidArgument, "learning rates must be positive");
        if (i > 0 && lr_schedule[i].batch <= lr_schedule[i - 1].batch)
            throw Error(ErrorCode::InvalidArgument, "lr_schedule batch indices must increase");
    }
    if (val_every < 1)
        throw Error(ErrorCode::InvalidArgument, "val_every must be positive");
}

TrainConfig preset(const std::string& name)
{
    TrainConfig c;
    if (name == "lung_unet2d") {
        c.batches_total = 16000;
        c.batch_size = 30;
        c.lr_schedule = {{0, 1e-3}, {8000, 1e-4}};
        c.balance_sampling = false;
        c.val_every = 500;
    } else if (name == "unet2d" || name == "unet2d_plus") {
        c.batches_total = 15000;
        c.batch_size = 5;
        c.lr_schedule = {{0, 3e-4}};
        c.balance_sampling = name == "unet2d_plus";
        c.balance_mode = BalanceMode::Label;
        c.val_every = 500;
    } else if (name == "unet3d") {
        c.batches_total = 10000;
        c.batch_size = 16;
        c.optimizer = OptimizerKind::Sgd;
        c.lr_schedule = {{0, 1e-2}};
        c.balance_sampling = false;
        c.val_every = 500;
    } else if (name == "multitask" || name == "resnet_cls") {
        c.batches_total = 30000;
        c.batch_size = 5;
        c.lr_schedule = {{0, 3e-4}, {24000, 1e-4}};
        c.balance_sampling = true;
        c.balance_mode = name == "multitask" ? BalanceMode::Supervision : BalanceMode::Label;
        c.val_every = 500;
    } else if (name == "desk_lungs") {
        c.batches_total = 500;
        c.batch_size = 2;
        c.lr_schedule = {{0, 3e-3}, {100, 1e-3}};
        c.balance_sampling = false;
        c.val_every = 50;
    } else if (name == "desk_multitask") {
        c.batches_total = 600;
        c.batch_size = 4;
        c.lr_schedule = {{0, 3e-3}, {400, 1e-3}};
        c.balance_sampling = true;
        c.balance_mode = BalanceMode::Label;
        c.val_every = 50;
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown training preset '" + name + "'");
    }
    return c;
}

std::vector<std::string> preset_names()
{
    return {"lung_unet2d", "unet2d", "unet2d_plus", "unet3d", "multitask", "resnet_cls", "desk_lungs",
            "desk_multitask"};
}

// ---- Trainer --------------------------------------------------------------------------

namespace {

struct Forwarded {
    std::vector<double> seg_prob;
    double cls_prob = 0.5;
};

Forwarded run_forward(nn::Network<float>& model, const Sample& s, bool train)
{
    const auto out = model.forward(s.image.shape(), std::span<const float>(s.image.data()), nullptr, train);
    Forwarded f;
    f.seg_prob.resize(out.seg_logits.size());
    for (std::size_t i = 0; i < out.seg_logits.size(); ++i)
        f.seg_prob[i] = 1.0 / (1.0 + std::exp(-double(out.seg_logits[i])));
    if (out.cls_logit)
        f.cls_prob = 1.0 / (1.0 + std::exp(-double(*out.cls_logit)));
    return f;
}

// What the model can learn from a sample.
LossSample view(const nn::NetworkSpec& spec, const Sample& s, const Forwarded& f)
{
    LossSample l;
    l.seg_prob = f.seg_prob;
    if (spec.has_segmentation() && s.mask)
        l.seg_target = s.mask->data();
    l.cls_prob = f.cls_prob;
    if (spec.has_classification())
        l.cls_target = s.label;
    return l;
}

bool usable(const nn::NetworkSpec& spec, const Sample& s)
{
    return (spec.has_segmentation() && s.mask) || (spec.has_classification() && s.label);
}

// Classification-only networks have no second term to balance against.
double effective_lambda(const nn::NetworkSpec& spec, double lambda)
{
    return spec.has_segmentation() ? lambda : 1.0;
}

std::vector<std::vector<float>> snapshot(nn::Network<float>& model)
{
    std::vector<std::vector<float>> s;
    for (auto* p : model.parameters())
        s.push_back(p->value);
    return s;
}

void restore(nn::Network<float>& model, const std::vector<std::vector<float>>& s)
{
    auto params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i)
        params[i]->value = s[i];
}

} // namespace

Evaluation evaluate(nn::Network<float>& model, const std::vector<Sample>& data, double lambda)
{
    const auto& spec = model.spec();
    lambda = effective_lambda(spec, lambda);
    std::size_t n_seg = 0, n_cls = 0;
    for (const auto& s : data) {
        n_seg += spec.has_segmentation() && s.mask;
        n_cls += spec.has_classification() && s.label;
    }
    Evaluation ev;
    std::vector<double> gs;
    double gc = 0.0;
    for (const auto& s : data) {
        const Forwarded f = run_forward(model, s, false);
        ev.probabilities.push_back(spec.has_classification() ? f.cls_prob
                                                             : std::numeric_limits<double>::quiet_NaN());
        if (usable(spec, s))
            ev.loss += sample_loss(view(spec, s, f), n_seg, n_cls, lambda, gs, gc);
    }
    return ev;
}

TrainResult train(nn::Network<float>& model, const std::vector<Sample>& all, const std::vector<Sample>& val,
                  const TrainConfig& cfg, const ProgressFn& progress)
{
    cfg.validate();
    const auto& spec = model.spec();
    const double lambda = effective_lambda(spec, cfg.cls_loss_weight);

    std::vector<Sample> data;
    for (const auto& s : all) {
        s.validate();
        if (usable(spec, s))
            data.push_back(s);
    }
    if (data.empty())
        throw Error(ErrorCode::NoTargets, "no training sample carries a target this model can learn from");

    BatchSampler sampler(data, cfg.batch_size,
                         cfg.balance_sampling ? cfg.balance_mode : BalanceMode::None, cfg.seed);
    std::unique_ptr<Optimizer> opt;
    if (cfg.optimizer == OptimizerKind::Adam)
        opt = std::make_unique<Adam>();
    else
        opt = std::make_unique<Sgd>();
    const auto params = model.parameters();

    std::vector<int> val_labels;
    std::vector<std::size_t> val_labeled;
    for (std::size_t i = 0; i < val.size(); ++i)
        if (val[i].label) {
            val_labels.push_back(*val[i].label);
            val_labeled.push_back(i);
        }

    TrainResult result;
    std::vector<std::vector<float>> best;
    auto validate_now = [&](int batch) {
        ValidationLog v;
        v.batch = batch;
        const Evaluation ev = evaluate(model, val, cfg.cls_loss_weight);
        v.loss = ev.loss;
        if (spec.has_classification()) {
            std::vector<double> scores;
            for (std::size_t i : val_labeled)
                scores.push_back(ev.probabilities[i]);
            try {
                v.auc = metrics::roc_auc(scores, val_labels);
            } catch (const Error& e) {
                if (e.code() != ErrorCode::DegenerateSample)
                    throw;
            }
        }
        bool better = result.best_batch < 0;
        if (!better) {
            if (v.auc && result.best_auc && *v.auc != *result.best_auc)
                better = *v.auc > *result.best_auc;
            else if (v.auc && !result.best_auc)
                better = true;
            else if (!v.auc && result.best_auc)
                better = false;
            else
                better = v.loss < result.best_val_loss;
        }
        if (better) {
            result.best_batch = batch;
            result.best_auc = v.auc;
            result.best_val_loss = v.loss;
            best = snapshot(model);
        }
        result.validations.push_back(v);
        return &result.validations.back();
    };

    std::vector<double> grad_seg;
    std::vector<float> grad_seg_f;
    for (int b = 0; b < cfg.batches_total; ++b) {
        const auto batch = sampler.next();
        std::size_t n_seg = 0, n_cls = 0;
        for (std::size_t i : batch) {
            n_seg += spec.has_segmentation() && data[i].mask;
            n_cls += spec.has_classification() && data[i].label;
        }
        model.zero_grad();
        BatchLog log;
        log.batch = b;
        log.lr = lr_at(cfg.lr_schedule, b);
        for (std::size_t i : batch) {
            const Forwarded f = run_forward(model, data[i], true);
            double grad_cls = 0.0, seg = 0.0, cls = 0.0;
            log.loss += sample_loss(view(spec, data[i], f), n_seg, n_cls, lambda, grad_seg, grad_cls, &seg, &cls);
            log.seg += seg;
            log.cls += cls;
            grad_seg_f.assign(grad_seg.begin(), grad_seg.end());
            model.backward(grad_seg_f, float(grad_cls));
        }
        if (!std::isfinite(log.loss))
            throw Error(ErrorCode::Divergence, "loss became non-finite at batch " + std::to_string(b) +
                                                   " (seg " + std::to_string(log.seg) + ", cls " +
                                                   std::to_string(log.cls) + ", lr " + std::to_string(log.lr) + ")");
        opt->step(params, log.lr);
        result.batches.push_back(log);

        const ValidationLog* vlog = nullptr;
        const bool last = b + 1 == cfg.batches_total;
        if (!val.empty() && ((b + 1) % cfg.val_every == 0 || last))
            vlog = validate_now(b + 1);
        if (progress)
            progress(log, vlog);
    }
    if (!best.empty())
        restore(model, best);
    return result;
}

} // namespace triage::train
