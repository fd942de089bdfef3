#pragma once

#include "triage/nn/network.hpp"
#include "triage/volume.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace triage::train {

// One training study. image is the network input (resampled, normalized,
// cropped); mask is the segmentation target aligned with it (lesions, or the
// lungs for a lung network).
struct Sample {
    std::string id;
    Volume image;
    std::optional<Mask> mask;
    std::optional<int> label;
    std::string source;

    void validate() const; // InvalidArgument unless mask or label present and aligned
};

// ---- Loss ---------------------------------------------------------------------

inline constexpr double kBceEpsilon = 1e-7;

// Probabilities, not logits. An empty seg_target means "no mask".
struct LossSample {
    std::span<const double> seg_prob;
    std::span<const std::uint8_t> seg_target;
    double cls_prob = 0.5;
    std::optional<int> cls_target;
};

struct LossResult {
    double total = 0.0;
    double seg = 0.0; // mean over masked samples of the per-sample mean voxel BCE
    double cls = 0.0; // mean BCE over labeled samples, before the weight
    // d total / d logit. Clamped probabilities contribute zero.
    std::vector<std::vector<double>> grad_seg_logits;
    std::vector<double> grad_cls_logit;
};

// total = seg + lambda * cls; missing terms contribute 0. Throws NoTargets if
// any sample has neither target and InvalidArgument for lambda < 0.
LossResult multitask_loss(const std::vector<LossSample>& batch, double lambda);

// Contribution of one sample given the batch's masked / labeled counts, with
// gradients written into grad_seg (resized; left empty without a mask).
double sample_loss(const LossSample& s, std::size_t n_seg, std::size_t n_cls, double lambda,
                   std::vector<double>& grad_seg, double& grad_cls, double* seg_part = nullptr,
                   double* cls_part = nullptr);

double bce(double p, int y);

// ---- Sampling -----------------------------------------------------------------

enum class BalanceMode {
    None,
    Label,       // positives vs negatives
    Supervision, // samples with a mask vs label-only samples
};

const char* to_string(BalanceMode m);
BalanceMode balance_mode_from_string(const std::string& s);

// Deterministic batch stream. With two non-empty strata every batch holds
// floor(b/2) of one and ceil(b/2) of the other (the larger half alternates);
// members are drawn uniformly with replacement. With a single stratum (or
// mode None) batches come from reshuffled passes over the data.
class BatchSampler {
public:
    BatchSampler(const std::vector<Sample>& data, int batch_size, BalanceMode mode, std::uint64_t seed);

    std::vector<std::size_t> next();
    bool balanced() const { return balanced_; }
    // Stratum of each sample (0 or 1), or -1 when outside both.
    int stratum(std::size_t i) const { return stratum_[i]; }

private:
    int batch_size_;
    bool balanced_ = false;
    std::vector<int> stratum_;
    std::vector<std::size_t> members_[2];
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::uint64_t batches_ = 0;
    std::mt19937_64 rng_;
};

std::vector<std::vector<std::size_t>> balanced_batches(const std::vector<Sample>& data, int batch_size,
                                                       BalanceMode mode, int count, std::uint64_t seed);

// ---- Optimizers and schedules ------------------------------------------------------

enum class OptimizerKind { Adam, Sgd };
const char* to_string(OptimizerKind k);
OptimizerKind optimizer_from_string(const std::string& s);

struct LrStep {
    int batch = 0;
    double lr = 1e-3;
};

// Learning rate in effect at a batch index: the last step at or before it.
double lr_at(const std::vector<LrStep>& schedule, int batch);

class Optimizer {
public:
    virtual ~Optimizer() = default;
    virtual void step(const std::vector<nn::Param<float>*>& params, double lr) = 0;
};

// Default Adam hyperparameters (0.9, 0.999, 1e-8).
class Adam : public Optimizer {
public:
    void step(const std::vector<nn::Param<float>*>& params, double lr) override;

private:
    std::vector<std::vector<double>> m_, v_;
    long long t_ = 0;
};

class Sgd : public Optimizer {
public:
    explicit Sgd(double momentum = 0.0) : momentum_(momentum) {}
    void step(const std::vector<nn::Param<float>*>& params, double lr) override;

private:
    double momentum_;
    std::vector<std::vector<double>> velocity_;
};

// ---- Trainer --------------------------------------------------------------------

struct TrainConfig {
    int batches_total = 400;
    int batch_size = 5;
    OptimizerKind optimizer = OptimizerKind::Adam;
    std::vector<LrStep> lr_schedule{{0, 3e-4}};
    double cls_loss_weight = 0.1;
    bool balance_sampling = true;
    BalanceMode balance_mode = BalanceMode::Supervision;
    std::uint64_t seed = 0;
    int val_every = 50;

    void validate() const; // InvalidArgument
};

// Named schedules. Full-scale: "lung_unet2d", "unet2d", "unet2d_plus",
// "unet3d", "multitask", "resnet_cls". Desk-scale: "desk_lungs", "desk_multitask".
TrainConfig preset(const std::string& name);
std::vector<std::string> preset_names();

struct BatchLog {
    int batch = 0;
    double loss = 0.0, seg = 0.0, cls = 0.0, lr = 0.0;
};

struct ValidationLog {
    int batch = 0;
    double loss = 0.0;
    std::optional<double> auc; // absent when the validation labels are one-class
};

struct TrainResult {
    std::vector<BatchLog> batches;
    std::vector<ValidationLog> validations;
    int best_batch = -1; // -1: no validation set, final weights kept
    std::optional<double> best_auc;
    double best_val_loss = 0.0;
};

using ProgressFn = std::function<void(const BatchLog&, const ValidationLog*)>;

// Trains in place. On return the model holds the best-validation checkpoint
// (highest ROC-AUC, ties and AUC-less runs by lowest validation loss). Throws
// Divergence on a non-finite loss and NoTargets if no sample fits the model.
TrainResult train(nn::Network<float>& model, const std::vector<Sample>& data, const std::vector<Sample>& val,
                  const TrainConfig& cfg, const ProgressFn& progress = {});

// Loss and study-level probabilities of a model over a set, without updates.
struct Evaluation {
    double loss = 0.0;
    std::vector<double> probabilities; // per sample; NaN without a classification head
};
Evaluation evaluate(nn::Network<float>& model, const std::vector<Sample>& data, double lambda);

} // namespace triage::train
