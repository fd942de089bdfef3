#pragma once

#include "triage/nn/layers.hpp"
#include "triage/nn/pyramid.hpp"
#include "triage/volume.hpp"

#include <array>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace triage::nn {

enum class NetKind { Unet2d, Unet3d, LungUnet2d, ResnetCls, Multitask };
enum class Attach { Latent, Spatial };

const char* to_string(NetKind kind);
NetKind net_kind_from_string(const std::string& s);

struct NetworkSpec {
    NetKind kind = NetKind::Multitask;
    int levels = 7;
    int base_channels = 16;
    int max_channels = 512;
    BlockType block = BlockType::Residual;
    // MULTITASK only. Spatial level l in 1..levels; l = levels is the bottleneck.
    Attach attach = Attach::Spatial;
    int attach_level = 1;
    std::vector<int> pyramid_levels{1, 2, 4};
    int fc_hidden = 128;
    int norm_groups = 4;
    // UNET3D inference tile extent per axis (z, y, x).
    std::array<int, 3> patch_size{160, 160, 160};

    // Throws InvalidSpec.
    void validate() const;

    bool is_3d() const { return kind == NetKind::Unet3d; }
    bool has_segmentation() const { return kind != NetKind::ResnetCls; }
    bool has_classification() const { return kind == NetKind::ResnetCls || kind == NetKind::Multitask; }
    int channels(int level) const;
    // Spatial dims must be multiples of this in every downsampled axis.
    int divisor() const { return 1 << (levels - 1); }

    friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

NetworkSpec default_spec(NetKind kind);

template <typename T>
struct NetOutput {
    Shape3 shape;                    // input shape (S, H, W)
    std::vector<T> seg_logits;       // same layout as the input; empty without a segmentation head
    std::optional<T> cls_logit;      // study-level logit for classification kinds
    std::array<int, 5> shared_dims{}; // dims of the feature map fed to the classification head
};

// A network is built from a NetworkSpec and owns its parameters. forward()
// with train = true caches activations for a single following backward();
// with train = false it only reads the parameters and may run concurrently.
template <typename T>
class Network {
public:
    explicit Network(NetworkSpec spec, std::uint64_t seed = 0);
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;
    Network(Network&&) noexcept;
    Network& operator=(Network&&) noexcept;
    ~Network();

    // image is (S, H, W) row-major. 2D kinds treat slices as independent
    // samples; the classification head pools over the slices whose
    // slice_valid entry is true (all when null).
    NetOutput<T> forward(const Shape3& shape, std::span<const T> image, const std::vector<bool>* slice_valid = nullptr,
                         bool train = false);

    // Gradients w.r.t. the outputs of the last training forward. grad_seg may
    // be empty (no segmentation loss); grad_cls is ignored without a head.
    void backward(std::span<const T> grad_seg, T grad_cls);

    std::vector<Param<T>*> parameters();
    // Parameters of the two fully connected classification layers.
    std::vector<Param<T>*> classifier_parameters();
    void zero_grad();
    std::size_t parameter_count();

    const NetworkSpec& spec() const { return spec_; }

private:
    struct Impl;
    NetworkSpec spec_;
    std::unique_ptr<Impl> impl_;
};

template <typename Dst, typename Src>
void copy_parameters(Network<Src>& from, Network<Dst>& to);

float sigmoid(float z);
double sigmoid(double z);

// Slice-wise 2D U-Net (UNET2D / LUNG_UNET2D / MULTITASK): per-voxel probabilities.
std::vector<float> forward_unet2d(Network<float>& model, const Volume& v);

// 3D U-Net over non-overlapping tiles of spec().patch_size (clamped to the
// volume extent). Edge tiles are padded by reflecting their own content and
// the predictions cropped back, so every output voxel depends only on the
// tile that contains it.
std::vector<float> forward_unet3d(Network<float>& model, const Volume& v);

struct MultitaskPrediction {
    std::vector<float> seg_probabilities;
    float covid_probability = 0.0f;
};
MultitaskPrediction forward_multitask(Network<float>& model, const Volume& v,
                                      const std::vector<bool>* slice_valid = nullptr);

} // namespace triage::nn
