#pragma once

#include "triage/nn/tensor.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace triage::nn {

template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;

    Param() = default;
    Param(std::string n, std::vector<int> s, T fill = T(0));
    std::size_t size() const { return value.size(); }
};

using Rng = std::mt19937_64;

// Every layer caches what its backward pass needs when forward() is called
// with train = true. A layer instance is used at most once per forward pass.

template <typename T>
class Conv {
public:
    Conv() = default;
    Conv(const std::string& name, int in_channels, int out_channels, Kernel3 k);

    void init(Rng& rng);
    Tensor<T> forward(const Tensor<T>& x, bool train);
    Tensor<T> backward(const Tensor<T>& grad_y, bool need_grad_x);
    void collect(std::vector<Param<T>*>& out) { out.push_back(&weight); out.push_back(&bias); }

    Param<T> weight, bias;

private:
    int in_ = 0, out_ = 0;
    Kernel3 k_{};
    Tensor<T> x_;
};

// Per-sample group normalization over (channels in group) x spatial.
template <typename T>
class GroupNorm {
public:
    GroupNorm() = default;
    GroupNorm(const std::string& name, int channels, int groups);

    Tensor<T> forward(const Tensor<T>& x, bool train);
    Tensor<T> backward(const Tensor<T>& grad_y);
    void collect(std::vector<Param<T>*>& out) { out.push_back(&gamma); out.push_back(&beta); }

    Param<T> gamma, beta;

private:
    int channels_ = 0, groups_ = 1;
    Tensor<T> xhat_;
    std::vector<T> inv_std_;
};

template <typename T>
class Relu {
public:
    Tensor<T> forward(const Tensor<T>& x, bool train);
    Tensor<T> backward(const Tensor<T>& grad_y) const;

private:
    Tensor<T> y_;
};

// Max pooling by integer factors per spatial axis; dims must be divisible.
template <typename T>
class MaxPool {
public:
    MaxPool() = default;
    explicit MaxPool(Kernel3 factor) : f_(factor) {}

    Tensor<T> forward(const Tensor<T>& x, bool train);
    Tensor<T> backward(const Tensor<T>& grad_y) const;

private:
    Kernel3 f_{1, 2, 2};
    std::array<int, 5> in_dims_{};
    std::vector<std::size_t> argmax_;
};

// Nearest-neighbour upsampling by integer factors.
template <typename T>
class Upsample {
public:
    Upsample() = default;
    explicit Upsample(Kernel3 factor) : f_(factor) {}

    Tensor<T> forward(const Tensor<T>& x) const;
    Tensor<T> backward(const Tensor<T>& grad_y) const;

private:
    Kernel3 f_{1, 2, 2};
};

// y[n] = W x[n] + b over the flattened (C, D, H, W) features of each sample.
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(const std::string& name, int in_features, int out_features);

    void init(Rng& rng);
    Tensor<T> forward(const Tensor<T>& x, bool train);
    Tensor<T> backward(const Tensor<T>& grad_y, bool need_grad_x);
    void collect(std::vector<Param<T>*>& out) { out.push_back(&weight); out.push_back(&bias); }

    Param<T> weight, bias;

private:
    int in_ = 0, out_ = 0;
    Tensor<T> x_;
};

enum class BlockType { Plain, Residual };

// Two k-convolutions, each followed by group norm; ReLU after the first and
// after the (shortcut-added, for residual) second. The shortcut is identity
// or a 1x1 projection when channel counts differ.
template <typename T>
class Block {
public:
    Block() = default;
    Block(const std::string& name, BlockType type, int in_channels, int out_channels, Kernel3 k, int norm_groups);

    void init(Rng& rng);
    Tensor<T> forward(const Tensor<T>& x, bool train);
    Tensor<T> backward(const Tensor<T>& grad_y, bool need_grad_x);
    void collect(std::vector<Param<T>*>& out);

    int out_channels() const { return out_; }

private:
    BlockType type_ = BlockType::Residual;
    int in_ = 0, out_ = 0;
    bool project_ = false;
    Conv<T> conv1_, conv2_, proj_;
    GroupNorm<T> norm1_, norm2_;
    Relu<T> relu1_, relu2_;
};

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
void split_channels(const Tensor<T>& g, int first_channels, Tensor<T>& ga, Tensor<T>& gb);
template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& g);

} // namespace triage::nn
