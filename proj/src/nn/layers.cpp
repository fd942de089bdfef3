#include "triage/nn/layers.hpp"

#include "triage/error.hpp"
#include "triage/nn/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace triage::nn {

template <typename T>
Param<T>::Param(std::string n, std::vector<int> s, T fill) : name(std::move(n)), shape(std::move(s))
{
    const std::size_t count =
        std::accumulate(shape.begin(), shape.end(), std::size_t{1}, [](std::size_t a, int b) { return a * b; });
    value.assign(count, fill);
    grad.assign(count, T(0));
}

namespace {

template <typename T>
void he_normal(Param<T>& p, int fan_in, Rng& rng)
{
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / double(fan_in)));
    for (T& v : p.value)
        v = T(dist(rng));
}

} // namespace

// ---------------------------------------------------------------- Conv

template <typename T>
Conv<T>::Conv(const std::string& name, int in_channels, int out_channels, Kernel3 k)
    : weight(name + ".weight", {out_channels, in_channels, k.d, k.h, k.w}), bias(name + ".bias", {out_channels}),
      in_(in_channels), out_(out_channels), k_(k)
{
}

template <typename T>
void Conv<T>::init(Rng& rng)
{
    he_normal(weight, in_ * k_.volume(), rng);
    std::fill(bias.value.begin(), bias.value.end(), T(0));
}

template <typename T>
Tensor<T> Conv<T>::forward(const Tensor<T>& x, bool train)
{
    if (x.c() != in_)
        throw Error(ErrorCode::ShapeMismatch, weight.name + ": expected " + std::to_string(in_) + " channels");
    Tensor<T> y;
    conv_forward<T>(x, weight.value, bias.value, out_, k_, y);
    if (train)
        x_ = x;
    return y;
}

template <typename T>
Tensor<T> Conv<T>::backward(const Tensor<T>& grad_y, bool need_grad_x)
{
    Tensor<T> gx;
    conv_backward<T>(x_, weight.value, grad_y, k_, need_grad_x ? &gx : nullptr, weight.grad, bias.grad);
    return gx;
}

// ---------------------------------------------------------------- GroupNorm

namespace {
constexpr double kNormEps = 1e-5;
}

template <typename T>
GroupNorm<T>::GroupNorm(const std::string& name, int channels, int groups)
    : gamma(name + ".gamma", {channels}, T(1)), beta(name + ".beta", {channels}), channels_(channels),
      groups_(std::gcd(channels, std::max(groups, 1)))
{
}

template <typename T>
Tensor<T> GroupNorm<T>::forward(const Tensor<T>& x, bool train)
{
    if (x.c() != channels_)
        throw Error(ErrorCode::ShapeMismatch, gamma.name + ": channel mismatch");
    const int N = x.n(), G = groups_, cpg = channels_ / G;
    const std::size_t S = x.spatial();
    const std::size_t M = std::size_t(cpg) * S;
    Tensor<T> y(N, x.c(), x.d(), x.h(), x.w());
    Tensor<T> xhat(N, x.c(), x.d(), x.h(), x.w());
    std::vector<T> inv(std::size_t(N) * G);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
        for (int g = 0; g < G; ++g) {
            const std::size_t off = x.index(n, g * cpg, 0, 0, 0);
            const T* src = x.data.data() + off;
            double mean = 0;
            for (std::size_t i = 0; i < M; ++i)
                mean += src[i];
            mean /= double(M);
            double var = 0;
            for (std::size_t i = 0; i < M; ++i) {
                const double d = src[i] - mean;
                var += d * d;
            }
            var /= double(M);
            const T istd = T(1.0 / std::sqrt(var + kNormEps));
            inv[std::size_t(n) * G + g] = istd;
            for (int c = 0; c < cpg; ++c) {
                const int ch = g * cpg + c;
                const T gm = gamma.value[ch], bt = beta.value[ch];
                for (std::size_t s = 0; s < S; ++s) {
                    const std::size_t i = std::size_t(c) * S + s;
                    const T xh = T((src[i] - mean) * istd);
                    xhat.data[off + i] = xh;
                    y.data[off + i] = gm * xh + bt;
                }
            }
        }
    if (train) {
        xhat_ = std::move(xhat);
        inv_std_ = std::move(inv);
    }
    return y;
}

template <typename T>
Tensor<T> GroupNorm<T>::backward(const Tensor<T>& grad_y)
{
    const int N = grad_y.n(), G = groups_, cpg = channels_ / G;
    const std::size_t S = grad_y.spatial();
    const std::size_t M = std::size_t(cpg) * S;
    Tensor<T> gx(N, grad_y.c(), grad_y.d(), grad_y.h(), grad_y.w());
    for (int n = 0; n < N; ++n)
        for (int g = 0; g < G; ++g) {
            const std::size_t off = grad_y.index(n, g * cpg, 0, 0, 0);
            const T* gy = grad_y.data.data() + off;
            const T* xh = xhat_.data.data() + off;
            double sum_d = 0, sum_dx = 0;
            for (int c = 0; c < cpg; ++c) {
                const int ch = g * cpg + c;
                const T gm = gamma.value[ch];
                double dg = 0, db = 0;
                for (std::size_t s = 0; s < S; ++s) {
                    const std::size_t i = std::size_t(c) * S + s;
                    dg += double(gy[i]) * xh[i];
                    db += gy[i];
                    const double d = double(gy[i]) * gm;
                    sum_d += d;
                    sum_dx += d * xh[i];
                }
                gamma.grad[ch] += T(dg);
                beta.grad[ch] += T(db);
            }
            const double istd = inv_std_[std::size_t(n) * G + g];
            for (int c = 0; c < cpg; ++c) {
                const T gm = gamma.value[g * cpg + c];
                for (std::size_t s = 0; s < S; ++s) {
                    const std::size_t i = std::size_t(c) * S + s;
                    const double d = double(gy[i]) * gm;
                    gx.data[off + i] = T(istd / double(M) * (double(M) * d - sum_d - xh[i] * sum_dx));
                }
            }
        }
    return gx;
}

// ---------------------------------------------------------------- Relu

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x, bool train)
{
    Tensor<T> y = x;
    for (T& v : y.data)
        v = std::max(v, T(0));
    if (train)
        y_ = y;
    return y;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& grad_y) const
{
    Tensor<T> gx = grad_y;
    for (std::size_t i = 0; i < gx.data.size(); ++i)
        if (!(y_.data[i] > T(0)))
            gx.data[i] = T(0);
    return gx;
}

// ---------------------------------------------------------------- MaxPool

template <typename T>
Tensor<T> MaxPool<T>::forward(const Tensor<T>& x, bool train)
{
    if (x.d() % f_.d || x.h() % f_.h || x.w() % f_.w)
        throw Error(ErrorCode::ShapeMismatch, "pooling input not divisible by the pooling factor");
    const int N = x.n(), C = x.c(), D = x.d() / f_.d, H = x.h() / f_.h, W = x.w() / f_.w;
    Tensor<T> y(N, C, D, H, W);
    std::vector<std::size_t> arg(y.size());
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int z = 0; z < D; ++z)
                for (int r = 0; r < H; ++r)
                    for (int q = 0; q < W; ++q) {
                        std::size_t best = x.index(n, c, z * f_.d, r * f_.h, q * f_.w);
                        for (int a = 0; a < f_.d; ++a)
                            for (int b = 0; b < f_.h; ++b)
                                for (int e = 0; e < f_.w; ++e) {
                                    const std::size_t i = x.index(n, c, z * f_.d + a, r * f_.h + b, q * f_.w + e);
                                    if (x.data[i] > x.data[best])
                                        best = i;
                                }
                        const std::size_t o = y.index(n, c, z, r, q);
                        y.data[o] = x.data[best];
                        arg[o] = best;
                    }
    if (train) {
        in_dims_ = x.dims;
        argmax_ = std::move(arg);
    }
    return y;
}

template <typename T>
Tensor<T> MaxPool<T>::backward(const Tensor<T>& grad_y) const
{
    Tensor<T> gx(in_dims_[0], in_dims_[1], in_dims_[2], in_dims_[3], in_dims_[4]);
    for (std::size_t o = 0; o < grad_y.size(); ++o)
        gx.data[argmax_[o]] += grad_y.data[o];
    return gx;
}

// ---------------------------------------------------------------- Upsample

template <typename T>
Tensor<T> Upsample<T>::forward(const Tensor<T>& x) const
{
    Tensor<T> y(x.n(), x.c(), x.d() * f_.d, x.h() * f_.h, x.w() * f_.w);
#pragma omp parallel for collapse(2) schedule(static)
    for (int n = 0; n < y.n(); ++n)
        for (int c = 0; c < y.c(); ++c)
            for (int z = 0; z < y.d(); ++z)
                for (int r = 0; r < y.h(); ++r)
                    for (int q = 0; q < y.w(); ++q)
                        y.at(n, c, z, r, q) = x.at(n, c, z / f_.d, r / f_.h, q / f_.w);
    return y;
}

template <typename T>
Tensor<T> Upsample<T>::backward(const Tensor<T>& grad_y) const
{
    Tensor<T> gx(grad_y.n(), grad_y.c(), grad_y.d() / f_.d, grad_y.h() / f_.h, grad_y.w() / f_.w);
    for (int n = 0; n < grad_y.n(); ++n)
        for (int c = 0; c < grad_y.c(); ++c)
            for (int z = 0; z < grad_y.d(); ++z)
                for (int r = 0; r < grad_y.h(); ++r)
                    for (int q = 0; q < grad_y.w(); ++q)
                        gx.at(n, c, z / f_.d, r / f_.h, q / f_.w) += grad_y.at(n, c, z, r, q);
    return gx;
}

// ---------------------------------------------------------------- Linear

template <typename T>
Linear<T>::Linear(const std::string& name, int in_features, int out_features)
    : weight(name + ".weight", {out_features, in_features}), bias(name + ".bias", {out_features}),
      in_(in_features), out_(out_features)
{
}

template <typename T>
void Linear<T>::init(Rng& rng)
{
    he_normal(weight, in_, rng);
    std::fill(bias.value.begin(), bias.value.end(), T(0));
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, bool train)
{
    if (x.sample_size() != std::size_t(in_))
        throw Error(ErrorCode::ShapeMismatch, weight.name + ": expected " + std::to_string(in_) + " features");
    Tensor<T> y(x.n(), out_, 1, 1, 1);
    for (int n = 0; n < x.n(); ++n) {
        const T* xn = x.data.data() + std::size_t(n) * in_;
        for (int o = 0; o < out_; ++o) {
            const T* w = weight.value.data() + std::size_t(o) * in_;
            T acc = bias.value[o];
            for (int i = 0; i < in_; ++i)
                acc += w[i] * xn[i];
            y.data[std::size_t(n) * out_ + o] = acc;
        }
    }
    if (train)
        x_ = x;
    return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_y, bool need_grad_x)
{
    Tensor<T> gx;
    if (need_grad_x)
        gx = Tensor<T>(x_.n(), x_.c(), x_.d(), x_.h(), x_.w());
    for (int n = 0; n < grad_y.n(); ++n) {
        const T* xn = x_.data.data() + std::size_t(n) * in_;
        for (int o = 0; o < out_; ++o) {
            const T g = grad_y.data[std::size_t(n) * out_ + o];
            bias.grad[o] += g;
            T* gw = weight.grad.data() + std::size_t(o) * in_;
            const T* w = weight.value.data() + std::size_t(o) * in_;
            for (int i = 0; i < in_; ++i) {
                gw[i] += g * xn[i];
                if (need_grad_x)
                    gx.data[std::size_t(n) * in_ + i] += g * w[i];
            }
        }
    }
    return gx;
}

// ---------------------------------------------------------------- Block

template <typename T>
Block<T>::Block(const std::string& name, BlockType type, int in_channels, int out_channels, Kernel3 k,
                int norm_groups)
    : type_(type), in_(in_channels), out_(out_channels),
      project_(type == BlockType::Residual && in_channels != out_channels),
      conv1_(name + ".conv1", in_channels, out_channels, k), conv2_(name + ".conv2", out_channels, out_channels, k),
      norm1_(name + ".norm1", out_channels, norm_groups), norm2_(name + ".norm2", out_channels, norm_groups)
{
    if (project_)
        proj_ = Conv<T>(name + ".proj", in_channels, out_channels, Kernel3{1, 1, 1});
}

template <typename T>
void Block<T>::init(Rng& rng)
{
    conv1_.init(rng);
    conv2_.init(rng);
    if (project_)
        proj_.init(rng);
}

template <typename T>
Tensor<T> Block<T>::forward(const Tensor<T>& x, bool train)
{
    Tensor<T> h = relu1_.forward(norm1_.forward(conv1_.forward(x, train), train), train);
    h = norm2_.forward(conv2_.forward(h, train), train);
    if (type_ == BlockType::Residual)
        add_into(h, project_ ? proj_.forward(x, train) : x);
    return relu2_.forward(h, train);
}

template <typename T>
Tensor<T> Block<T>::backward(const Tensor<T>& grad_y, bool need_grad_x)
{
    const Tensor<T> g = relu2_.backward(grad_y);
    Tensor<T> gx = conv1_.backward(norm1_.backward(relu1_.backward(conv2_.backward(norm2_.backward(g), true))),
                                   need_grad_x);
    if (type_ == BlockType::Residual) {
        if (project_) {
            Tensor<T> gp = proj_.backward(g, need_grad_x);
            if (need_grad_x)
                add_into(gx, gp);
        } else if (need_grad_x) {
            add_into(gx, g);
        }
    }
    return gx;
}

template <typename T>
void Block<T>::collect(std::vector<Param<T>*>& out)
{
    conv1_.collect(out);
    norm1_.collect(out);
    conv2_.collect(out);
    norm2_.collect(out);
    if (project_)
        proj_.collect(out);
}

// ---------------------------------------------------------------- helpers

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b)
{
    if (a.n() != b.n() || a.d() != b.d() || a.h() != b.h() || a.w() != b.w())
        throw Error(ErrorCode::ShapeMismatch, "concat: spatial shapes differ");
    Tensor<T> y(a.n(), a.c() + b.c(), a.d(), a.h(), a.w());
    for (int n = 0; n < a.n(); ++n) {
        const auto a_begin = a.data.begin() + std::ptrdiff_t(a.index(n, 0, 0, 0, 0));
        const auto b_begin = b.data.begin() + std::ptrdiff_t(b.index(n, 0, 0, 0, 0));
        auto out = y.data.begin() + std::ptrdiff_t(y.index(n, 0, 0, 0, 0));
        out = std::copy(a_begin, a_begin + std::ptrdiff_t(a.sample_size()), out);
        std::copy(b_begin, b_begin + std::ptrdiff_t(b.sample_size()), out);
    }
    return y;
}

template <typename T>
void split_channels(const Tensor<T>& g, int first_channels, Tensor<T>& ga, Tensor<T>& gb)
{
    ga = Tensor<T>(g.n(), first_channels, g.d(), g.h(), g.w());
    gb = Tensor<T>(g.n(), g.c() - first_channels, g.d(), g.h(), g.w());
    for (int n = 0; n < g.n(); ++n) {
        const auto src = g.data.begin() + std::ptrdiff_t(g.index(n, 0, 0, 0, 0));
        std::copy(src, src + std::ptrdiff_t(ga.sample_size()), ga.data.begin() + std::ptrdiff_t(ga.index(n, 0, 0, 0, 0)));
        std::copy(src + std::ptrdiff_t(ga.sample_size()), src + std::ptrdiff_t(g.sample_size()),
                  gb.data.begin() + std::ptrdiff_t(gb.index(n, 0, 0, 0, 0)));
    }
}

template <typename T>
void add_into(Tensor<T>& acc, const Tensor<T>& g)
{
    if (acc.data.empty()) {
        acc = g;
        return;
    }
    if (!acc.same_shape(g))
        throw Error(ErrorCode::ShapeMismatch, "add_into: shapes differ");
    for (std::size_t i = 0; i < g.data.size(); ++i)
        acc.data[i] += g.data[i];
}

#define TRIAGE_INSTANTIATE_LAYERS(T)                                                    \
    template struct Param<T>;                                                           \
    template class Conv<T>;                                                             \
    template class GroupNorm<T>;                                                        \
    template class Relu<T>;                                                             \
    template class MaxPool<T>;                                                          \
    template class Upsample<T>;                                                         \
    template class Linear<T>;                                                           \
    template class Block<T>;                                                            \
    template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);          \
    template void split_channels<T>(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);    \
    template void add_into<T>(Tensor<T>&, const Tensor<T>&);

TRIAGE_INSTANTIATE_LAYERS(float)
TRIAGE_INSTANTIATE_LAYERS(double)

} // namespace triage::nn
