#include "triage/nn/pyramid.hpp"

#include "triage/error.hpp"

#include <numeric>

namespace triage::nn {

std::vector<SliceBin> pyramid_bins(int slices, int k)
{
    if (slices < 1 || k < 1)
        throw Error(ErrorCode::EmptyInput, "pyramid binning needs at least one slice and one bin");
    auto ceil_div = [](long a, long b) { return int((a + b - 1) / b); };
    std::vector<SliceBin> bins(k);
    for (int b = 0; b < k; ++b) {
        int begin = ceil_div(long(b) * slices, k);
        int end = ceil_div(long(b + 1) * slices, k);
        if (begin >= end) {
            begin = int(long(b) * slices / k);
            end = begin + 1;
        }
        bins[b] = {begin, end};
    }
    return bins;
}

template <typename T>
PyramidPool<T>::PyramidPool(std::vector<int> levels) : levels_(std::move(levels))
{
    if (levels_.empty())
        throw Error(ErrorCode::InvalidSpec, "pyramid pooling needs at least one level");
    for (int k : levels_)
        if (k < 1)
            throw Error(ErrorCode::InvalidSpec, "pyramid levels must be positive");
}

template <typename T>
int PyramidPool<T>::output_length(int channels) const
{
    return channels * std::accumulate(levels_.begin(), levels_.end(), 0);
}

template <typename T>
Tensor<T> PyramidPool<T>::forward(const Tensor<T>& features, const std::vector<bool>* valid, bool train)
{
    const int S = features.n(), C = features.c();
    const std::size_t spatial = features.spatial();
    if (valid && int(valid->size()) != S)
        throw Error(ErrorCode::ShapeMismatch, "slice validity mask length differs from slice count");
    std::vector<int> kept;
    for (int s = 0; s < S; ++s)
        if (!valid || (*valid)[s])
            kept.push_back(s);
    if (kept.empty() || spatial == 0)
        throw Error(ErrorCode::EmptyInput, "pyramid pooling over zero slices");

    // Global spatial max per (kept slice, channel).
    const int K = int(kept.size());
    std::vector<std::size_t> slice_arg(std::size_t(K) * C);
    for (int j = 0; j < K; ++j)
        for (int c = 0; c < C; ++c) {
            const std::size_t base = features.index(kept[j], c, 0, 0, 0);
            std::size_t best = base;
            for (std::size_t i = 1; i < spatial; ++i)
                if (features.data[base + i] > features.data[best])
                    best = base + i;
            slice_arg[std::size_t(j) * C + c] = best;
        }

    Tensor<T> y(1, output_length(C), 1, 1, 1);
    std::vector<std::size_t> arg(y.size());
    std::size_t o = 0;
    for (int k : levels_)
        for (const SliceBin& bin : pyramid_bins(K, k))
            for (int c = 0; c < C; ++c, ++o) {
                std::size_t best = slice_arg[std::size_t(bin.begin) * C + c];
                for (int j = bin.begin + 1; j < bin.end; ++j) {
                    const std::size_t cand = slice_arg[std::size_t(j) * C + c];
                    if (features.data[cand] > features.data[best])
                        best = cand;
                }
                y.data[o] = features.data[best];
                arg[o] = best;
            }
    if (train) {
        in_dims_ = features.dims;
        argmax_ = std::move(arg);
    }
    return y;
}

template <typename T>
Tensor<T> PyramidPool<T>::backward(const Tensor<T>& grad_y) const
{
    Tensor<T> gx(in_dims_[0], in_dims_[1], in_dims_[2], in_dims_[3], in_dims_[4]);
    for (std::size_t o = 0; o < grad_y.size(); ++o)
        gx.data[argmax_[o]] += grad_y.data[o];
    return gx;
}

template class PyramidPool<float>;
template class PyramidPool<double>;

} // namespace triage::nn
