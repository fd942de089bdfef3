#pragma once

#include "triage/nn/tensor.hpp"

#include <vector>

namespace triage::nn {

struct SliceBin {
    int begin = 0, end = 0; // half-open over the (valid) slice sequence
};

// Bin b of k over S slices covers [ceil(b*S/k), ceil((b+1)*S/k)). When S < k
// that range can be empty; such a bin takes the single slice floor(b*S/k).
std::vector<SliceBin> pyramid_bins(int slices, int k);

// Multi-granularity max pooling along the slice axis. Each slice is first
// reduced to a channel vector by a global spatial max; then for each level k
// the slices are split into k contiguous bins and max-pooled per bin. Output
// is (1, C * sum(levels), 1, 1, 1) laid out level, then bin, then channel.
template <typename T>
class PyramidPool {
public:
    PyramidPool() = default;
    explicit PyramidPool(std::vector<int> levels);

    // features is (S, C, D, H, W) with one sample per slice. Slices with
    // valid[s] == false are dropped before binning. Throws EmptyInput when no
    // slice remains.
    Tensor<T> forward(const Tensor<T>& features, const std::vector<bool>* valid, bool train);
    Tensor<T> backward(const Tensor<T>& grad_y) const;

    int output_length(int channels) const;
    const std::vector<int>& levels() const { return levels_; }

private:
    std::vector<int> levels_{1, 2, 4};
    std::array<int, 5> in_dims_{};
    std::vector<std::size_t> argmax_;
};

} // namespace triage::nn
