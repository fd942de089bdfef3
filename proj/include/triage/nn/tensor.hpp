#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace triage::nn {

// Dense (N, C, D, H, W) tensor. 2D activations use D = 1; vectors use D = H = W = 1.
template <typename T>
struct Tensor {
    std::array<int, 5> dims{0, 0, 0, 0, 0};
    std::vector<T> data;

    Tensor() = default;
    Tensor(int n, int c, int d, int h, int w, T fill = T(0))
        : dims{n, c, d, h, w}, data(std::size_t(n) * c * d * h * w, fill) {}

    int n() const { return dims[0]; }
    int c() const { return dims[1]; }
    int d() const { return dims[2]; }
    int h() const { return dims[3]; }
    int w() const { return dims[4]; }
    std::size_t spatial() const { return std::size_t(dims[2]) * dims[3] * dims[4]; }
    std::size_t sample_size() const { return std::size_t(dims[1]) * spatial(); }
    std::size_t size() const { return data.size(); }

    std::size_t index(int in, int ic, int id, int ih, int iw) const
    {
        return (((std::size_t(in) * dims[1] + ic) * dims[2] + id) * dims[3] + ih) * dims[4] + iw;
    }
    T& at(int in, int ic, int id, int ih, int iw) { return data[index(in, ic, id, ih, iw)]; }
    const T& at(int in, int ic, int id, int ih, int iw) const { return data[index(in, ic, id, ih, iw)]; }

    bool same_shape(const Tensor& o) const { return dims == o.dims; }
    void zero() { std::fill(data.begin(), data.end(), T(0)); }
};

struct Kernel3 {
    int d = 1, h = 3, w = 3;
    int volume() const { return d * h * w; }
    friend bool operator==(const Kernel3&, const Kernel3&) = default;
};

} // namespace triage::nn
