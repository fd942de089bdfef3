#include "triage/nn/kernels.hpp"

#include "triage/error.hpp"

namespace triage::nn::reference {

template <typename T>
void conv_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int out_channels,
                  Kernel3 k, Tensor<T>& y)
{
    const int N = x.n(), Ci = x.c(), D = x.d(), H = x.h(), W = x.w();
    if (weight.size() != std::size_t(out_channels) * Ci * k.volume() || bias.size() != std::size_t(out_channels))
        throw Error(ErrorCode::ShapeMismatch, "convolution parameter size mismatch");
    const int pd = k.d / 2, ph = k.h / 2, pw = k.w / 2;
    y = Tensor<T>(N, out_channels, D, H, W);
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < out_channels; ++co)
            for (int z = 0; z < D; ++z)
                for (int r = 0; r < H; ++r)
                    for (int c = 0; c < W; ++c) {
                        T acc = bias[co];
                        for (int ci = 0; ci < Ci; ++ci)
                            for (int kz = 0; kz < k.d; ++kz)
                                for (int ky = 0; ky < k.h; ++ky)
                                    for (int kx = 0; kx < k.w; ++kx) {
                                        const int iz = z + kz - pd, iy = r + ky - ph, ix = c + kx - pw;
                                        if (iz < 0 || iz >= D || iy < 0 || iy >= H || ix < 0 || ix >= W)
                                            continue;
                                        const std::size_t wi =
                                            ((std::size_t(co * Ci + ci) * k.d + kz) * k.h + ky) * k.w + kx;
                                        acc += weight[wi] * x.at(n, ci, iz, iy, ix);
                                    }
                        y.at(n, co, z, r, c) = acc;
                    }
}

template <typename T>
void conv_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& grad_y, Kernel3 k,
                   Tensor<T>* grad_x, std::span<T> grad_w, std::span<T> grad_b)
{
    const int N = x.n(), Ci = x.c(), D = x.d(), H = x.h(), W = x.w();
    const int Co = grad_y.c();
    const int pd = k.d / 2, ph = k.h / 2, pw = k.w / 2;
    if (grad_x)
        *grad_x = Tensor<T>(N, Ci, D, H, W);
    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co)
            for (int z = 0; z < D; ++z)
                for (int r = 0; r < H; ++r)
                    for (int c = 0; c < W; ++c) {
                        const T g = grad_y.at(n, co, z, r, c);
                        grad_b[co] += g;
                        for (int ci = 0; ci < Ci; ++ci)
                            for (int kz = 0; kz < k.d; ++kz)
                                for (int ky = 0; ky < k.h; ++ky)
                                    for (int kx = 0; kx < k.w; ++kx) {
                                        const int iz = z + kz - pd, iy = r + ky - ph, ix = c + kx - pw;
                                        if (iz < 0 || iz >= D || iy < 0 || iy >= H || ix < 0 || ix >= W)
                                            continue;
                                        const std::size_t wi =
                                            ((std::size_t(co * Ci + ci) * k.d + kz) * k.h + ky) * k.w + kx;
                                        grad_w[wi] += g * x.at(n, ci, iz, iy, ix);
                                        if (grad_x)
                                            grad_x->at(n, ci, iz, iy, ix) += g * weight[wi];
                                    }
                    }
}

template <typename T>
void gemm_nn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc)
{
    for (int i = 0; i < M; ++i)
        for (int j = 0; j < N; ++j) {
            T acc = 0;
            for (int p = 0; p < K; ++p)
                acc += A[std::size_t(i) * lda + p] * B[std::size_t(p) * ldb + j];
            C[std::size_t(i) * ldc + j] += acc;
        }
}

template void conv_forward<float>(const Tensor<float>&, std::span<const float>, std::span<const float>, int,
                                  Kernel3, Tensor<float>&);
template void conv_forward<double>(const Tensor<double>&, std::span<const double>, std::span<const double>, int,
                                   Kernel3, Tensor<double>&);
template void conv_backward<float>(const Tensor<float>&, std::span<const float>, const Tensor<float>&, Kernel3,
                                   Tensor<float>*, std::span<float>, std::span<float>);
template void conv_backward<double>(const Tensor<double>&, std::span<const double>, const Tensor<double>&, Kernel3,
                                    Tensor<double>*, std::span<double>, std::span<double>);
template void gemm_nn<float>(int, int, int, const float*, int, const float*, int, float*, int);
template void gemm_nn<double>(int, int, int, const double*, int, const double*, int, double*, int);

} // namespace triage::nn::reference
