#include "triage/nn/kernels.hpp"

#include "triage/error.hpp"

#include <algorithm>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace triage::nn {

namespace {

constexpr int kBlockN = 256;
constexpr int kBlockK = 128;

int thread_count()
{
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

int thread_id()
{
#ifdef _OPENMP
    return omp_get_thread_num();
#else
    return 0;
#endif
}

void check_kernel(Kernel3 k)
{
    if (k.d % 2 == 0 || k.h % 2 == 0 || k.w % 2 == 0 || k.d < 1 || k.h < 1 || k.w < 1)
        throw Error(ErrorCode::InvalidArgument, "convolution kernels must have odd positive extents");
}

bool pointwise(Kernel3 k) { return k.d == 1 && k.h == 1 && k.w == 1; }

// Column matrix (Ci*kd*kh*kw) x (H*W) for output depth plane od of sample n.
template <typename T>
void im2col_plane(const Tensor<T>& x, int n, int od, Kernel3 k, T* col)
{
    const int C = x.c(), D = x.d(), H = x.h(), W = x.w();
    const int pd = k.d / 2, ph = k.h / 2, pw = k.w / 2;
    const std::size_t P = std::size_t(H) * W;
    for (int c = 0; c < C; ++c)
        for (int kz = 0; kz < k.d; ++kz) {
            const int iz = od + kz - pd;
            for (int ky = 0; ky < k.h; ++ky)
                for (int kx = 0; kx < k.w; ++kx) {
                    T* row = col + (std::size_t((c * k.d + kz) * k.h + ky) * k.w + kx) * P;
                    if (iz < 0 || iz >= D) {
                        std::fill(row, row + P, T(0));
                        continue;
                    }
                    const int x_lo = std::max(0, pw - kx), x_hi = std::min(W, W + pw - kx);
                    for (int oh = 0; oh < H; ++oh) {
                        T* out = row + std::size_t(oh) * W;
                        const int ih = oh + ky - ph;
                        if (ih < 0 || ih >= H || x_lo >= x_hi) {
                            std::fill(out, out + W, T(0));
                            continue;
                        }
                        const T* src = &x.data[x.index(n, c, iz, ih, 0)] + (kx - pw);
                        std::fill(out, out + x_lo, T(0));
                        std::copy(src + x_lo, src + x_hi, out + x_lo);
                        std::fill(out + x_hi, out + W, T(0));
                    }
                }
        }
}

template <typename T>
void col2im_plane(const T* col, int n, int od, Kernel3 k, Tensor<T>& gx)
{
    const int C = gx.c(), D = gx.d(), H = gx.h(), W = gx.w();
    const int pd = k.d / 2, ph = k.h / 2, pw = k.w / 2;
    const std::size_t P = std::size_t(H) * W;
    for (int c = 0; c < C; ++c)
        for (int kz = 0; kz < k.d; ++kz) {
            const int iz = od + kz - pd;
            if (iz < 0 || iz >= D)
                continue;
            for (int ky = 0; ky < k.h; ++ky)
                for (int kx = 0; kx < k.w; ++kx) {
                    const T* row = col + (std::size_t((c * k.d + kz) * k.h + ky) * k.w + kx) * P;
                    const int x_lo = std::max(0, pw - kx), x_hi = std::min(W, W + pw - kx);
                    for (int oh = 0; oh < H; ++oh) {
                        const int ih = oh + ky - ph;
                        if (ih < 0 || ih >= H)
                            continue;
                        T* dst = &gx.data[gx.index(n, c, iz, ih, 0)] + (kx - pw);
                        const T* src = row + std::size_t(oh) * W;
                        for (int ow = x_lo; ow < x_hi; ++ow)
                            dst[ow] += src[ow];
                    }
                }
        }
}

} // namespace

template <typename T>
void gemm_nn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc)
{
#pragma omp parallel for schedule(static) if (std::size_t(M) * N * K > 32768)
    for (int i = 0; i < M; ++i)
        for (int j0 = 0; j0 < N; j0 += kBlockN) {
            const int j1 = std::min(N, j0 + kBlockN);
            T* c = C + std::size_t(i) * ldc;
            for (int k0 = 0; k0 < K; k0 += kBlockK) {
                const int k1 = std::min(K, k0 + kBlockK);
                for (int k = k0; k < k1; ++k) {
                    const T a = A[std::size_t(i) * lda + k];
                    const T* b = B + std::size_t(k) * ldb;
#pragma omp simd
                    for (int j = j0; j < j1; ++j)
                        c[j] += a * b[j];
                }
            }
        }
}

template <typename T>
void gemm_tn(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc)
{
#pragma omp parallel for schedule(static) if (std::size_t(M) * N * K > 32768)
    for (int i = 0; i < M; ++i)
        for (int j0 = 0; j0 < N; j0 += kBlockN) {
            const int j1 = std::min(N, j0 + kBlockN);
            T* c = C + std::size_t(i) * ldc;
            for (int k = 0; k < K; ++k) {
                const T a = A[std::size_t(k) * lda + i];
                const T* b = B + std::size_t(k) * ldb;
#pragma omp simd
                for (int j = j0; j < j1; ++j)
                    c[j] += a * b[j];
            }
        }
}

template <typename T>
void gemm_nt(int M, int N, int K, const T* A, int lda, const T* B, int ldb, T* C, int ldc)
{
#pragma omp parallel for schedule(static) if (std::size_t(M) * N * K > 32768)
    for (int i = 0; i < M; ++i) {
        const T* a = A + std::size_t(i) * lda;
        for (int j = 0; j < N; ++j) {
            const T* b = B + std::size_t(j) * ldb;
            T acc = 0;
#pragma omp simd reduction(+ : acc)
            for (int p = 0; p < K; ++p)
                acc += a[p] * b[p];
            C[std::size_t(i) * ldc + j] += acc;
        }
    }
}

template <typename T>
void conv_forward(const Tensor<T>& x, std::span<const T> weight, std::span<const T> bias, int out_channels,
                  Kernel3 k, Tensor<T>& y)
{
    check_kernel(k);
    const int N = x.n(), Ci = x.c(), D = x.d(), H = x.h(), W = x.w();
    const int Kdim = Ci * k.volume();
    if (weight.size() != std::size_t(out_channels) * Kdim || bias.size() != std::size_t(out_channels))
        throw Error(ErrorCode::ShapeMismatch, "convolution parameter size mismatch");
    y = Tensor<T>(N, out_channels, D, H, W);
    const std::size_t S = x.spatial();
    const std::size_t P = std::size_t(H) * W;

    for (int n = 0; n < N; ++n)
        for (int co = 0; co < out_channels; ++co)
            std::fill_n(&y.data[y.index(n, co, 0, 0, 0)], S, bias[co]);

    if (pointwise(k)) {
#pragma omp parallel for schedule(static)
        for (int n = 0; n < N; ++n)
            gemm_nn<T>(out_channels, int(S), Ci, weight.data(), Ci, &x.data[x.index(n, 0, 0, 0, 0)], int(S),
                       &y.data[y.index(n, 0, 0, 0, 0)], int(S));
        return;
    }

#pragma omp parallel
    {
        std::vector<T> col(std::size_t(Kdim) * P);
#pragma omp for collapse(2) schedule(static)
        for (int n = 0; n < N; ++n)
            for (int od = 0; od < D; ++od) {
                im2col_plane(x, n, od, k, col.data());
                gemm_nn<T>(out_channels, int(P), Kdim, weight.data(), Kdim, col.data(), int(P),
                           &y.data[y.index(n, 0, od, 0, 0)], int(S));
            }
    }
}

template <typename T>
void conv_backward(const Tensor<T>& x, std::span<const T> weight, const Tensor<T>& grad_y, Kernel3 k,
                   Tensor<T>* grad_x, std::span<T> grad_w, std::span<T> grad_b)
{
    check_kernel(k);
    const int N = x.n(), Ci = x.c(), D = x.d(), H = x.h(), W = x.w();
    const int Co = grad_y.c();
    const int Kdim = Ci * k.volume();
    if (grad_y.n() != N || grad_y.d() != D || grad_y.h() != H || grad_y.w() != W)
        throw Error(ErrorCode::ShapeMismatch, "gradient shape does not match convolution output");
    if (weight.size() != std::size_t(Co) * Kdim || grad_w.size() != weight.size() || grad_b.size() != std::size_t(Co))
        throw Error(ErrorCode::ShapeMismatch, "convolution parameter size mismatch");
    const std::size_t S = x.spatial();
    const std::size_t P = std::size_t(H) * W;
    if (grad_x)
        *grad_x = Tensor<T>(N, Ci, D, H, W);

    for (int n = 0; n < N; ++n)
        for (int co = 0; co < Co; ++co) {
            const T* g = &grad_y.data[grad_y.index(n, co, 0, 0, 0)];
            T acc = 0;
            for (std::size_t s = 0; s < S; ++s)
                acc += g[s];
            grad_b[co] += acc;
        }

    // Per-thread weight-gradient partials, reduced in thread order.
    const int threads = std::min(thread_count(), std::max(N, 1));
    std::vector<std::vector<T>> partial(threads, std::vector<T>(grad_w.size(), T(0)));

#pragma omp parallel num_threads(threads)
    {
        std::vector<T>& gw = partial[thread_id()];
        std::vector<T> col, dcol;
        if (!pointwise(k)) {
            col.resize(std::size_t(Kdim) * P);
            dcol.resize(col.size());
        }
#pragma omp for schedule(static)
        for (int n = 0; n < N; ++n) {
            const T* gy_n = &grad_y.data[grad_y.index(n, 0, 0, 0, 0)];
            if (pointwise(k)) {
                const T* x_n = &x.data[x.index(n, 0, 0, 0, 0)];
                gemm_nt<T>(Co, Ci, int(S), gy_n, int(S), x_n, int(S), gw.data(), Ci);
                if (grad_x)
                    gemm_tn<T>(Ci, int(S), Co, weight.data(), Ci, gy_n, int(S),
                               &grad_x->data[grad_x->index(n, 0, 0, 0, 0)], int(S));
                continue;
            }
            for (int od = 0; od < D; ++od) {
                const T* gy_plane = gy_n + std::size_t(od) * P;
                im2col_plane(x, n, od, k, col.data());
                gemm_nt<T>(Co, Kdim, int(P), gy_plane, int(S), col.data(), int(P), gw.data(), Kdim);
                if (grad_x) {
                    std::fill(dcol.begin(), dcol.end(), T(0));
                    gemm_tn<T>(Kdim, int(P), Co, weight.data(), Kdim, gy_plane, int(S), dcol.data(), int(P));
                    col2im_plane(dcol.data(), n, od, k, *grad_x);
                }
            }
        }
    }
    for (const auto& gw : partial)
        for (std::size_t i = 0; i < gw.size(); ++i)
            grad_w[i] += gw[i];
}

#define TRIAGE_INSTANTIATE_KERNELS(T)                                                                         \
    template void gemm_nn<T>(int, int, int, const T*, int, const T*, int, T*, int);                           \
    template void gemm_tn<T>(int, int, int, const T*, int, const T*, int, T*, int);                           \
    template void gemm_nt<T>(int, int, int, const T*, int, const T*, int, T*, int);                           \
    template void conv_forward<T>(const Tensor<T>&, std::span<const T>, std::span<const T>, int, Kernel3,     \
                                  Tensor<T>&);                                                                \
    template void conv_backward<T>(const Tensor<T>&, std::span<const T>, const Tensor<T>&, Kernel3, Tensor<T>*, \
                                   std::span<T>, std::span<T>);

TRIAGE_INSTANTIATE_KERNELS(float)
TRIAGE_INSTANTIATE_KERNELS(double)

} // namespace triage::nn
