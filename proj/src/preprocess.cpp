#include "triage/preprocess.hpp"

#include "triage/error.hpp"

#include <algorithm>
#include <cmath>

namespace triage {

namespace {

constexpr int kMinInPlane = 8;

int resampled_size(int n, double spacing, double target)
{
    return std::max(1, int(std::lround(double(n) * spacing / target)));
}

// Linear interpolation taps along one axis: for each output index the two
// source indices and the weight of the second one.
struct Taps {
    std::vector<int> lo, hi;
    std::vector<double> w;
};

Taps linear_taps(int n_in, double d_in, int n_out, double d_out)
{
    Taps t;
    t.lo.resize(n_out);
    t.hi.resize(n_out);
    t.w.resize(n_out);
    const double scale = d_out / d_in;
    for (int o = 0; o < n_out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, double(n_in - 1));
        const int i0 = int(std::floor(src));
        const int i1 = std::min(i0 + 1, n_in - 1);
        t.lo[o] = i0;
        t.hi[o] = i1;
        t.w[o] = src - i0;
    }
    return t;
}

std::vector<int> nearest_taps(int n_in, double d_in, int n_out, double d_out)
{
    std::vector<int> idx(n_out);
    const double scale = d_out / d_in;
    for (int o = 0; o < n_out; ++o)
        idx[o] = std::clamp(int(std::floor((o + 0.5) * scale)), 0, n_in - 1);
    return idx;
}

template <typename T>
std::vector<T> resample_nearest(const std::vector<T>& src, const Shape3& in, const Spacing& sp, const Shape3& out,
                                double ty, double tx)
{
    const auto iy = nearest_taps(in.y, sp.y, out.y, ty);
    const auto ix = nearest_taps(in.x, sp.x, out.x, tx);
    std::vector<T> dst(out.size());
#pragma omp parallel for schedule(static)
    for (int z = 0; z < out.z; ++z)
        for (int y = 0; y < out.y; ++y)
            for (int x = 0; x < out.x; ++x)
                dst[out.index(z, y, x)] = src[in.index(z, iy[y], ix[x])];
    return dst;
}

std::vector<float> resample_linear(const std::vector<float>& src, const Shape3& in, const Spacing& sp,
                                   const Shape3& out, double ty, double tx)
{
    const Taps ty_taps = linear_taps(in.y, sp.y, out.y, ty);
    const Taps tx_taps = linear_taps(in.x, sp.x, out.x, tx);
    std::vector<float> dst(out.size());
#pragma omp parallel for schedule(static)
    for (int z = 0; z < out.z; ++z)
        for (int y = 0; y < out.y; ++y) {
            const double wy = ty_taps.w[y];
            const float* r0 = src.data() + in.index(z, ty_taps.lo[y], 0);
            const float* r1 = src.data() + in.index(z, ty_taps.hi[y], 0);
            for (int x = 0; x < out.x; ++x) {
                const double wx = tx_taps.w[x];
                const int x0 = tx_taps.lo[x], x1 = tx_taps.hi[x];
                const double top = r0[x0] + wx * (double(r0[x1]) - r0[x0]);
                const double bottom = r1[x0] + wx * (double(r1[x1]) - r1[x0]);
                dst[out.index(z, y, x)] = float(top + wy * (bottom - top));
            }
        }
    return dst;
}

Shape3 resampled_shape(const Shape3& in, const Spacing& sp, const PreprocessConfig& cfg)
{
    const Shape3 out{in.z, resampled_size(in.y, sp.y, cfg.target_spacing_y),
                     resampled_size(in.x, sp.x, cfg.target_spacing_x)};
    if (out.y < kMinInPlane || out.x < kMinInPlane)
        throw Error(ErrorCode::DegenerateOutput, "resampled slice is " + std::to_string(out.y) + "x" +
                                                     std::to_string(out.x) + ", below 8x8");
    return out;
}

BoundingBox clamp_box(BoundingBox b, int margin, const Shape3& s)
{
    b.z = {std::max(0, b.z.begin - margin), std::min(s.z, b.z.end + margin)};
    b.y = {std::max(0, b.y.begin - margin), std::min(s.y, b.y.end + margin)};
    b.x = {std::max(0, b.x.begin - margin), std::min(s.x, b.x.end + margin)};
    return b;
}

template <typename T>
std::vector<T> crop_data(const std::vector<T>& src, const Shape3& s, const BoundingBox& b)
{
    const Shape3 out = b.shape();
    std::vector<T> dst(out.size());
    for (int z = 0; z < out.z; ++z)
        for (int y = 0; y < out.y; ++y) {
            const T* from = src.data() + s.index(z + b.z.begin, y + b.y.begin, b.x.begin);
            std::copy(from, from + out.x, dst.data() + out.index(z, y, 0));
        }
    return dst;
}

void check_box(const BoundingBox& b, const Shape3& s)
{
    if (b.z.begin < 0 || b.y.begin < 0 || b.x.begin < 0 || b.z.end > s.z || b.y.end > s.y || b.x.end > s.x ||
        b.z.length() < 1 || b.y.length() < 1 || b.x.length() < 1)
        throw Error(ErrorCode::InvalidArgument, "crop box outside the volume");
}

} // namespace

void PreprocessConfig::validate() const
{
    if (!(hu_lo < hu_hi))
        throw Error(ErrorCode::InvalidArgument, "hu window requires lo < hi");
    if (!(target_spacing_y > 0) || !(target_spacing_x > 0))
        throw Error(ErrorCode::InvalidArgument, "target spacing must be positive");
}

Volume resample_axial(const Volume& v, const PreprocessConfig& cfg)
{
    cfg.validate();
    const Shape3 out = resampled_shape(v.shape(), v.spacing(), cfg);
    const Spacing sp{v.spacing().z, cfg.target_spacing_y, cfg.target_spacing_x};
    std::vector<float> data =
        cfg.image_interpolation == Interpolation::Linear
            ? resample_linear(v.data(), v.shape(), v.spacing(), out, cfg.target_spacing_y, cfg.target_spacing_x)
            : resample_nearest(v.data(), v.shape(), v.spacing(), out, cfg.target_spacing_y, cfg.target_spacing_x);
    return Volume(out, sp, std::move(data), v.study_id());
}

Mask resample_axial(const Mask& m, const PreprocessConfig& cfg)
{
    cfg.validate();
    const Shape3 out = resampled_shape(m.shape(), m.spacing(), cfg);
    const Spacing sp{m.spacing().z, cfg.target_spacing_y, cfg.target_spacing_x};
    auto data = resample_nearest(m.data(), m.shape(), m.spacing(), out, cfg.target_spacing_y, cfg.target_spacing_x);
    return Mask(out, sp, std::move(data), m.kind());
}

Mask resample_mask_to(const Mask& m, Shape3 shape, Spacing spacing)
{
    if (shape.z != m.shape().z)
        throw Error(ErrorCode::ShapeMismatch, "slice count differs");
    auto data = resample_nearest(m.data(), m.shape(), m.spacing(), shape, spacing.y, spacing.x);
    return Mask(shape, spacing, std::move(data), m.kind());
}

Volume normalize_intensity(const Volume& v, const PreprocessConfig& cfg)
{
    cfg.validate();
    const double lo = cfg.hu_lo, width = cfg.hu_hi - cfg.hu_lo;
    std::vector<float> out(v.data().size());
    const float* src = v.data().data();
    const std::size_t n = out.size();
#pragma omp parallel for schedule(static)
    for (std::size_t i = 0; i < n; ++i) {
        const double clipped = std::clamp<double>(src[i], lo, cfg.hu_hi);
        out[i] = float((clipped - lo) / width);
    }
    return Volume(v.shape(), v.spacing(), std::move(out), v.study_id());
}

Volume preprocess(const Volume& v, const PreprocessConfig& cfg)
{
    return normalize_intensity(resample_axial(v, cfg), cfg);
}

Volume crop(const Volume& v, const BoundingBox& box)
{
    check_box(box, v.shape());
    return Volume(box.shape(), v.spacing(), crop_data(v.data(), v.shape(), box), v.study_id());
}

Mask crop(const Mask& m, const BoundingBox& box)
{
    check_box(box, m.shape());
    return Mask(box.shape(), m.spacing(), crop_data(m.data(), m.shape(), box), m.kind());
}

CropResult crop_to_lungs(const Volume& v, const Mask& lungs, int margin_voxels)
{
    if (v.shape() != lungs.shape())
        throw Error(ErrorCode::Misalignment, "lung mask shape differs from volume");
    if (margin_voxels < 0)
        throw Error(ErrorCode::InvalidArgument, "negative crop margin");
    const BoundingBoxResult bb = bounding_box(lungs);
    const BoundingBox box = clamp_box(bb.box, margin_voxels, v.shape());
    return {crop(v, box), {box, v.shape(), bb.empty_mask}};
}

Mask embed(const Mask& cropped, const CropRecord& record)
{
    if (cropped.shape() != record.box.shape())
        throw Error(ErrorCode::ShapeMismatch, "cropped mask does not match crop record");
    const Shape3& s = record.original_shape;
    const BoundingBox& b = record.box;
    std::vector<std::uint8_t> out(s.size(), 0);
    const Shape3 cs = cropped.shape();
    for (int z = 0; z < cs.z; ++z)
        for (int y = 0; y < cs.y; ++y) {
            const std::uint8_t* from = cropped.data().data() + cs.index(z, y, 0);
            std::copy(from, from + cs.x, out.data() + s.index(z + b.z.begin, y + b.y.begin, b.x.begin));
        }
    return Mask(s, cropped.spacing(), std::move(out), cropped.kind());
}

} // namespace triage
