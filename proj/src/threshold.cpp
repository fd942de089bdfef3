#include "triage/threshold.hpp"

#include "triage/error.hpp"

#include <cmath>
#include <numeric>

namespace triage {

void ThresholdConfig::validate() const
{
    if (!(hu_min < hu_max))
        throw Error(ErrorCode::InvalidArgument, "hu_min must be below hu_max");
    if (!(sigma > 0))
        throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
    if (!(v_min_fraction >= 0.0 && v_min_fraction < 1.0))
        throw Error(ErrorCode::InvalidArgument, "v_min_fraction must lie in [0, 1)");
    if (connectivity != 6 && connectivity != 26)
        throw Error(ErrorCode::InvalidArgument, "connectivity must be 6 or 26");
    if (!(truncate > 0))
        throw Error(ErrorCode::InvalidArgument, "truncate must be positive");
}

namespace {

struct DisjointSet {
    std::vector<std::int32_t> parent;

    std::int32_t make()
    {
        parent.push_back(std::int32_t(parent.size()));
        return parent.back();
    }
    std::int32_t find(std::int32_t a)
    {
        while (parent[a] != a) {
            parent[a] = parent[parent[a]];
            a = parent[a];
        }
        return a;
    }
    void unite(std::int32_t a, std::int32_t b)
    {
        a = find(a);
        b = find(b);
        if (a == b)
            return;
        if (a < b)
            parent[b] = a;
        else
            parent[a] = b;
    }
};

} // namespace

Components connected_components_3d(const Mask& m, int connectivity)
{
    if (connectivity != 6 && connectivity != 26)
        throw Error(ErrorCode::InvalidArgument, "connectivity must be 6 or 26");
    const Shape3 s = m.shape();

    // Already-visited half of the neighbourhood in raster order.
    std::vector<std::array<int, 3>> back;
    for (int dz = -1; dz <= 0; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0)))
                    continue;
                const int manhattan = std::abs(dz) + std::abs(dy) + std::abs(dx);
                if (connectivity == 6 && manhattan != 1)
                    continue;
                back.push_back({dz, dy, dx});
            }

    std::vector<std::int32_t> provisional(s.size(), -1);
    DisjointSet sets;
    const auto& data = m.data();
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x) {
                const std::size_t i = s.index(z, y, x);
                if (!data[i])
                    continue;
                std::int32_t label = -1;
                for (const auto& d : back) {
                    const int nz = z + d[0], ny = y + d[1], nx = x + d[2];
                    if (!s.contains(nz, ny, nx))
                        continue;
                    const std::int32_t other = provisional[s.index(nz, ny, nx)];
                    if (other < 0)
                        continue;
                    if (label < 0)
                        label = other;
                    else
                        sets.unite(label, other);
                }
                provisional[i] = label < 0 ? sets.make() : label;
            }

    Components out{s, std::vector<std::int32_t>(s.size(), 0), {}};
    std::vector<std::int32_t> final_label(sets.parent.size(), 0);
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (provisional[i] < 0)
            continue;
        const std::int32_t root = sets.find(provisional[i]);
        if (final_label[root] == 0) {
            out.sizes.push_back(0);
            final_label[root] = std::int32_t(out.sizes.size());
        }
        out.labels[i] = final_label[root];
        ++out.sizes[final_label[root] - 1];
    }
    return out;
}

int reflect_index(int i, int n)
{
    const int period = 2 * n;
    i %= period;
    if (i < 0)
        i += period;
    return i < n ? i : period - 1 - i;
}

std::vector<double> gaussian_kernel_1d(double sigma, double truncate)
{
    const int radius = std::max(1, int(std::ceil(truncate * sigma)));
    std::vector<double> k(2 * radius + 1);
    for (int d = -radius; d <= radius; ++d)
        k[d + radius] = std::exp(-0.5 * double(d) * double(d) / (sigma * sigma));
    const double sum = std::accumulate(k.begin(), k.end(), 0.0);
    for (double& w : k)
        w /= sum;
    return k;
}

namespace {

// One 1D pass along the axis with the given stride; lines enumerated by
// (outer, inner) pairs.
void blur_axis(std::vector<double>& field, int n, std::size_t stride, std::size_t outer_count,
               std::size_t outer_stride, std::size_t inner_count, const std::vector<double>& kernel)
{
    const int radius = int(kernel.size() / 2);
#pragma omp parallel
    {
        std::vector<double> line(std::size_t(n) + 2 * std::size_t(radius));
#pragma omp for collapse(2) schedule(static)
        for (std::size_t o = 0; o < outer_count; ++o)
            for (std::size_t in = 0; in < inner_count; ++in) {
                double* base = field.data() + o * outer_stride + in;
                for (int i = -radius; i < n + radius; ++i)
                    line[std::size_t(i + radius)] = base[std::size_t(reflect_index(i, n)) * stride];
                for (int i = 0; i < n; ++i) {
                    double acc = 0.0;
                    const double* w = line.data() + i;
                    for (std::size_t k = 0; k < kernel.size(); ++k)
                        acc += kernel[k] * w[k];
                    base[std::size_t(i) * stride] = acc;
                }
            }
    }
}

} // namespace

std::vector<double> gaussian_blur_3d(const std::vector<double>& field, const Shape3& s, double sigma,
                                     double truncate)
{
    if (field.size() != s.size())
        throw Error(ErrorCode::ShapeMismatch, "field size does not match shape");
    const auto kernel = gaussian_kernel_1d(sigma, truncate);
    std::vector<double> out = field;
    const std::size_t plane = std::size_t(s.y) * s.x;
    blur_axis(out, s.z, plane, 1, 0, plane, kernel);                       // z
    blur_axis(out, s.y, std::size_t(s.x), std::size_t(s.z), plane, std::size_t(s.x), kernel); // y
    blur_axis(out, s.x, 1, std::size_t(s.z) * s.y, std::size_t(s.x), 1, kernel);          // x
    return out;
}

Mask threshold_window(const Volume& v, const Mask& lungs, double hu_min, double hu_max)
{
    if (v.shape() != lungs.shape())
        throw Error(ErrorCode::Misalignment, "lung mask shape differs from volume");
    std::vector<std::uint8_t> out(v.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const float hu = v.data()[i];
        out[i] = std::uint8_t(lungs.data()[i] && hu >= hu_min && hu <= hu_max);
    }
    return Mask(v.shape(), v.spacing(), std::move(out), MaskKind::Lesion);
}

Mask threshold_segment(const Volume& v, const Mask& lungs, const ThresholdConfig& cfg)
{
    cfg.validate();
    const std::size_t lung_voxels = lungs.count();
    if (lung_voxels == 0)
        throw Error(ErrorCode::EmptyMask, "threshold_segment needs a non-empty lung mask");

    const Mask windowed = threshold_window(v, lungs, cfg.hu_min, cfg.hu_max);
    std::vector<double> field(windowed.data().begin(), windowed.data().end());
    field = gaussian_blur_3d(field, v.shape(), cfg.sigma, cfg.truncate);

    std::vector<std::uint8_t> smooth(field.size());
    for (std::size_t i = 0; i < field.size(); ++i)
        smooth[i] = std::uint8_t(field[i] > 0.5 && lungs.data()[i]);
    Mask smoothed(v.shape(), v.spacing(), std::move(smooth), MaskKind::Lesion);

    const double min_size = cfg.v_min_fraction * double(lung_voxels);
    const Components cc = connected_components_3d(smoothed, cfg.connectivity);
    std::vector<std::uint8_t> out(field.size(), 0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const std::int32_t label = cc.labels[i];
        out[i] = std::uint8_t(label > 0 && double(cc.sizes[label - 1]) >= min_size);
    }
    return Mask(v.shape(), v.spacing(), std::move(out), MaskKind::Lesion);
}

} // namespace triage
