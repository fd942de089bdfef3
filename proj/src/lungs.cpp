#include "triage/lungs.hpp"

#include "triage/error.hpp"

#include <array>
#include <cmath>

namespace triage {

Mask segment_lungs(const Volume& v, nn::Network<float>& net)
{
    if (!net.spec().has_segmentation())
        throw Error(ErrorCode::ShapeMismatch, "lung network has no segmentation head");
    const std::vector<float> prob = net.spec().is_3d() ? nn::forward_unet3d(net, v) : nn::forward_unet2d(net, v);
    std::vector<std::uint8_t> out(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i)
        out[i] = std::uint8_t(prob[i] > 0.5f);
    return Mask(v.shape(), v.spacing(), std::move(out), MaskKind::Lungs);
}

namespace {

using Vec3 = std::array<double, 3>;

double dist2(const Vec3& a, const Vec3& b)
{
    const double dz = a[0] - b[0], dy = a[1] - b[1], dx = a[2] - b[2];
    return dz * dz + dy * dy + dx * dx;
}

// Index sums are exact integers, so centroids do not depend on visiting order.
struct Accumulator {
    std::array<long long, 3> sum{};
    long long count = 0;

    void add(int z, int y, int x)
    {
        sum[0] += z;
        sum[1] += y;
        sum[2] += x;
        ++count;
    }
    Vec3 centroid(const Spacing& sp) const
    {
        return {double(sum[0]) / double(count) * sp.z, double(sum[1]) / double(count) * sp.y,
                double(sum[2]) / double(count) * sp.x};
    }
};

} // namespace

LungSplit split_lungs(const Mask& lungs, const KMeansConfig& cfg)
{
    const Shape3 s = lungs.shape();
    const Spacing sp = lungs.spacing();
    const BoundingBoxResult bb = bounding_box(lungs);
    if (bb.empty_mask)
        throw Error(ErrorCode::EmptyMask, "cannot split an empty lung mask");

    std::vector<std::array<int, 3>> points;
    points.reserve(lungs.count());
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x)
                if (lungs.at(z, y, x))
                    points.push_back({z, y, x});

    // Halves of the column extent [x0, x1): columns below the midpoint go left.
    const double mid = 0.5 * double(bb.box.x.begin + bb.box.x.end - 1);
    Accumulator init[2];
    for (const auto& p : points)
        init[double(p[2]) <= mid ? 0 : 1].add(p[0], p[1], p[2]);
    Vec3 c[2];
    if (init[0].count == 0 || init[1].count == 0) {
        const Accumulator& any = init[0].count ? init[0] : init[1];
        c[0] = c[1] = any.centroid(sp);
    } else {
        c[0] = init[0].centroid(sp);
        c[1] = init[1].centroid(sp);
    }

    std::vector<std::uint8_t> assign(points.size(), 0);
    int it = 0;
    while (it < cfg.max_iterations) {
        ++it;
        Accumulator acc[2];
        for (std::size_t i = 0; i < points.size(); ++i) {
            const auto& p = points[i];
            const Vec3 q{p[0] * sp.z, p[1] * sp.y, p[2] * sp.x};
            // ties go to the first centroid
            assign[i] = dist2(q, c[1]) < dist2(q, c[0]) ? 1 : 0;
            acc[assign[i]].add(p[0], p[1], p[2]);
        }
        double shift = 0.0;
        for (int k = 0; k < 2; ++k) {
            if (acc[k].count == 0)
                continue; // an empty cluster keeps its centroid
            const Vec3 next = acc[k].centroid(sp);
            shift = std::max(shift, std::sqrt(dist2(next, c[k])));
            c[k] = next;
        }
        if (shift < cfg.tolerance_mm)
            break;
    }

    // Re-derive sizes and mean columns from the final assignment.
    Accumulator fin[2];
    for (std::size_t i = 0; i < points.size(); ++i)
        fin[assign[i]].add(points[i][0], points[i][1], points[i][2]);
    auto mean_x = [&](int k) { return fin[k].count ? double(fin[k].sum[2]) / double(fin[k].count) : 0.0; };
    int right = 0;
    if (fin[0].count == 0 || (fin[1].count > 0 && mean_x(1) < mean_x(0)))
        right = 1;

    std::vector<std::uint8_t> rd(s.size(), 0), ld(s.size(), 0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& p = points[i];
        (assign[i] == right ? rd : ld)[s.index(p[0], p[1], p[2])] = 1;
    }

    LungSplit out;
    out.right = Mask(s, sp, std::move(rd), MaskKind::LungRight);
    out.left = Mask(s, sp, std::move(ld), MaskKind::LungLeft);
    const double voxel = sp.voxel_volume();
    out.volume_right_mm3 = double(fin[right].count) * voxel;
    out.volume_left_mm3 = double(fin[1 - right].count) * voxel;
    out.iterations = it;
    const double smaller = double(std::min(fin[0].count, fin[1].count));
    out.degenerate = smaller < cfg.degenerate_fraction * double(points.size());
    if (out.degenerate)
        warn("lung split is degenerate: one side has under " +
             std::to_string(int(cfg.degenerate_fraction * 100)) + "% of the voxels");
    return out;
}

} // namespace triage
