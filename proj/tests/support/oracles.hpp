#pragma once

// Slow, obviously-correct reimplementations shared by the unit and acceptance
// suites. Nothing here calls into triage_core beyond the data types.

#include "triage/volume.hpp"

#include <algorithm>
#include <iterator>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <queue>
#include <vector>

namespace oracle {

// BFS flood fill over the full 3x3x3 (26) or face (6) neighbourhood.
// Labels are assigned in raster order of each component's first voxel.
inline std::vector<int> flood_labels(const triage::Mask& m, int connectivity, std::vector<std::size_t>* sizes = nullptr)
{
    const auto s = m.shape();
    std::vector<int> label(s.size(), 0);
    int next = 0;
    if (sizes)
        sizes->clear();
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x) {
                if (!m.at(z, y, x) || label[s.index(z, y, x)])
                    continue;
                ++next;
                std::size_t count = 0;
                std::queue<std::array<int, 3>> q;
                q.push({z, y, x});
                label[s.index(z, y, x)] = next;
                while (!q.empty()) {
                    auto [cz, cy, cx] = q.front();
                    q.pop();
                    ++count;
                    for (int dz = -1; dz <= 1; ++dz)
                        for (int dy = -1; dy <= 1; ++dy)
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int man = std::abs(dz) + std::abs(dy) + std::abs(dx);
                                if (man == 0 || (connectivity == 6 && man != 1))
                                    continue;
                                const int nz = cz + dz, ny = cy + dy, nx = cx + dx;
                                if (!s.contains(nz, ny, nx) || !m.at(nz, ny, nx))
                                    continue;
                                int& l = label[s.index(nz, ny, nx)];
                                if (l)
                                    continue;
                                l = next;
                                q.push({nz, ny, nx});
                            }
                }
                if (sizes)
                    sizes->push_back(count);
            }
    return label;
}

// Mirror boundary written out as index arithmetic: ... 2 1 0 | 0 1 2 ... n-1 | n-1 n-2 ...
inline int mirror(int i, int n)
{
    while (i < 0 || i >= n) {
        if (i < 0)
            i = -i - 1;
        if (i >= n)
            i = 2 * n - i - 1;
    }
    return i;
}

// Three steps as stated: window inside lungs, Gaussian smoothing re-binarized at
// 0.5 (kept inside lungs), drop components smaller than fraction * |lungs|.
inline std::vector<std::uint8_t> threshold_reference(const triage::Volume& v, const triage::Mask& lungs,
                                                     double hu_min, double hu_max, double sigma,
                                                     double fraction)
{
    const auto s = v.shape();
    std::vector<double> f(s.size());
    std::size_t lung_count = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        const bool in = lungs.data()[i] != 0;
        lung_count += in;
        f[i] = (in && v.data()[i] >= hu_min && v.data()[i] <= hu_max) ? 1.0 : 0.0;
    }

    const int r = std::max(1, int(std::ceil(4.0 * sigma)));
    std::vector<double> w(2 * r + 1);
    for (int d = -r; d <= r; ++d)
        w[d + r] = std::exp(-double(d) * double(d) / (2.0 * sigma * sigma));
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& x : w)
        x /= total;

    auto pass = [&](int axis) {
        std::vector<double> g(s.size(), 0.0);
        for (int z = 0; z < s.z; ++z)
            for (int y = 0; y < s.y; ++y)
                for (int x = 0; x < s.x; ++x) {
                    double acc = 0.0;
                    for (int d = -r; d <= r; ++d) {
                        int iz = z, iy = y, ix = x;
                        if (axis == 0) iz = mirror(z + d, s.z);
                        if (axis == 1) iy = mirror(y + d, s.y);
                        if (axis == 2) ix = mirror(x + d, s.x);
                        acc += w[d + r] * f[s.index(iz, iy, ix)];
                    }
                    g[s.index(z, y, x)] = acc;
                }
        f = std::move(g);
    };
    pass(0);
    pass(1);
    pass(2);

    std::vector<std::uint8_t> smooth(s.size());
    for (std::size_t i = 0; i < s.size(); ++i)
        smooth[i] = std::uint8_t(f[i] > 0.5 && lungs.data()[i]);
    triage::Mask sm(s, v.spacing(), smooth, triage::MaskKind::Lesion);

    std::vector<std::size_t> sizes;
    const auto labels = flood_labels(sm, 26, &sizes);
    std::vector<std::uint8_t> out(s.size(), 0);
    for (std::size_t i = 0; i < s.size(); ++i)
        if (labels[i] && double(sizes[labels[i] - 1]) >= fraction * double(lung_count))
            out[i] = 1;
    return out;
}

} // namespace oracle

namespace oracle {

// Exhaustive pair enumeration.
inline double auc_pairs(const std::vector<double>& pos, const std::vector<double>& neg)
{
    double credit = 0.0;
    for (double p : pos)
        for (double n : neg)
            credit += p > n ? 1.0 : (p == n ? 0.5 : 0.0);
    return credit / (double(pos.size()) * double(neg.size()));
}

// Rank by counting: 1 + #greater + (#equal - 1) / 2, i.e. the descending
// average rank, then Pearson on the ranks.
inline double spearman_by_counting(const std::vector<double>& a, const std::vector<double>& b)
{
    auto ranks = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double greater = 0, equal = 0;
            for (double w : v) {
                greater += w > v[i];
                equal += w == v[i];
            }
            r[i] = 1.0 + greater + (equal - 1.0) / 2.0;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = double(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        ma += ra[i] / n;
        mb += rb[i] / n;
    }
    double cov = 0, va = 0, vb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        cov += (ra[i] - ma) * (rb[i] - mb);
        va += (ra[i] - ma) * (ra[i] - ma);
        vb += (rb[i] - mb) * (rb[i] - mb);
    }
    return cov / std::sqrt(va * vb);
}

// Set arithmetic on voxel index sets.
inline double dice_sets(const triage::Mask& a, const triage::Mask& b)
{
    std::vector<std::size_t> sa, sb, both;
    for (std::size_t i = 0; i < a.data().size(); ++i) {
        if (a.data()[i]) sa.push_back(i);
        if (b.data()[i]) sb.push_back(i);
    }
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(both));
    if (sa.empty() && sb.empty())
        return 1.0;
    return 2.0 * double(both.size()) / double(sa.size() + sb.size());
}

// Straight-line weighted BCE over a batch, eps-clamped.
struct LossCase {
    std::vector<double> seg_prob;
    std::vector<std::uint8_t> seg_target; // empty: no mask
    double cls_prob = 0.5;
    int cls_target = -1; // -1: no label
};

inline double multitask_loss_loop(const std::vector<LossCase>& batch, double lambda)
{
    const double eps = 1e-7;
    auto term = [&](double p, int y) {
        if (p < eps) p = eps;
        if (p > 1 - eps) p = 1 - eps;
        return y == 1 ? -std::log(p) : -std::log(1 - p);
    };
    double seg_sum = 0, cls_sum = 0;
    int seg_n = 0, cls_n = 0;
    for (const auto& s : batch) {
        if (!s.seg_target.empty()) {
            double v = 0;
            for (std::size_t i = 0; i < s.seg_prob.size(); ++i)
                v += term(s.seg_prob[i], s.seg_target[i]);
            seg_sum += v / double(s.seg_prob.size());
            ++seg_n;
        }
        if (s.cls_target >= 0) {
            cls_sum += term(s.cls_prob, s.cls_target);
            ++cls_n;
        }
    }
    return (seg_n ? seg_sum / seg_n : 0.0) + lambda * (cls_n ? cls_sum / cls_n : 0.0);
}

} // namespace oracle
