#include "triage/phantom.hpp"

#include "triage/error.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace triage {

bool Ellipsoid::contains(double z, double y, double x) const
{
    const double a = (z - cz) / rz, b = (y - cy) / ry, c = (x - cx) / rx;
    return a * a + b * b + c * c <= 1.0;
}

void PhantomSpec::validate() const
{
    if (shape.z < 16 || shape.y < 16 || shape.x < 16)
        throw Error(ErrorCode::InvalidArgument, "phantom shape must be at least 16^3");
    for (double f : {lesion_fraction_left, lesion_fraction_right})
        if (!(f >= 0.0 && f <= 1.0))
            throw Error(ErrorCode::InvalidArgument, "lesion fractions must lie in [0, 1]");
    if (max_blobs < 1)
        throw Error(ErrorCode::InvalidArgument, "max_blobs must be at least 1");
    if (!(noise_sigma >= 0.0))
        throw Error(ErrorCode::InvalidArgument, "noise_sigma must be non-negative");
    if (!(spacing.z > 0 && spacing.y > 0 && spacing.x > 0))
        throw Error(ErrorCode::InvalidArgument, "phantom spacing must be positive");
}

PhantomSpec default_phantom_spec(Shape3 shape, Spacing spacing)
{
    PhantomSpec s;
    s.shape = shape;
    s.spacing = spacing;
    const double Z = shape.z, Y = shape.y, X = shape.x;
    const double mz = 0.5 * (Z - 1), my = 0.5 * (Y - 1), mx = 0.5 * (X - 1);
    s.body = {mz, my, mx, 1e9, 0.45 * Y, 0.47 * X};
    s.lung_right = {mz, my, mx - 0.19 * X, 0.42 * Z, 0.30 * Y, 0.15 * X};
    s.lung_left = {mz, my, mx + 0.19 * X, 0.42 * Z, 0.30 * Y, 0.15 * X};
    return s;
}

PhantomSpec random_phantom_spec(std::uint64_t seed, bool lesioned, Shape3 shape, Spacing spacing)
{
    PhantomSpec s = default_phantom_spec(shape, spacing);
    s.seed = seed;
    std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::uniform_real_distribution<double> jitter(0.88, 1.08);
    std::uniform_real_distribution<double> shift(-1.0, 1.0);
    for (Ellipsoid* e : {&s.lung_right, &s.lung_left}) {
        e->rz *= jitter(rng);
        e->ry *= jitter(rng);
        e->rx *= jitter(rng);
        e->cy += shift(rng);
        e->cz += 0.5 * shift(rng);
    }
    if (lesioned) {
        std::uniform_real_distribution<double> frac(0.02, 0.6);
        s.lesion_fraction_right = frac(rng);
        s.lesion_fraction_left = frac(rng);
        // a quarter of positives have a single affected lung
        std::uniform_int_distribution<int> pick(0, 7);
        const int r = pick(rng);
        if (r == 0)
            s.lesion_fraction_right = 0.0;
        else if (r == 1)
            s.lesion_fraction_left = 0.0;
    }
    return s;
}

namespace {

struct Candidate {
    double distance;
    std::size_t index;
    bool operator<(const Candidate& o) const
    {
        return distance < o.distance || (distance == o.distance && index < o.index);
    }
};

// Picks exactly n voxels of the lung nearest to 1..max_blobs random centres
// (ellipsoidal distance in millimetres with per-blob axis scales).
std::vector<std::uint8_t> grow_lesion(const std::vector<std::size_t>& lung_voxels, std::size_t n, const Shape3& s,
                                      const Spacing& sp, int max_blobs, std::mt19937_64& rng)
{
    std::vector<std::uint8_t> out(s.size(), 0);
    if (n == 0)
        return out;
    std::uniform_int_distribution<int> blob_count(1, max_blobs);
    std::uniform_int_distribution<std::size_t> pick(0, lung_voxels.size() - 1);
    std::uniform_real_distribution<double> scale(0.6, 1.4);
    struct Blob {
        double z, y, x, az, ay, ax;
    };
    std::vector<Blob> blobs(std::size_t(blob_count(rng)));
    for (auto& b : blobs) {
        const std::size_t v = lung_voxels[pick(rng)];
        b.x = double(v % std::size_t(s.x)) * sp.x;
        b.y = double((v / std::size_t(s.x)) % std::size_t(s.y)) * sp.y;
        b.z = double(v / (std::size_t(s.x) * std::size_t(s.y))) * sp.z;
        b.az = scale(rng);
        b.ay = scale(rng);
        b.ax = scale(rng);
    }
    std::vector<Candidate> c;
    c.reserve(lung_voxels.size());
    for (std::size_t v : lung_voxels) {
        const double x = double(v % std::size_t(s.x)) * sp.x;
        const double y = double((v / std::size_t(s.x)) % std::size_t(s.y)) * sp.y;
        const double z = double(v / (std::size_t(s.x) * std::size_t(s.y))) * sp.z;
        double best = 1e300;
        for (const auto& b : blobs) {
            const double dz = (z - b.z) / b.az, dy = (y - b.y) / b.ay, dx = (x - b.x) / b.ax;
            best = std::min(best, dz * dz + dy * dy + dx * dx);
        }
        c.push_back({best, v});
    }
    std::nth_element(c.begin(), c.begin() + std::ptrdiff_t(n - 1), c.end());
    const Candidate cutoff = c[n - 1];
    for (const auto& k : c)
        if (!(cutoff < k))
            out[k.index] = 1;
    return out;
}

} // namespace

Phantom generate_phantom(const PhantomSpec& spec)
{
    spec.validate();
    const Shape3 s = spec.shape;
    std::vector<std::uint8_t> body(s.size(), 0), right(s.size(), 0), left(s.size(), 0);
    std::vector<std::size_t> right_voxels, left_voxels;
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y)
            for (int x = 0; x < s.x; ++x) {
                const std::size_t i = s.index(z, y, x);
                const double b1 = (y - spec.body.cy) / spec.body.ry, b2 = (x - spec.body.cx) / spec.body.rx;
                body[i] = b1 * b1 + b2 * b2 <= 1.0;
                const bool r = spec.lung_right.contains(z, y, x);
                const bool l = spec.lung_left.contains(z, y, x);
                if (r && l)
                    throw Error(ErrorCode::InfeasibleSpec, "phantom lungs overlap");
                if ((r || l) && !body[i])
                    throw Error(ErrorCode::InfeasibleSpec, "phantom lung extends outside the body");
                if (r) {
                    right[i] = 1;
                    right_voxels.push_back(i);
                }
                if (l) {
                    left[i] = 1;
                    left_voxels.push_back(i);
                }
            }
    if (right_voxels.empty() || left_voxels.empty())
        throw Error(ErrorCode::InfeasibleSpec, "phantom lung has no voxels");
    // Lungs must be separate 26-connected objects.
    for (std::size_t i : right_voxels) {
        const int x = int(i % std::size_t(s.x)), y = int((i / std::size_t(s.x)) % std::size_t(s.y)),
                  z = int(i / (std::size_t(s.x) * std::size_t(s.y)));
        for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx)
                    if (s.contains(z + dz, y + dy, x + dx) && left[s.index(z + dz, y + dy, x + dx)])
                        throw Error(ErrorCode::InfeasibleSpec, "phantom lungs touch");
    }

    auto budget = [](double f, std::size_t n) {
        const auto k = std::size_t(std::llround(f * double(n)));
        if (f > 0.0 && k == 0)
            throw Error(ErrorCode::InfeasibleSpec, "lesion fraction too small for the lung size");
        if (std::abs(double(k) / double(n) - f) > 0.01)
            throw Error(ErrorCode::InfeasibleSpec, "lesion fraction not reachable within 0.01");
        return k;
    };
    const std::size_t n_right = budget(spec.lesion_fraction_right, right_voxels.size());
    const std::size_t n_left = budget(spec.lesion_fraction_left, left_voxels.size());

    std::mt19937_64 rng(spec.seed);
    const auto les_r = grow_lesion(right_voxels, n_right, s, spec.spacing, spec.max_blobs, rng);
    const auto les_l = grow_lesion(left_voxels, n_left, s, spec.spacing, spec.max_blobs, rng);

    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    std::vector<float> hu(s.size());
    std::vector<std::uint8_t> lungs(s.size()), lesion(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
        double v = body[i] ? spec.hu_body : spec.hu_air;
        if (right[i] || left[i])
            v = spec.hu_parenchyma;
        if (les_r[i] || les_l[i])
            v = spec.hu_lesion;
        if (spec.noise_sigma > 0)
            v += noise(rng);
        hu[i] = float(v);
        lungs[i] = right[i] | left[i];
        lesion[i] = les_r[i] | les_l[i];
    }

    Phantom p;
    p.volume = Volume(s, spec.spacing, std::move(hu));
    p.lungs = Mask(s, spec.spacing, std::move(lungs), MaskKind::Lungs);
    p.lung_right = Mask(s, spec.spacing, std::move(right), MaskKind::LungRight);
    p.lung_left = Mask(s, spec.spacing, std::move(left), MaskKind::LungLeft);
    p.lesion_right = Mask(s, spec.spacing, les_r, MaskKind::Lesion);
    p.lesion_left = Mask(s, spec.spacing, les_l, MaskKind::Lesion);
    p.lesion = Mask(s, spec.spacing, std::move(lesion), MaskKind::Lesion);
    p.fraction_right = double(n_right) / double(right_voxels.size());
    p.fraction_left = double(n_left) / double(left_voxels.size());
    p.severity = std::max(p.fraction_left, p.fraction_right);
    p.label = (n_right + n_left) > 0 ? 1 : 0;
    return p;
}

} // namespace triage
