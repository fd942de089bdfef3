#pragma once

#include "triage/volume.hpp"

#include <cstdint>

namespace triage {

// Axis-aligned ellipsoid in voxel coordinates.
struct Ellipsoid {
    double cz = 0, cy = 0, cx = 0;
    double rz = 1, ry = 1, rx = 1;

    bool contains(double z, double y, double x) const;
};

// Synthetic chest CT: air outside an elliptic body cylinder, two ellipsoidal
// lungs, lesion blobs inside each lung grown to an exact voxel budget.
struct PhantomSpec {
    Shape3 shape{16, 48, 48};
    Spacing spacing{5.0, 2.0, 2.0};
    Ellipsoid body;      // only the (y, x) part is used; spans every slice
    Ellipsoid lung_right; // smaller column coordinates
    Ellipsoid lung_left;
    double lesion_fraction_right = 0.0;
    double lesion_fraction_left = 0.0;
    int max_blobs = 3;
    double hu_air = -1000.0;
    double hu_parenchyma = -850.0;
    double hu_lesion = -400.0;
    double hu_body = 0.0;
    double noise_sigma = 20.0;
    std::uint64_t seed = 0;

    // Throws InvalidArgument for fractions outside [0, 1], shapes below 16^3
    // or a non-positive noise/blob setting.
    void validate() const;
};

// Centered, symmetric geometry scaled to the shape.
PhantomSpec default_phantom_spec(Shape3 shape = {16, 48, 48}, Spacing spacing = {5.0, 2.0, 2.0});

// Geometry jittered by the seed. Lesioned specs draw per-lung fractions in
// [0.02, 0.6] (one lung may stay clear); healthy ones have none.
PhantomSpec random_phantom_spec(std::uint64_t seed, bool lesioned, Shape3 shape = {16, 48, 48},
                                Spacing spacing = {5.0, 2.0, 2.0});

struct Phantom {
    Volume volume;
    Mask lungs, lung_left, lung_right;
    Mask lesion, lesion_left, lesion_right;
    double fraction_left = 0.0, fraction_right = 0.0;
    double severity = 0.0;
    int label = 0;
};

// Per-lung lesion fractions are round(f * N) / N for N lung voxels. Throws
// InfeasibleSpec if that misses a target by more than 0.01, if a nonzero
// target rounds to no voxels, or if the lungs leave the body, overlap or touch.
Phantom generate_phantom(const PhantomSpec& spec);

} // namespace triage
