#pragma once

#include "triage/volume.hpp"

#include <cstdint>
#include <vector>

namespace triage {

struct ThresholdConfig {
    double hu_min = -700.0;
    double hu_max = 300.0;
    double sigma = 4.0;            // voxels, isotropic
    double v_min_fraction = 0.001; // of the lung voxel count
    int connectivity = 26;
    double truncate = 4.0; // Gaussian kernel radius = ceil(truncate * sigma)

    void validate() const;
};

struct Components {
    Shape3 shape;
    std::vector<std::int32_t> labels; // 0 = background, 1..count in raster order of first voxel
    std::vector<std::size_t> sizes;   // sizes[k - 1] is the size of label k

    std::size_t count() const { return sizes.size(); }
};

// connectivity must be 6 or 26.
Components connected_components_3d(const Mask& m, int connectivity = 26);

// Separable Gaussian smoothing in voxel units with half-sample symmetric
// ("reflect") boundaries.
std::vector<double> gaussian_blur_3d(const std::vector<double>& field, const Shape3& shape, double sigma,
                                     double truncate = 4.0);
std::vector<double> gaussian_kernel_1d(double sigma, double truncate);
int reflect_index(int i, int n);

// Lesion mask: HU window inside the lungs, Gaussian re-binarization at > 0.5
// (kept inside the lungs), then removal of components smaller than
// v_min_fraction * |lungs|. v must be in original HU.
Mask threshold_segment(const Volume& v, const Mask& lungs, const ThresholdConfig& cfg = {});

// Step 1 alone, exposed for the monotonicity property.
Mask threshold_window(const Volume& v, const Mask& lungs, double hu_min, double hu_max);

} // namespace triage
