#pragma once

#include "triage/nn/network.hpp"
#include "triage/volume.hpp"

namespace triage {

// Per-voxel sigmoid probabilities of a segmentation network, thresholded at
// 0.5. v must already be resampled and normalized. Throws ShapeMismatch if the
// network has no segmentation head.
Mask segment_lungs(const Volume& v, nn::Network<float>& net);

struct LungSplit {
    Mask left;
    Mask right; // cluster with the smaller mean column coordinate
    double volume_left_mm3 = 0.0;
    double volume_right_mm3 = 0.0;
    bool degenerate = false; // one side has < 1% of the lung voxels
    int iterations = 0;
};

struct KMeansConfig {
    int max_iterations = 100;
    double tolerance_mm = 1e-6;
    double degenerate_fraction = 0.01;
};

// k = 2 Lloyd iterations over physical voxel coordinates. Centroids start at
// the centroids of the two halves of the mask's column extent, so the result
// is fully determined by the mask. Throws EmptyMask.
LungSplit split_lungs(const Mask& lungs, const KMeansConfig& cfg = {});

} // namespace triage
