#pragma once

#include "triage/volume.hpp"

namespace triage {

enum class Interpolation { Nearest, Linear };

struct PreprocessConfig {
    double target_spacing_y = 2.0; // mm
    double target_spacing_x = 2.0; // mm
    // The [0,1] normalization window. Values outside are clipped.
    double hu_lo = -1024.0;
    double hu_hi = 300.0;
    Interpolation image_interpolation = Interpolation::Linear;
    Interpolation mask_interpolation = Interpolation::Nearest;

    void validate() const;
};

// In-plane resampling of every axial slice to the target (dy, dx); the slice
// count and dz are untouched. Throws DegenerateOutput if the output slice is
// smaller than 8x8.
Volume resample_axial(const Volume& v, const PreprocessConfig& cfg);
Mask resample_axial(const Mask& m, const PreprocessConfig& cfg);

// Maps a mask on a resampled grid back onto an arbitrary in-plane grid (nearest).
Mask resample_mask_to(const Mask& m, Shape3 shape, Spacing spacing);

// clip(hu, lo, hi) mapped affinely onto [0, 1].
Volume normalize_intensity(const Volume& v, const PreprocessConfig& cfg);

// Everything before lung segmentation: resample then normalize.
Volume preprocess(const Volume& v, const PreprocessConfig& cfg);

struct CropRecord {
    BoundingBox box;
    Shape3 original_shape;
    bool empty_mask = false;
};

struct CropResult {
    Volume volume;
    CropRecord record;
};

// Crops to the lung bounding box grown by margin_voxels on every side (clamped).
CropResult crop_to_lungs(const Volume& v, const Mask& lungs, int margin_voxels = 0);
Volume crop(const Volume& v, const BoundingBox& box);
Mask crop(const Mask& m, const BoundingBox& box);

// Places a cropped mask back into the original geometry, zeros outside the box.
Mask embed(const Mask& cropped, const CropRecord& record);

} // namespace triage
