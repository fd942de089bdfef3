#pragma once

#include "triage/volume.hpp"

#include <filesystem>

namespace triage {

// Two containers are supported, picked by file extension:
//
//  *.nii        NIfTI-1 single file. dim[1..3] map to (x, y, z), pixdim[1..3]
//               to (dx, dy, dz); scl_slope/scl_inter applied when slope != 0.
//  *.raw        little-endian array with a sidecar text header at "<path>.hdr",
//               one value per line:
//                   3            number of dimensions
//                   nz ny nx     one per line
//                   dz dy dx     one per line, millimetres
//                   [dtype]      float32 (default) or uint8
//                   [slope]      optional rescale slope
//                   [intercept]  optional rescale intercept
//
// Errors: UnreadableFile, MissingSpacing, NonVolumetric.
Volume load_volume(const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path, MaskKind kind);

// Volumes are written as float32, masks as uint8. Throws IOFailure.
void save_volume(const Volume& v, const std::filesystem::path& path);
void save_mask(const Mask& m, const std::filesystem::path& path);

std::filesystem::path raw_header_path(const std::filesystem::path& raw_path);

} // namespace triage
