#pragma once

#include "triage/volume.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace triage::service {

struct RgbImage {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> rgb; // row-major, top row first, 3 bytes per pixel

    std::array<std::uint8_t, 3> at(int row, int col) const
    {
        const std::size_t i = (std::size_t(row) * std::size_t(width) + std::size_t(col)) * 3;
        return {rgb[i], rgb[i + 1], rgb[i + 2]};
    }
};

enum class OverlayStyle { Fill, Contour };
const char* to_string(OverlayStyle s);
OverlayStyle overlay_style_from_string(const std::string& s);

struct OverlayConfig {
    double window_lo = -1000.0;
    double window_hi = 300.0;
    double alpha = 0.5;
};

// Hue 120 deg (green) at severity 0 down to 0 deg (red) at 1, full saturation.
std::array<std::uint8_t, 3> severity_color(double severity);

// Axial slice k (rows = y, columns = x) in the gray display window, with the
// lesion pixels (Fill) or their 4-connected in-slice boundary (Contour)
// blended toward severity_color. Every tinted pixel has unequal channels, so
// the tinted set is recoverable from the image. Throws SliceOutOfRange and
// ShapeMismatch.
RgbImage render_overlay(const Volume& v, const Mask& lesion, int slice, double severity,
                        OverlayStyle style = OverlayStyle::Fill, const OverlayConfig& cfg = {});

// Uncompressed 24-bit BMP.
std::string encode_bmp(const RgbImage& img);

} // namespace triage::service
