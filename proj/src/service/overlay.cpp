#include "triage/service/overlay.hpp"

#include "triage/error.hpp"

#include <algorithm>
#include <cmath>

namespace triage::service {

const char* to_string(OverlayStyle s) { return s == OverlayStyle::Fill ? "fill" : "contour"; }

OverlayStyle overlay_style_from_string(const std::string& s)
{
    if (s == "fill")
        return OverlayStyle::Fill;
    if (s == "contour")
        return OverlayStyle::Contour;
    throw Error(ErrorCode::InvalidArgument, "overlay style must be fill or contour, got '" + s + "'");
}

std::array<std::uint8_t, 3> severity_color(double severity)
{
    const double s = std::clamp(severity, 0.0, 1.0);
    const double h = 120.0 * (1.0 - s) / 60.0; // sector in [0, 2]
    // hsv(h, 1, 1) restricted to the red..green arc
    double r, g;
    if (h <= 1.0) {
        r = 1.0;
        g = h;
    } else {
        r = 2.0 - h;
        g = 1.0;
    }
    return {std::uint8_t(std::lround(255 * r)), std::uint8_t(std::lround(255 * g)), 0};
}

RgbImage render_overlay(const Volume& v, const Mask& lesion, int slice, double severity, OverlayStyle style,
                        const OverlayConfig& cfg)
{
    const Shape3 s = v.shape();
    if (lesion.shape() != s)
        throw Error(ErrorCode::ShapeMismatch, "overlay mask does not match the volume");
    if (slice < 0 || slice >= s.z)
        throw Error(ErrorCode::SliceOutOfRange,
                    "slice " + std::to_string(slice) + " outside [0, " + std::to_string(s.z) + ")");
    RgbImage img;
    img.width = s.x;
    img.height = s.y;
    img.rgb.resize(std::size_t(s.x) * std::size_t(s.y) * 3);
    const auto tint = severity_color(severity);
    const double span = cfg.window_hi - cfg.window_lo;

    auto on = [&](int y, int x) { return y >= 0 && y < s.y && x >= 0 && x < s.x && lesion.at(slice, y, x); };
    for (int y = 0; y < s.y; ++y) {
        for (int x = 0; x < s.x; ++x) {
            const double t = std::clamp((double(v.at(slice, y, x)) - cfg.window_lo) / span, 0.0, 1.0);
            const double g = std::round(255.0 * t);
            bool paint = on(y, x);
            if (paint && style == OverlayStyle::Contour)
                paint = !(on(y - 1, x) && on(y + 1, x) && on(y, x - 1) && on(y, x + 1));
            std::uint8_t* px = &img.rgb[(std::size_t(y) * std::size_t(s.x) + std::size_t(x)) * 3];
            for (int c = 0; c < 3; ++c) {
                const double val = paint ? (1.0 - cfg.alpha) * g + cfg.alpha * tint[c] : g;
                px[c] = std::uint8_t(std::lround(val));
            }
        }
    }
    return img;
}

namespace {

void put_u16(std::string& b, std::uint16_t v)
{
    b.push_back(char(v & 0xff));
    b.push_back(char(v >> 8));
}

void put_u32(std::string& b, std::uint32_t v)
{
    for (int i = 0; i < 4; ++i)
        b.push_back(char((v >> (8 * i)) & 0xff));
}

} // namespace

std::string encode_bmp(const RgbImage& img)
{
    const std::uint32_t row = (std::uint32_t(img.width) * 3 + 3) & ~3u;
    const std::uint32_t data = row * std::uint32_t(img.height);
    std::string b;
    b.reserve(54 + data);
    b += "BM";
    put_u32(b, 54 + data);
    put_u32(b, 0);
    put_u32(b, 54);
    put_u32(b, 40);
    put_u32(b, std::uint32_t(img.width));
    put_u32(b, std::uint32_t(img.height)); // positive: bottom-up rows
    put_u16(b, 1);
    put_u16(b, 24);
    put_u32(b, 0); // BI_RGB
    put_u32(b, data);
    put_u32(b, 2835); // 72 dpi
    put_u32(b, 2835);
    put_u32(b, 0);
    put_u32(b, 0);
    for (int y = img.height - 1; y >= 0; --y) {
        for (int x = 0; x < img.width; ++x) {
            const auto p = img.at(y, x);
            b.push_back(char(p[2]));
            b.push_back(char(p[1]));
            b.push_back(char(p[0]));
        }
        for (std::uint32_t pad = std::uint32_t(img.width) * 3; pad < row; ++pad)
            b.push_back(0);
    }
    return b;
}

} // namespace triage::service
