#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace triage {

// Axis order is always (slice, row, column).
struct Shape3 {
    int z = 0, y = 0, x = 0;

    std::size_t size() const { return std::size_t(z) * std::size_t(y) * std::size_t(x); }
    std::size_t index(int iz, int iy, int ix) const
    {
        return (std::size_t(iz) * std::size_t(y) + std::size_t(iy)) * std::size_t(x) + std::size_t(ix);
    }
    bool contains(int iz, int iy, int ix) const
    {
        return iz >= 0 && iz < z && iy >= 0 && iy < y && ix >= 0 && ix < x;
    }
    friend bool operator==(const Shape3&, const Shape3&) = default;
};

// Millimetres, (dz, dy, dx).
struct Spacing {
    double z = 1.0, y = 1.0, x = 1.0;

    double voxel_volume() const { return z * y * x; }
    friend bool operator==(const Spacing&, const Spacing&) = default;
};

constexpr float kMinHU = -1024.0f;
constexpr float kMaxHU = 3071.0f;

class Volume {
public:
    Volume() = default;
    // Throws InvalidArgument if dims < 1, spacing not positive/finite, or values non-finite.
    Volume(Shape3 shape, Spacing spacing, std::vector<float> data, std::string study_id = {});

    static Volume filled(Shape3 shape, Spacing spacing, float value, std::string study_id = {});

    const Shape3& shape() const { return shape_; }
    const Spacing& spacing() const { return spacing_; }
    const std::string& study_id() const { return study_id_; }
    const std::vector<float>& data() const { return data_; }

    float at(int z, int y, int x) const { return data_[shape_.index(z, y, x)]; }

    // True if any value falls outside [kMinHU, kMaxHU]. Such values are kept as loaded.
    bool out_of_range_flag() const { return out_of_range_; }

    Volume with_study_id(std::string id) const;

private:
    Shape3 shape_{};
    Spacing spacing_{};
    std::vector<float> data_;
    std::string study_id_;
    bool out_of_range_ = false;
};

enum class MaskKind { Lungs, LungLeft, LungRight, Lesion };

const char* to_string(MaskKind kind);
MaskKind mask_kind_from_string(const std::string& name);

class Mask {
public:
    Mask() = default;
    // Values must be exactly 0 or 1.
    Mask(Shape3 shape, Spacing spacing, std::vector<std::uint8_t> data, MaskKind kind);

    static Mask zeros(Shape3 shape, Spacing spacing, MaskKind kind);
    static Mask zeros_like(const Volume& v, MaskKind kind) { return zeros(v.shape(), v.spacing(), kind); }

    const Shape3& shape() const { return shape_; }
    const Spacing& spacing() const { return spacing_; }
    MaskKind kind() const { return kind_; }
    const std::vector<std::uint8_t>& data() const { return data_; }

    bool at(int z, int y, int x) const { return data_[shape_.index(z, y, x)] != 0; }
    std::size_t count() const;
    bool empty() const { return count() == 0; }

    Mask with_kind(MaskKind kind) const;

private:
    Shape3 shape_{};
    Spacing spacing_{};
    std::vector<std::uint8_t> data_;
    MaskKind kind_ = MaskKind::Lungs;
};

struct Range {
    int begin = 0, end = 0;
    int length() const { return end - begin; }
    friend bool operator==(const Range&, const Range&) = default;
};

// Half-open index ranges per axis.
struct BoundingBox {
    Range z, y, x;
    Shape3 shape() const { return {z.length(), y.length(), x.length()}; }
    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct BoundingBoxResult {
    BoundingBox box;
    bool empty_mask = false;
};

// Tightest box around the 1-voxels. An empty mask yields the full-volume box
// with empty_mask set (and a warning).
BoundingBoxResult bounding_box(const Mask& m);

Mask intersect(const Mask& a, const Mask& b, MaskKind kind);

} // namespace triage
