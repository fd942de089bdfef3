#include "triage/volume.hpp"

#include "triage/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace triage {

namespace {

void check_geometry(const Shape3& shape, const Spacing& spacing, std::size_t data_size)
{
    if (shape.z < 1 || shape.y < 1 || shape.x < 1)
        throw Error(ErrorCode::InvalidArgument, "all dimensions must be >= 1");
    for (double s : {spacing.z, spacing.y, spacing.x})
        if (!(s > 0.0) || !std::isfinite(s))
            throw Error(ErrorCode::InvalidArgument, "spacing must be positive and finite");
    if (data_size != shape.size())
        throw Error(ErrorCode::InvalidArgument, "data size does not match shape");
}

} // namespace

Volume::Volume(Shape3 shape, Spacing spacing, std::vector<float> data, std::string study_id)
    : shape_(shape), spacing_(spacing), data_(std::move(data)), study_id_(std::move(study_id))
{
    check_geometry(shape_, spacing_, data_.size());
    for (float v : data_) {
        if (!std::isfinite(v))
            throw Error(ErrorCode::InvalidArgument, "non-finite HU value");
        if (v < kMinHU || v > kMaxHU)
            out_of_range_ = true;
    }
}

Volume Volume::filled(Shape3 shape, Spacing spacing, float value, std::string study_id)
{
    return Volume(shape, spacing, std::vector<float>(shape.size(), value), std::move(study_id));
}

Volume Volume::with_study_id(std::string id) const
{
    Volume copy = *this;
    copy.study_id_ = std::move(id);
    return copy;
}

const char* to_string(MaskKind kind)
{
    switch (kind) {
    case MaskKind::Lungs: return "LUNGS";
    case MaskKind::LungLeft: return "LUNG_LEFT";
    case MaskKind::LungRight: return "LUNG_RIGHT";
    case MaskKind::Lesion: return "LESION";
    }
    return "LUNGS";
}

MaskKind mask_kind_from_string(const std::string& name)
{
    if (name == "LUNGS") return MaskKind::Lungs;
    if (name == "LUNG_LEFT") return MaskKind::LungLeft;
    if (name == "LUNG_RIGHT") return MaskKind::LungRight;
    if (name == "LESION") return MaskKind::Lesion;
    throw Error(ErrorCode::InvalidArgument, "unknown mask kind '" + name + "'");
}

Mask::Mask(Shape3 shape, Spacing spacing, std::vector<std::uint8_t> data, MaskKind kind)
    : shape_(shape), spacing_(spacing), data_(std::move(data)), kind_(kind)
{
    check_geometry(shape_, spacing_, data_.size());
    if (std::any_of(data_.begin(), data_.end(), [](std::uint8_t v) { return v > 1; }))
        throw Error(ErrorCode::InvalidArgument, "mask values must be 0 or 1");
}

Mask Mask::zeros(Shape3 shape, Spacing spacing, MaskKind kind)
{
    return Mask(shape, spacing, std::vector<std::uint8_t>(shape.size(), 0), kind);
}

std::size_t Mask::count() const
{
    return std::accumulate(data_.begin(), data_.end(), std::size_t{0});
}

Mask Mask::with_kind(MaskKind kind) const
{
    Mask copy = *this;
    copy.kind_ = kind;
    return copy;
}

BoundingBoxResult bounding_box(const Mask& m)
{
    const Shape3& s = m.shape();
    int z0 = s.z, z1 = -1, y0 = s.y, y1 = -1, x0 = s.x, x1 = -1;
    for (int z = 0; z < s.z; ++z)
        for (int y = 0; y < s.y; ++y) {
            const std::uint8_t* row = m.data().data() + s.index(z, y, 0);
            for (int x = 0; x < s.x; ++x) {
                if (!row[x])
                    continue;
                z0 = std::min(z0, z); z1 = std::max(z1, z);
                y0 = std::min(y0, y); y1 = std::max(y1, y);
                x0 = std::min(x0, x); x1 = std::max(x1, x);
            }
        }
    if (z1 < 0) {
        warn("bounding_box: empty mask, using the full volume");
        return {{{0, s.z}, {0, s.y}, {0, s.x}}, true};
    }
    return {{{z0, z1 + 1}, {y0, y1 + 1}, {x0, x1 + 1}}, false};
}

Mask intersect(const Mask& a, const Mask& b, MaskKind kind)
{
    if (a.shape() != b.shape())
        throw Error(ErrorCode::Misalignment, "mask shapes differ");
    std::vector<std::uint8_t> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = a.data()[i] & b.data()[i];
    return Mask(a.shape(), a.spacing(), std::move(out), kind);
}

} // namespace triage
