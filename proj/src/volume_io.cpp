#include "triage/volume_io.hpp"

#include "triage/error.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace triage {

namespace fs = std::filesystem;

namespace {

static_assert(std::endian::native == std::endian::little, "raw and NIfTI writers assume a little-endian host");

enum class Format { Nifti, Raw };

Format format_of(const fs::path& path)
{
    const std::string ext = path.extension().string();
    if (ext == ".nii")
        return Format::Nifti;
    if (ext == ".raw")
        return Format::Raw;
    throw Error(ErrorCode::UnreadableFile, "unsupported extension '" + ext + "' for " + path.string());
}

std::vector<char> read_all(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw Error(ErrorCode::UnreadableFile, "cannot open " + path.string());
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return bytes;
}

void write_all(const fs::path& path, const void* data, std::size_t size)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw Error(ErrorCode::IOFailure, "cannot open " + path.string() + " for writing");
    out.write(static_cast<const char*>(data), std::streamsize(size));
    if (!out)
        throw Error(ErrorCode::IOFailure, "short write to " + path.string());
}

// Decoded container: values as double before any mask/volume validation.
struct RawImage {
    Shape3 shape;
    Spacing spacing;
    std::vector<double> values;
};

// ---------------------------------------------------------------- raw

struct RawHeader {
    Shape3 shape;
    Spacing spacing;
    std::string dtype = "float32";
    double slope = 1.0, intercept = 0.0;
};

RawHeader read_raw_header(const fs::path& header_path)
{
    std::ifstream in(header_path);
    if (!in)
        throw Error(ErrorCode::UnreadableFile, "missing raw sidecar header " + header_path.string());
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        line.erase(std::remove_if(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); }),
                   line.end());
        if (!line.empty())
            lines.push_back(line);
    }
    auto number = [&](std::size_t i) {
        try {
            std::size_t used = 0;
            double v = std::stod(lines.at(i), &used);
            if (used != lines[i].size())
                throw std::invalid_argument("trailing characters");
            return v;
        } catch (const std::exception&) {
            throw Error(ErrorCode::UnreadableFile, "bad value on line " + std::to_string(i + 1) + " of " +
                                                       header_path.string());
        }
    };
    if (lines.empty())
        throw Error(ErrorCode::UnreadableFile, "empty raw header " + header_path.string());
    const double ndim = number(0);
    if (ndim < 3)
        throw Error(ErrorCode::NonVolumetric, header_path.string() + " declares fewer than 3 dimensions");
    if (ndim != 3)
        throw Error(ErrorCode::UnreadableFile, header_path.string() + " declares more than 3 dimensions");
    if (lines.size() < 4)
        throw Error(ErrorCode::UnreadableFile, "truncated shape in " + header_path.string());
    RawHeader h;
    auto dim = [&](std::size_t i) {
        double v = number(i);
        if (v < 1 || v != std::floor(v) || v > 1e6)
            throw Error(ErrorCode::UnreadableFile, "invalid dimension in " + header_path.string());
        return int(v);
    };
    h.shape = {dim(1), dim(2), dim(3)};
    if (lines.size() < 7)
        throw Error(ErrorCode::MissingSpacing, header_path.string() + " has no spacing lines");
    h.spacing = {number(4), number(5), number(6)};
    for (double s : {h.spacing.z, h.spacing.y, h.spacing.x})
        if (!(s > 0.0) || !std::isfinite(s))
            throw Error(ErrorCode::MissingSpacing, "non-positive spacing in " + header_path.string());
    std::size_t next = 7;
    if (lines.size() > next && (lines[next] == "float32" || lines[next] == "uint8"))
        h.dtype = lines[next++];
    if (lines.size() > next)
        h.slope = number(next++);
    if (lines.size() > next)
        h.intercept = number(next++);
    return h;
}

RawImage read_raw(const fs::path& path)
{
    const RawHeader h = read_raw_header(raw_header_path(path));
    const std::vector<char> bytes = read_all(path);
    const std::size_t n = h.shape.size();
    const std::size_t elem = h.dtype == "uint8" ? 1 : 4;
    if (bytes.size() != n * elem)
        throw Error(ErrorCode::UnreadableFile, "raw payload size mismatch in " + path.string());
    RawImage img{h.shape, h.spacing, std::vector<double>(n)};
    for (std::size_t i = 0; i < n; ++i) {
        double stored;
        if (elem == 1) {
            stored = static_cast<unsigned char>(bytes[i]);
        } else {
            float f;
            std::memcpy(&f, bytes.data() + 4 * i, 4);
            stored = f;
        }
        img.values[i] = stored * h.slope + h.intercept;
    }
    return img;
}

void write_raw(const fs::path& path, const Shape3& shape, const Spacing& spacing, const void* data,
               std::size_t bytes, const char* dtype)
{
    write_all(path, data, bytes);
    std::ostringstream hdr;
    hdr.precision(17);
    hdr << 3 << '\n' << shape.z << '\n' << shape.y << '\n' << shape.x << '\n';
    hdr << spacing.z << '\n' << spacing.y << '\n' << spacing.x << '\n' << dtype << '\n';
    const std::string text = hdr.str();
    write_all(raw_header_path(path), text.data(), text.size());
}

// ---------------------------------------------------------------- NIfTI-1

#pragma pack(push, 1)
struct NiftiHeader {
    std::int32_t sizeof_hdr;
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code, sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4], srow_y[4], srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(NiftiHeader) == 348);

enum NiftiType : std::int16_t {
    DT_UINT8 = 2, DT_INT16 = 4, DT_INT32 = 8, DT_FLOAT32 = 16, DT_FLOAT64 = 64,
    DT_INT8 = 256, DT_UINT16 = 512, DT_UINT32 = 768,
};

template <typename T>
T byteswap_value(T v)
{
    char* p = reinterpret_cast<char*>(&v);
    std::reverse(p, p + sizeof(T));
    return v;
}

void byteswap_header(NiftiHeader& h)
{
    h.sizeof_hdr = byteswap_value(h.sizeof_hdr);
    for (auto& d : h.dim) d = byteswap_value(d);
    for (auto& p : h.pixdim) p = byteswap_value(p);
    h.datatype = byteswap_value(h.datatype);
    h.bitpix = byteswap_value(h.bitpix);
    h.vox_offset = byteswap_value(h.vox_offset);
    h.scl_slope = byteswap_value(h.scl_slope);
    h.scl_inter = byteswap_value(h.scl_inter);
}

template <typename T>
double read_elem(const char* p, bool swap)
{
    T v;
    std::memcpy(&v, p, sizeof(T));
    if (swap)
        v = byteswap_value(v);
    return double(v);
}

RawImage read_nifti(const fs::path& path)
{
    const std::vector<char> bytes = read_all(path);
    if (bytes.size() < sizeof(NiftiHeader))
        throw Error(ErrorCode::UnreadableFile, "truncated NIfTI header in " + path.string());
    NiftiHeader h;
    std::memcpy(&h, bytes.data(), sizeof h);
    bool swap = false;
    if (h.sizeof_hdr != 348) {
        byteswap_header(h);
        swap = true;
        if (h.sizeof_hdr != 348)
            throw Error(ErrorCode::UnreadableFile, "not a NIfTI-1 file: " + path.string());
    }
    if (std::memcmp(h.magic, "n+1", 4) != 0)
        throw Error(ErrorCode::UnreadableFile, "only single-file NIfTI-1 (n+1) is supported: " + path.string());
    const int ndim = h.dim[0];
    if (ndim < 3)
        throw Error(ErrorCode::NonVolumetric, path.string() + " has fewer than 3 dimensions");
    for (int d = 4; d <= std::min(ndim, 7); ++d)
        if (h.dim[d] > 1)
            throw Error(ErrorCode::UnreadableFile, "multi-volume NIfTI not supported: " + path.string());
    const Shape3 shape{h.dim[3], h.dim[2], h.dim[1]};
    if (shape.z < 1 || shape.y < 1 || shape.x < 1)
        throw Error(ErrorCode::UnreadableFile, "invalid NIfTI dimensions in " + path.string());
    const Spacing spacing{h.pixdim[3], h.pixdim[2], h.pixdim[1]};
    for (double s : {spacing.z, spacing.y, spacing.x})
        if (!(s > 0.0) || !std::isfinite(s))
            throw Error(ErrorCode::MissingSpacing, path.string() + " has no voxel spacing");

    int elem = 0;
    double (*reader)(const char*, bool) = nullptr;
    switch (h.datatype) {
    case DT_UINT8: elem = 1; reader = read_elem<std::uint8_t>; break;
    case DT_INT8: elem = 1; reader = read_elem<std::int8_t>; break;
    case DT_INT16: elem = 2; reader = read_elem<std::int16_t>; break;
    case DT_UINT16: elem = 2; reader = read_elem<std::uint16_t>; break;
    case DT_INT32: elem = 4; reader = read_elem<std::int32_t>; break;
    case DT_UINT32: elem = 4; reader = read_elem<std::uint32_t>; break;
    case DT_FLOAT32: elem = 4; reader = read_elem<float>; break;
    case DT_FLOAT64: elem = 8; reader = read_elem<double>; break;
    default:
        throw Error(ErrorCode::UnreadableFile, "unsupported NIfTI datatype " + std::to_string(h.datatype));
    }
    const std::size_t offset = std::size_t(std::max(h.vox_offset, 352.0f));
    const std::size_t n = shape.size();
    if (bytes.size() < offset + n * std::size_t(elem))
        throw Error(ErrorCode::UnreadableFile, "truncated NIfTI payload in " + path.string());
    const bool rescale = h.scl_slope != 0.0f && std::isfinite(h.scl_slope);
    const double slope = rescale ? h.scl_slope : 1.0;
    const double inter = rescale && std::isfinite(h.scl_inter) ? h.scl_inter : 0.0;
    RawImage img{shape, spacing, std::vector<double>(n)};
    const char* payload = bytes.data() + offset;
    for (std::size_t i = 0; i < n; ++i)
        img.values[i] = reader(payload + i * std::size_t(elem), swap) * slope + inter;
    return img;
}

void write_nifti(const fs::path& path, const Shape3& shape, const Spacing& spacing, const void* data,
                 std::size_t bytes, std::int16_t datatype, std::int16_t bitpix)
{
    NiftiHeader h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = std::int16_t(shape.x);
    h.dim[2] = std::int16_t(shape.y);
    h.dim[3] = std::int16_t(shape.z);
    for (int d = 4; d < 8; ++d) h.dim[d] = 1;
    h.datatype = datatype;
    h.bitpix = bitpix;
    h.pixdim[0] = 1.0f;
    h.pixdim[1] = float(spacing.x);
    h.pixdim[2] = float(spacing.y);
    h.pixdim[3] = float(spacing.z);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2; // mm
    h.sform_code = 1;
    h.srow_x[0] = float(spacing.x);
    h.srow_y[1] = float(spacing.y);
    h.srow_z[2] = float(spacing.z);
    std::memcpy(h.magic, "n+1", 4);
    if (shape.x > 32767 || shape.y > 32767 || shape.z > 32767)
        throw Error(ErrorCode::IOFailure, "dimension too large for NIfTI-1");

    std::vector<char> out(352 + bytes, 0);
    std::memcpy(out.data(), &h, sizeof h);
    std::memcpy(out.data() + 352, data, bytes);
    write_all(path, out.data(), out.size());
}

RawImage read_any(const fs::path& path)
{
    if (!fs::exists(path))
        throw Error(ErrorCode::UnreadableFile, "no such file " + path.string());
    return format_of(path) == Format::Nifti ? read_nifti(path) : read_raw(path);
}

} // namespace

fs::path raw_header_path(const fs::path& raw_path)
{
    fs::path p = raw_path;
    p += ".hdr";
    return p;
}

Volume load_volume(const fs::path& path)
{
    RawImage img = read_any(path);
    std::vector<float> data(img.values.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(img.values[i]))
            throw Error(ErrorCode::UnreadableFile, "non-finite voxel value in " + path.string());
        data[i] = float(img.values[i]);
    }
    return Volume(img.shape, img.spacing, std::move(data), path.stem().string());
}

Mask load_mask(const fs::path& path, MaskKind kind)
{
    RawImage img = read_any(path);
    std::vector<std::uint8_t> data(img.values.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double v = img.values[i];
        if (v != 0.0 && v != 1.0)
            throw Error(ErrorCode::UnreadableFile, "mask value outside {0,1} in " + path.string());
        data[i] = std::uint8_t(v);
    }
    return Mask(img.shape, img.spacing, std::move(data), kind);
}

void save_volume(const Volume& v, const fs::path& path)
{
    const auto& d = v.data();
    if (format_of(path) == Format::Nifti)
        write_nifti(path, v.shape(), v.spacing(), d.data(), d.size() * sizeof(float), DT_FLOAT32, 32);
    else
        write_raw(path, v.shape(), v.spacing(), d.data(), d.size() * sizeof(float), "float32");
}

void save_mask(const Mask& m, const fs::path& path)
{
    const auto& d = m.data();
    if (format_of(path) == Format::Nifti)
        write_nifti(path, m.shape(), m.spacing(), d.data(), d.size(), DT_UINT8, 8);
    else
        write_raw(path, m.shape(), m.spacing(), d.data(), d.size(), "uint8");
}

} // namespace triage
