#include "vitc/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <string>

#include "vitc/errors.hpp"

namespace vitc::nifti {

namespace {

#pragma pack(push, 1)
struct Header {
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
    float scl_slope, scl_inter;
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
static_assert(sizeof(Header) == 348, "NIfTI-1 header must be 348 bytes");

std::size_t bytes_per_voxel(std::int16_t datatype) {
    switch (datatype) {
        case 2: return 1;
        case 4: return 2;
        case 512: return 2;
        case 8: return 4;
        case 16: return 4;
        case 64: return 8;
        default: throw DataError("NIfTI datatype " + std::to_string(datatype) + " is not supported");
    }
}

template <class T>
T load(const unsigned char* p) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    return v;
}

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    gzFile f = gzopen(path.string().c_str(), "rb");  // transparently reads uncompressed files too
    if (!f) throw DataError("cannot open '" + path.string() + "'");
    std::vector<unsigned char> buf;
    unsigned char chunk[1 << 16];
    int n = 0;
    while ((n = gzread(f, chunk, sizeof(chunk))) > 0) buf.insert(buf.end(), chunk, chunk + n);
    const bool failed = n < 0;
    gzclose(f);
    if (failed) throw DataError("failed to decompress '" + path.string() + "'");
    return buf;
}

}  // namespace

Volume read(const std::filesystem::path& path) {
    const std::vector<unsigned char> buf = read_all(path);
    if (buf.size() < sizeof(Header)) throw DataError("'" + path.string() + "' is too small to be NIfTI");
    Header h;
    std::memcpy(&h, buf.data(), sizeof(Header));
    if (h.sizeof_hdr != 348) throw DataError("'" + path.string() + "' is not a little-endian NIfTI-1 file");
    if (std::strncmp(h.magic, "n+1", 3) != 0) throw DataError("'" + path.string() + "' is not a single-file NIfTI");
    if (h.dim[0] < 2 || h.dim[0] > 4 || (h.dim[0] == 4 && h.dim[4] > 1))
        throw DataError("'" + path.string() + "' must hold a single 2D or 3D volume");
    Volume vol;
    vol.nx = h.dim[1];
    vol.ny = h.dim[2];
    vol.nz = h.dim[0] >= 3 ? h.dim[3] : 1;
    vol.spacing = {h.pixdim[1], h.pixdim[2], h.dim[0] >= 3 ? h.pixdim[3] : 1.0f};
    const std::size_t count = static_cast<std::size_t>(vol.nx) * vol.ny * vol.nz;
    const std::size_t bpv = bytes_per_voxel(h.datatype);
    const auto offset = static_cast<std::size_t>(h.vox_offset);
    if (buf.size() < offset + count * bpv) throw DataError("'" + path.string() + "' is truncated");
    vol.data.resize(count);
    const unsigned char* p = buf.data() + offset;
    for (std::size_t i = 0; i < count; ++i, p += bpv) {
        switch (h.datatype) {
            case 2: vol.data[i] = *p; break;
            case 4: vol.data[i] = load<std::int16_t>(p); break;
            case 512: vol.data[i] = load<std::uint16_t>(p); break;
            case 8: vol.data[i] = load<std::int32_t>(p); break;
            case 16: vol.data[i] = load<float>(p); break;
            case 64: vol.data[i] = load<double>(p); break;
        }
    }
    if (h.scl_slope != 0.0f && std::isfinite(h.scl_slope) && !(h.scl_slope == 1.0f && h.scl_inter == 0.0f))
        for (double& v : vol.data) v = v * h.scl_slope + h.scl_inter;
    return vol;
}

void write(const std::filesystem::path& path, const Volume& vol, DataType type) {
    const std::size_t count = static_cast<std::size_t>(vol.nx) * vol.ny * vol.nz;
    if (vol.data.size() != count) throw ShapeError("nifti::write: data size does not match dimensions");
    Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    h.dim[1] = static_cast<std::int16_t>(vol.nx);
    h.dim[2] = static_cast<std::int16_t>(vol.ny);
    h.dim[3] = static_cast<std::int16_t>(vol.nz);
    for (int i = 4; i < 8; ++i) h.dim[i] = 1;
    h.datatype = static_cast<std::int16_t>(type);
    h.bitpix = static_cast<std::int16_t>(bytes_per_voxel(h.datatype) * 8);
    h.pixdim[0] = 1.0f;
    for (int i = 0; i < 3; ++i) h.pixdim[i + 1] = static_cast<float>(vol.spacing[static_cast<std::size_t>(i)]);
    h.vox_offset = 352.0f;
    h.xyzt_units = 2;  // millimetres
    std::memcpy(h.magic, "n+1", 4);

    std::vector<unsigned char> buf(352 + count * bytes_per_voxel(h.datatype), 0);
    std::memcpy(buf.data(), &h, sizeof(Header));
    unsigned char* p = buf.data() + 352;
    for (std::size_t i = 0; i < count; ++i) {
        const double v = vol.data[i];
        switch (type) {
            case DataType::uint8: *p++ = static_cast<unsigned char>(v); break;
            case DataType::int16: {
                const auto x = static_cast<std::int16_t>(v);
                std::memcpy(p, &x, 2);
                p += 2;
                break;
            }
            case DataType::uint16: {
                const auto x = static_cast<std::uint16_t>(v);
                std::memcpy(p, &x, 2);
                p += 2;
                break;
            }
            case DataType::int32: {
                const auto x = static_cast<std::int32_t>(v);
                std::memcpy(p, &x, 4);
                p += 4;
                break;
            }
            case DataType::float32: {
                const auto x = static_cast<float>(v);
                std::memcpy(p, &x, 4);
                p += 4;
                break;
            }
            case DataType::float64:
                std::memcpy(p, &v, 8);
                p += 8;
                break;
        }
    }
    const bool gz = path.extension() == ".gz";
    // mtime-free gzip ("wb6" via gzopen writes no timestamp) keeps reruns byte-identical.
    gzFile f = gzopen(path.string().c_str(), gz ? "wb6" : "wbT");
    if (!f) throw DataError("cannot write '" + path.string() + "'");
    const int wrote = gzwrite(f, buf.data(), static_cast<unsigned>(buf.size()));
    const int rc = gzclose(f);
    if (wrote != static_cast<int>(buf.size()) || rc != Z_OK) throw DataError("failed writing '" + path.string() + "'");
}

}  // namespace vitc::nifti
