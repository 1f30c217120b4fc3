#include "econet/volio.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include <json.hpp>

namespace econet {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");

namespace {

constexpr int kNiftiHeaderSize = 348;
constexpr int kNiftiVoxOffset = 352;

enum NiftiType : std::int16_t {
    DT_UINT8 = 2,
    DT_INT16 = 4,
    DT_INT32 = 8,
    DT_FLOAT32 = 16,
    DT_FLOAT64 = 64,
};

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed: " + path.string());
    return bytes;
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot create " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed: " + path.string());
}

template <typename T>
T read_le(const std::uint8_t* p, bool swap) {
    T v;
    std::memcpy(&v, p, sizeof(T));
    if (swap) {
        auto* b = reinterpret_cast<std::uint8_t*>(&v);
        std::reverse(b, b + sizeof(T));
    }
    return v;
}

template <typename T>
void write_le(std::vector<std::uint8_t>& buf, std::size_t offset, T v) {
    std::memcpy(buf.data() + offset, &v, sizeof(T));
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

void check_finite(const Volume3D& v) {
    for (float x : v.values()) {
        if (!std::isfinite(x)) throw FormatError("volume contains non-finite intensities");
    }
}

template <typename T>
std::vector<std::uint8_t> encode_nifti_payload(const Dims& dims, const Spacing& spacing, std::int16_t datatype,
                                               std::span<const T> values) {
    std::vector<std::uint8_t> buf(kNiftiVoxOffset + values.size() * sizeof(T), 0);
    write_le<std::int32_t>(buf, 0, kNiftiHeaderSize);
    const std::int16_t dim[8] = {3, static_cast<std::int16_t>(dims.nx), static_cast<std::int16_t>(dims.ny),
                                 static_cast<std::int16_t>(dims.nz), 1, 1, 1, 1};
    for (int i = 0; i < 8; ++i) write_le<std::int16_t>(buf, 40 + 2 * i, dim[i]);
    write_le<std::int16_t>(buf, 70, datatype);
    write_le<std::int16_t>(buf, 72, static_cast<std::int16_t>(8 * sizeof(T)));
    const float pixdim[8] = {1.0f, static_cast<float>(spacing[0]), static_cast<float>(spacing[1]),
                             static_cast<float>(spacing[2]), 1.0f, 1.0f, 1.0f, 1.0f};
    for (int i = 0; i < 8; ++i) write_le<float>(buf, 76 + 4 * i, pixdim[i]);
    write_le<float>(buf, 108, static_cast<float>(kNiftiVoxOffset));
    write_le<float>(buf, 112, 1.0f);  // scl_slope
    write_le<float>(buf, 116, 0.0f);  // scl_inter
    buf[123] = 2;                      // xyzt_units: mm
    // sform: diagonal spacing
    write_le<std::int16_t>(buf, 254, 1);
    write_le<float>(buf, 280, static_cast<float>(spacing[0]));
    write_le<float>(buf, 296 + 4, static_cast<float>(spacing[1]));
    write_le<float>(buf, 312 + 8, static_cast<float>(spacing[2]));
    std::memcpy(buf.data() + 344, "n+1\0", 4);
    std::memcpy(buf.data() + kNiftiVoxOffset, values.data(), values.size() * sizeof(T));
    return buf;
}

}  // namespace

VolumeFormat format_from_path(const fs::path& path) {
    const auto name = path.filename().string();
    if (ends_with(name, ".nii.gz")) return VolumeFormat::nifti_gz;
    if (ends_with(name, ".nii")) return VolumeFormat::nifti;
    if (ends_with(name, ".raw")) return VolumeFormat::raw;
    throw FormatError("unrecognized volume extension: " + name);
}

fs::path raw_sidecar_path(const fs::path& raw_path) {
    auto p = raw_path;
    p.replace_extension(".json");
    return p;
}

bool is_gzip(const std::vector<std::uint8_t>& bytes) {
    return bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b;
}

std::vector<std::uint8_t> gzip_decompress(const std::vector<std::uint8_t>& bytes) {
    z_stream zs{};
    if (inflateInit2(&zs, 16 + MAX_WBITS) != Z_OK) throw IoError("inflateInit2 failed");
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    std::vector<std::uint8_t> out;
    std::uint8_t chunk[1 << 16];
    int ret = Z_OK;
    do {
        zs.next_out = chunk;
        zs.avail_out = sizeof(chunk);
        ret = inflate(&zs, Z_NO_FLUSH);
        if (ret != Z_OK && ret != Z_STREAM_END) {
            inflateEnd(&zs);
            throw FormatError("corrupt gzip stream");
        }
        out.insert(out.end(), chunk, chunk + (sizeof(chunk) - zs.avail_out));
    } while (ret != Z_STREAM_END && (zs.avail_in > 0 || zs.avail_out == 0));
    inflateEnd(&zs);
    if (ret != Z_STREAM_END) throw FormatError("truncated gzip stream");
    return out;
}

std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& bytes) {
    z_stream zs{};
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 16 + MAX_WBITS, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
        throw IoError("deflateInit2 failed");
    }
    std::vector<std::uint8_t> out(deflateBound(&zs, static_cast<uLong>(bytes.size())));
    zs.next_in = const_cast<Bytef*>(bytes.data());
    zs.avail_in = static_cast<uInt>(bytes.size());
    zs.next_out = out.data();
    zs.avail_out = static_cast<uInt>(out.size());
    const int ret = deflate(&zs, Z_FINISH);
    deflateEnd(&zs);
    if (ret != Z_STREAM_END) throw IoError("gzip compression failed");
    out.resize(zs.total_out);
    return out;
}

Volume3D decode_nifti(const std::vector<std::uint8_t>& raw_bytes) {
    const std::vector<std::uint8_t> bytes = is_gzip(raw_bytes) ? gzip_decompress(raw_bytes) : raw_bytes;
    if (bytes.size() < kNiftiHeaderSize) throw FormatError("file too short for a NIfTI-1 header");

    bool swap = false;
    const auto hdr_le = read_le<std::int32_t>(bytes.data(), false);
    if (hdr_le != kNiftiHeaderSize) {
        if (read_le<std::int32_t>(bytes.data(), true) != kNiftiHeaderSize) {
            throw FormatError("not a NIfTI-1 file (sizeof_hdr != 348)");
        }
        swap = true;
    }
    if (std::memcmp(bytes.data() + 344, "n+1", 3) != 0 && std::memcmp(bytes.data() + 344, "ni1", 3) != 0) {
        throw FormatError("missing NIfTI-1 magic");
    }
    if (std::memcmp(bytes.data() + 344, "ni1", 3) == 0) {
        throw FormatError("two-file NIfTI (.hdr/.img) is not supported");
    }

    std::int16_t dim[8];
    for (int i = 0; i < 8; ++i) dim[i] = read_le<std::int16_t>(bytes.data() + 40 + 2 * i, swap);
    if (dim[0] < 2 || dim[0] > 7) throw FormatError("invalid dim[0]=" + std::to_string(dim[0]));
    for (int i = 4; i <= dim[0]; ++i) {
        if (dim[i] > 1) throw FormatError("only 3-D volumes are supported");
    }
    const Dims dims{dim[1], dim[2], dim[0] >= 3 ? dim[3] : std::int16_t{1}};
    if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) throw FormatError("non-positive NIfTI dims");

    const auto datatype = read_le<std::int16_t>(bytes.data() + 70, swap);
    Spacing spacing{};
    for (int i = 0; i < 3; ++i) {
        const float p = std::fabs(read_le<float>(bytes.data() + 80 + 4 * i, swap));
        spacing[i] = p > 0.0f && std::isfinite(p) ? p : 1.0;
    }
    const auto vox_offset = static_cast<std::size_t>(read_le<float>(bytes.data() + 108, swap));
    float slope = read_le<float>(bytes.data() + 112, swap);
    float inter = read_le<float>(bytes.data() + 116, swap);
    const bool scale = slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f);
    if (!std::isfinite(inter)) inter = 0.0f;

    std::size_t elem = 0;
    switch (datatype) {
        case DT_UINT8: elem = 1; break;
        case DT_INT16: elem = 2; break;
        case DT_INT32: elem = 4; break;
        case DT_FLOAT32: elem = 4; break;
        case DT_FLOAT64: elem = 8; break;
        default: throw FormatError("unsupported NIfTI datatype " + std::to_string(datatype));
    }
    const std::size_t n = dims.voxels();
    const std::size_t offset = std::max<std::size_t>(vox_offset, kNiftiHeaderSize);
    if (bytes.size() < offset || bytes.size() - offset < n * elem) {
        throw DimensionMismatch("NIfTI payload holds " +
                                std::to_string(bytes.size() > offset ? (bytes.size() - offset) / elem : 0) +
                                " voxels but header dims " + dims.str() + " need " + std::to_string(n));
    }

    std::vector<float> data(n);
    const std::uint8_t* p = bytes.data() + offset;
    for (std::size_t i = 0; i < n; ++i, p += elem) {
        double v = 0.0;
        switch (datatype) {
            case DT_UINT8: v = *p; break;
            case DT_INT16: v = read_le<std::int16_t>(p, swap); break;
            case DT_INT32: v = read_le<std::int32_t>(p, swap); break;
            case DT_FLOAT32: v = read_le<float>(p, swap); break;
            case DT_FLOAT64: v = read_le<double>(p, swap); break;
        }
        if (scale) v = v * slope + inter;
        data[i] = static_cast<float>(v);
    }
    Volume3D vol(dims, spacing, std::move(data));
    check_finite(vol);
    return vol;
}

std::vector<std::uint8_t> encode_nifti(const Volume3D& v) {
    return encode_nifti_payload<float>(v.dims(), v.spacing(), DT_FLOAT32, v.values());
}

std::vector<std::uint8_t> encode_nifti(const LabelMask& m) {
    return encode_nifti_payload<std::uint8_t>(m.dims(), m.spacing(), DT_UINT8, m.values());
}

std::string raw_sidecar_json(const Dims& dims, const Spacing& spacing) {
    json j;
    j["dims"] = {dims.nx, dims.ny, dims.nz};
    j["spacing"] = {spacing[0], spacing[1], spacing[2]};
    return j.dump();
}

Volume3D decode_raw(const std::vector<std::uint8_t>& payload, const std::string& sidecar_json) {
    json j;
    try {
        j = json::parse(sidecar_json);
    } catch (const json::exception& e) {
        throw FormatError(std::string("bad raw sidecar: ") + e.what());
    }
    if (!j.contains("dims") || !j["dims"].is_array() || j["dims"].size() != 3) {
        throw FormatError("raw sidecar needs \"dims\": [nx,ny,nz]");
    }
    const Dims dims{j["dims"][0].get<int>(), j["dims"][1].get<int>(), j["dims"][2].get<int>()};
    if (dims.nx <= 0 || dims.ny <= 0 || dims.nz <= 0) throw FormatError("non-positive raw dims");
    Spacing spacing{1.0, 1.0, 1.0};
    if (j.contains("spacing")) {
        if (!j["spacing"].is_array() || j["spacing"].size() != 3) throw FormatError("raw sidecar spacing must have 3 entries");
        for (int i = 0; i < 3; ++i) spacing[i] = j["spacing"][i].get<double>();
    }
    if (payload.size() % sizeof(float) != 0 || payload.size() / sizeof(float) != dims.voxels()) {
        throw DimensionMismatch("raw payload holds " + std::to_string(payload.size() / sizeof(float)) +
                                " float32 values but sidecar dims " + dims.str() + " need " +
                                std::to_string(dims.voxels()));
    }
    std::vector<float> data(dims.voxels());
    std::memcpy(data.data(), payload.data(), payload.size());
    Volume3D vol(dims, spacing, std::move(data));
    check_finite(vol);
    return vol;
}

Volume3D load_volume(const fs::path& path) {
    switch (format_from_path(path)) {
        case VolumeFormat::nifti:
        case VolumeFormat::nifti_gz: return decode_nifti(read_file(path));
        case VolumeFormat::raw: {
            const auto sidecar = read_file(raw_sidecar_path(path));
            return decode_raw(read_file(path), std::string(sidecar.begin(), sidecar.end()));
        }
    }
    throw FormatError("unreachable");
}

LabelMask load_label_mask(const fs::path& path) {
    const Volume3D v = load_volume(path);
    LabelMask m(v.dims(), v.spacing());
    for (std::size_t i = 0; i < v.size(); ++i) m[i] = v[i] != 0.0f ? 1 : 0;
    return m;
}

void save_volume(const Volume3D& v, const fs::path& path) {
    switch (format_from_path(path)) {
        case VolumeFormat::nifti: write_file(path, encode_nifti(v)); return;
        case VolumeFormat::nifti_gz: write_file(path, gzip_compress(encode_nifti(v))); return;
        case VolumeFormat::raw: {
            std::vector<std::uint8_t> bytes(v.size() * sizeof(float));
            std::memcpy(bytes.data(), v.values().data(), bytes.size());
            write_file(path, bytes);
            const auto side = raw_sidecar_json(v.dims(), v.spacing());
            write_file(raw_sidecar_path(path), std::vector<std::uint8_t>(side.begin(), side.end()));
            return;
        }
    }
}

void save_label_mask(const LabelMask& m, const fs::path& path) {
    switch (format_from_path(path)) {
        case VolumeFormat::nifti: write_file(path, encode_nifti(m)); return;
        case VolumeFormat::nifti_gz: write_file(path, gzip_compress(encode_nifti(m))); return;
        case VolumeFormat::raw: {
            Volume3D v(m.dims(), m.spacing());
            for (std::size_t i = 0; i < m.size(); ++i) v[i] = m[i];
            save_volume(v, path);
            return;
        }
    }
}

Volume3D normalize_intensity(const Volume3D& v, IntensityWindow window) {
    if (!(window.lo < window.hi)) {
        throw InvalidArgument("intensity window needs lo < hi, got (" + std::to_string(window.lo) + ", " +
                              std::to_string(window.hi) + ")");
    }
    Volume3D out(v.dims(), v.spacing());
    const double range = window.hi - window.lo;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double c = std::clamp(static_cast<double>(v[i]), window.lo, window.hi);
        out[i] = static_cast<float>((c - window.lo) / range);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Phantoms
// ---------------------------------------------------------------------------

std::string to_string(PhantomKind kind) {
    switch (kind) {
        case PhantomKind::intensity_separable: return "intensity-separable";
        case PhantomKind::texture_ambiguous: return "texture-ambiguous";
    }
    return "?";
}

PhantomKind phantom_kind_from_string(const std::string& s) {
    if (s == "intensity-separable") return PhantomKind::intensity_separable;
    if (s == "texture-ambiguous") return PhantomKind::texture_ambiguous;
    throw InvalidArgument("unknown phantom kind: " + s);
}

void PhantomSpec::validate() const {
    if (dims.nx < 32 || dims.ny < 32 || dims.nz < 32) {
        throw InvalidArgument("phantom dims must be >= 32 per axis, got " + dims.str());
    }
    if (lesion_count < 1) throw InvalidArgument("phantom needs at least one lesion");
    // (4/3) pi r^3 >= 6^3 needs r >= 3.73
    if (lesion_radius_min < 4.0) throw InvalidArgument("lesion radius must be >= 4 voxels");
    if (lesion_radius_max < lesion_radius_min) throw InvalidArgument("lesion radius range is empty");
    if (!(stripe_period >= 2.0)) throw InvalidArgument("stripe period must be >= 2 voxels");
    if (!(phase_jitter >= 0.0)) throw InvalidArgument("phase jitter must be >= 0");
    if (!(phase_smoothing > 0.0)) throw InvalidArgument("phase smoothing must be positive");
    const int smallest = std::min({dims.nx, dims.ny, dims.nz});
    if (2.0 * std::ceil(lesion_radius_max) + 2.0 > smallest) {
        throw InvalidArgument("lesion of radius " + std::to_string(lesion_radius_max) + " cannot fit in " +
                              dims.str());
    }
}

namespace {

// Separable Gaussian smoothing with edge replication.
std::vector<double> smooth(const std::vector<double>& in, const Dims& d, double sigma) {
    const int r = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> kernel(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) sum += kernel[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
    for (auto& k : kernel) k /= sum;

    std::vector<double> a = in, b(in.size());
    const int n[3] = {d.nx, d.ny, d.nz};
    for (int axis = 0; axis < 3; ++axis) {
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) {
                    double acc = 0.0;
                    for (int k = -r; k <= r; ++k) {
                        int c[3] = {x, y, z};
                        c[axis] = std::clamp(c[axis] + k, 0, n[axis] - 1);
                        acc += kernel[k + r] * a[d.index(c[0], c[1], c[2])];
                    }
                    b[d.index(x, y, z)] = acc;
                }
        std::swap(a, b);
    }
    return a;
}

}  // namespace

std::pair<Volume3D, LabelMask> generate_phantom(const PhantomSpec& spec) {
    spec.validate();
    const Dims& d = spec.dims;
    std::mt19937_64 rng(spec.seed);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);

    LabelMask mask(d);
    for (int l = 0; l < spec.lesion_count; ++l) {
        const double r = spec.lesion_radius_min + (spec.lesion_radius_max - spec.lesion_radius_min) * unit(rng);
        const double margin = r + 1.0;
        const double cx = margin + (d.nx - 2.0 * margin) * unit(rng);
        const double cy = margin + (d.ny - 2.0 * margin) * unit(rng);
        const double cz = margin + (d.nz - 2.0 * margin) * unit(rng);
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) {
                    const double dx = x - cx, dy = y - cy, dz = z - cz;
                    if (dx * dx + dy * dy + dz * dz <= r * r) mask.at(x, y, z) = 1;
                }
    }

    Volume3D vol(d);
    using P = PhantomIntensities;
    if (spec.kind == PhantomKind::intensity_separable) {
        for (std::size_t i = 0; i < vol.size(); ++i) {
            const double mean = mask[i] ? P::separable_lesion : P::separable_background;
            vol[i] = static_cast<float>(mean + P::separable_noise * normal(rng));
        }
    } else {
        // Unit-variance smooth phase field scaled to the requested jitter.
        std::vector<double> phase(d.voxels());
        for (auto& f : phase) f = normal(rng);
        phase = smooth(phase, d, spec.phase_smoothing);
        double ss = 0.0;
        for (double f : phase) ss += f * f;
        const double scale = ss > 0.0 ? spec.phase_jitter / std::sqrt(ss / phase.size()) : 0.0;
        const double k = 2.0 * std::numbers::pi / spec.stripe_period / std::sqrt(3.0);
        const double lesion_offset = 2.0 * std::numbers::pi * unit(rng);
        const double background_offset = 2.0 * std::numbers::pi * unit(rng);
        for (int z = 0; z < d.nz; ++z)
            for (int y = 0; y < d.ny; ++y)
                for (int x = 0; x < d.nx; ++x) {
                    const std::size_t i = d.index(x, y, z);
                    // normals (1,1,1) and (-1,1,1)
                    const double arg = mask[i] ? k * (x + y + z) + lesion_offset : k * (-x + y + z) + background_offset;
                    const bool high = std::cos(arg + scale * phase[i]) > 0.0;
                    const double mean = high ? P::mixture_high : P::mixture_low;
                    vol[i] = static_cast<float>(mean + P::mixture_noise * normal(rng));
                }
    }
    return {std::move(vol), std::move(mask)};
}

}  // namespace econet
