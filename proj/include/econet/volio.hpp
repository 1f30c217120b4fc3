#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "econet/volume.hpp"

namespace econet {

// ---------------------------------------------------------------------------
// File I/O
//
// Two on-disk formats are understood:
//   * NIfTI-1 single file (.nii / .nii.gz), datatypes uint8, int16, int32,
//     float32 and float64 on read. scl_slope/scl_inter are applied when the
//     slope is non-zero.
//   * Raw: little-endian float32 payload (.raw) next to a JSON sidecar with
//     the same stem (.json): { "dims": [nx,ny,nz], "spacing": [sx,sy,sz] }.
// ---------------------------------------------------------------------------

enum class VolumeFormat { nifti, nifti_gz, raw };

// Picks the format from the file extension.
VolumeFormat format_from_path(const std::filesystem::path& path);

// Sidecar path belonging to a raw payload (foo.raw -> foo.json).
std::filesystem::path raw_sidecar_path(const std::filesystem::path& raw_path);

Volume3D load_volume(const std::filesystem::path& path);

// Nonzero voxels become foreground.
LabelMask load_label_mask(const std::filesystem::path& path);

void save_volume(const Volume3D& v, const std::filesystem::path& path);
// NIfTI masks are written as uint8; raw masks as float32 0/1.
void save_label_mask(const LabelMask& m, const std::filesystem::path& path);

// In-memory codecs used by the HTTP service. `decode_nifti` accepts both
// plain and gzip-compressed buffers.
Volume3D decode_nifti(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> encode_nifti(const Volume3D& v);
std::vector<std::uint8_t> encode_nifti(const LabelMask& m);
Volume3D decode_raw(const std::vector<std::uint8_t>& payload, const std::string& sidecar_json);
std::string raw_sidecar_json(const Dims& dims, const Spacing& spacing);

std::vector<std::uint8_t> gzip_compress(const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> gzip_decompress(const std::vector<std::uint8_t>& bytes);
bool is_gzip(const std::vector<std::uint8_t>& bytes);

// ---------------------------------------------------------------------------
// Intensity normalization
// ---------------------------------------------------------------------------

// HU window mapped onto [0,1]. The default spans lung parenchyma through soft
// tissue.
struct IntensityWindow {
    double lo = -1024.0;
    double hi = 600.0;
};

// Clamp to [lo,hi], then map affinely to [0,1]. Throws InvalidArgument if
// lo >= hi.
Volume3D normalize_intensity(const Volume3D& v, IntensityWindow window = {});

// ---------------------------------------------------------------------------
// Synthetic phantoms
// ---------------------------------------------------------------------------

enum class PhantomKind {
    // Lesions brighter than background by many noise standard deviations.
    intensity_separable,
    // Both sides draw every voxel from the same two-component intensity
    // mixture, arranged as irregular oblique stripes. Lesion stripes run
    // along one body diagonal, background stripes along its mirror image, so
    // only local orientation tells them apart. No intensity threshold
    // separates them.
    texture_ambiguous,
};

std::string to_string(PhantomKind kind);
PhantomKind phantom_kind_from_string(const std::string& s);

struct PhantomSpec {
    PhantomKind kind = PhantomKind::texture_ambiguous;
    Dims dims{64, 64, 64};
    std::uint64_t seed = 0;
    int lesion_count = 2;
    double lesion_radius_min = 12.0;
    double lesion_radius_max = 16.0;
    // Texture-ambiguous kind: stripe period (voxels) and the standard
    // deviation (radians) of a smooth random phase field that bends the
    // stripes; `phase_smoothing` is that field's correlation length.
    double stripe_period = 4.0;
    double phase_jitter = 2.75;
    double phase_smoothing = 4.0;

    void validate() const;
};

// Intensity model used by the generator, in HU. Exposed so tests can reason
// about the construction.
struct PhantomIntensities {
    static constexpr double separable_background = -700.0;
    static constexpr double separable_lesion = -300.0;
    static constexpr double separable_noise = 50.0;
    static constexpr double mixture_low = -750.0;
    static constexpr double mixture_high = -350.0;
    static constexpr double mixture_noise = 40.0;
};

// Deterministic in `spec`. Intensities are in HU.
std::pair<Volume3D, LabelMask> generate_phantom(const PhantomSpec& spec);

}  // namespace econet
