#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

#include "econet/volume.hpp"

namespace econet::haar {

// Axis-aligned box inside a window: offset (x0,y0,z0) and extent (ex,ey,ez).
struct Box {
    int x0 = 0, y0 = 0, z0 = 0;
    int ex = 1, ey = 1, ez = 1;

    int volume() const { return ex * ey * ez; }
    friend bool operator==(const Box&, const Box&) = default;
};

// mean(a) when b is empty, otherwise mean(a) - mean(b).
struct Feature {
    Box a;
    std::optional<Box> b;

    bool is_difference() const { return b.has_value(); }
    friend bool operator==(const Feature&, const Feature&) = default;
};

struct BankSpec {
    int window = 7;
    int size = 64;
    std::uint64_t seed = 0;

    friend bool operator==(const BankSpec&, const BankSpec&) = default;
};

class HaarBank {
public:
    HaarBank() = default;
    HaarBank(int window, std::vector<Feature> features);

    // Fixed part, in order: whole-window mean; 8 octant means; 3 half-window
    // differences (low half minus high half, one per axis); 6 centre-vs-rod
    // differences (centre cube of edge 1 and 3 minus the rod through it along
    // each axis); centre voxel. The remainder up to `size` are random box
    // pairs drawn from a generator seeded with `seed`.
    static HaarBank make(const BankSpec& spec);

    int window() const { return window_; }
    std::size_t size() const { return features_.size(); }
    const std::vector<Feature>& features() const { return features_; }

    friend bool operator==(const HaarBank&, const HaarBank&) = default;

private:
    int window_ = 0;
    std::vector<Feature> features_;
};

// Number of non-random features make() puts first.
inline constexpr int kFixedFeatureCount = 19;

// Features of one window^3 patch (x fastest). Throws DimensionMismatch when
// the patch does not have window^3 values.
std::vector<double> haar_features(std::span<const float> patch, const HaarBank& bank);

// Per-voxel features on the replication-padded window around each voxel,
// voxel-major: values[voxel * channels + feature].
struct FeatureVolume {
    Dims dims;
    int channels = 0;
    std::vector<double> values;

    const double* at(std::size_t voxel) const { return values.data() + voxel * channels; }
};

// Integral-volume implementation, O(1) per box.
FeatureVolume haar_feature_volume(const Volume3D& v, const HaarBank& bank);

nlohmann::json to_json(const HaarBank& bank);
HaarBank bank_from_json(const nlohmann::json& j);

}  // namespace econet::haar
