#pragma once

#include <optional>
#include <span>
#include <vector>

#include "econet/volume.hpp"

namespace econet::metrics {

// 2|A∩B| / (|A|+|B|); 1 when both masks are empty.
double dice(const LabelMask& pred, const LabelMask& gt);

// Foreground voxels with at least one 6-neighbour in background; the outside
// of the volume counts as background.
std::vector<std::size_t> surface_voxels(const LabelMask& m);

// Squared Euclidean distance (in spacing units) from every voxel to the
// nearest seed voxel. Exact separable transform. Infinite everywhere if
// there are no seeds.
std::vector<double> squared_distance_transform(const Dims& dims, std::span<const std::size_t> seeds,
                                               const Spacing& spacing = {1.0, 1.0, 1.0});

// Average symmetric surface distance. nullopt when either mask is empty (the
// metric is undefined). Unit spacing gives voxel units.
std::optional<double> assd(const LabelMask& pred, const LabelMask& gt, const Spacing& spacing = {1.0, 1.0, 1.0});

enum class Connectivity { six = 6, eighteen = 18, twentysix = 26 };

struct Components {
    std::vector<int> labels;  // 0 = background, 1..count
    int count = 0;
    std::vector<std::size_t> sizes;  // sizes[k-1] for label k
};

// Labels are assigned in voxel-index order of each component's first voxel.
Components connected_components(const LabelMask& m, Connectivity c = Connectivity::twentysix);

struct Summary {
    double mean = 0.0;
    double std = 0.0;  // population standard deviation
    std::size_t n = 0;
};

// Empty input gives n = 0 and zeros.
Summary summarize(std::span<const double> values);

}  // namespace econet::metrics
