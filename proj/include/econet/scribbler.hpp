#pragma once

// Synthetic annotator for reproducible evaluation. Each round it finds the
// connected error regions of the current prediction, scribbles a number of
// voxels in each that grows with region size, and asks the method for a new
// likelihood, which the graph cut turns into the next prediction.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "econet/annotation.hpp"
#include "econet/methods.hpp"
#include "econet/volume.hpp"

namespace econet::scribbler {

struct Region {
    std::vector<std::size_t> voxels;  // ascending voxel index
    ScribbleClass label;              // correction label
};

// 26-connected components of the false negatives (label foreground) followed
// by those of the false positives (label background).
std::vector<Region> missegmented_regions(const LabelMask& pred, const LabelMask& gt);

// 0 below 6^3 voxels, otherwise ceil(V / 10^3).
std::size_t sample_count(std::size_t region_voxels);

struct RoundRecord {
    int round = 0;  // 1-based
    std::size_t regions = 0;
    std::size_t new_foreground = 0;
    std::size_t new_background = 0;
    std::size_t cumulative = 0;  // |S| after this round
    double dice = 0.0;
    std::optional<double> assd;
    double train_seconds = 0.0;
    double infer_seconds = 0.0;
    double regularize_seconds = 0.0;

    // Equality ignores the timing fields.
    bool same_result(const RoundRecord& o) const;
};

struct InteractionTrace {
    std::string method;
    std::uint64_t seed = 0;
    std::vector<RoundRecord> rounds;

    bool same_result(const InteractionTrace& o) const;
};

struct ProtocolOptions {
    int rounds = 10;
    double lambda = 5.0;
    double sigma = 0.1;
    std::uint64_t seed = 0;
};

// Scribbles `n` voxels of `region` drawn uniformly without replacement,
// skipping voxels already scribbled with the region's label. Returns how
// many were added.
std::size_t sample_region(const Region& region, std::size_t n, const Dims& dims, ScribbleSet& s,
                          std::mt19937_64& rng);

// Runs the protocol on a normalized volume. Round 1 treats the whole ground
// truth foreground and background as the two error regions. A round whose
// error regions yield no new scribbles keeps the previous prediction without
// refitting. Method failures are rethrown as Error naming the round.
// `final_mask`, when given, receives the last prediction.
InteractionTrace run_protocol(const Volume3D& v, const LabelMask& gt, LikelihoodMethod& method,
                              const ProtocolOptions& opt, LabelMask* final_mask = nullptr);

nlohmann::json to_json(const InteractionTrace& t);
InteractionTrace trace_from_json(const nlohmann::json& j);

// CSV with header; one row per round.
std::string trace_csv_header();
std::string trace_csv_rows(const InteractionTrace& t, const std::string& sample = "");

}  // namespace econet::scribbler
