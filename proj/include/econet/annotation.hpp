#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "econet/volume.hpp"

namespace econet {

enum class ScribbleClass : int { background = 0, foreground = 1 };

// Accumulated scribbles. Foreground and background are kept disjoint.
class ScribbleSet {
public:
    ScribbleSet() = default;
    ScribbleSet(std::set<Coord> foreground, std::set<Coord> background);

    const std::set<Coord>& foreground() const { return fg_; }
    const std::set<Coord>& background() const { return bg_; }
    std::size_t size() const { return fg_.size() + bg_.size(); }
    bool empty() const { return fg_.empty() && bg_.empty(); }

    // Adding a voxel to one class removes it from the other.
    void add(const Coord& c, ScribbleClass cls);
    bool contains(const Coord& c, ScribbleClass cls) const;

    // Coordinates that fall outside `dims`, for error reporting.
    std::vector<Coord> out_of_bounds(const Dims& dims) const;
    void require_within(const Dims& dims) const;

    friend bool operator==(const ScribbleSet&, const ScribbleSet&) = default;

private:
    std::set<Coord> fg_;
    std::set<Coord> bg_;
};

// Non-negative fraction kept in lowest terms.
struct Ratio {
    std::uint64_t num = 0;
    std::uint64_t den = 1;

    static Ratio make(std::uint64_t num, std::uint64_t den);
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    friend Ratio operator*(const Ratio& r, std::uint64_t k);
    friend bool operator==(const Ratio&, const Ratio&) = default;
};

struct ClassWeights {
    double foreground = 1.0;
    double background = 1.0;
    // Exact values; `foreground`/`background` are their rounded quotients.
    Ratio foreground_exact{1, 1};
    Ratio background_exact{1, 1};
};

// w_f = |S| / |S^f|, w_b = |S| / |S^b|. Throws InsufficientScribbles if either
// class is empty.
ClassWeights class_weights(const ScribbleSet& s);

// Union per class; on conflict the label in `incoming` wins.
ScribbleSet merge_scribbles(const ScribbleSet& existing, const ScribbleSet& incoming);

// K x K x K intensity blocks centred on scribbled voxels, x fastest inside
// each block. Foreground patches come first, then background, each in
// coordinate order.
struct PatchBatch {
    int edge = 0;
    std::vector<float> values;  // patches * edge^3
    std::vector<int> labels;    // 1 foreground, 0 background
    std::vector<Coord> centers;

    std::size_t count() const { return labels.size(); }
    std::size_t patch_voxels() const { return static_cast<std::size_t>(edge) * edge * edge; }
    const float* patch(std::size_t i) const { return values.data() + i * patch_voxels(); }
};

// Border voxels are filled by edge replication. Throws InvalidArgument for an
// even or < 3 edge and for an empty scribble set.
PatchBatch extract_patches(const Volume3D& v, const ScribbleSet& s, int edge);

// Single replication-padded patch around `center`, written to `out`
// (edge^3 values).
void extract_patch(const Volume3D& v, const Coord& center, int edge, float* out);

// JSON: { "foreground": [[x,y,z],...], "background": [[x,y,z],...] }
std::string scribbles_to_json(const ScribbleSet& s);
ScribbleSet scribbles_from_json(const std::string& text);

}  // namespace econet
