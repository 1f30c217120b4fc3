#pragma once

// Binary spatial regularization of a likelihood map by exact min-cut.
//
// Source side = foreground. A node on the source side pays its sink
// capacity, a node on the sink side its source capacity, so with
//   source cap = -log(1 - p),  sink cap = -log(p)
// the cut value is the usual unary + pairwise energy of the labeling.

#include <cstdint>
#include <vector>

#include "econet/volume.hpp"

namespace econet::graphcut {

class FlowGraph {
public:
    struct Edge {
        std::size_t from = 0;
        std::size_t to = 0;
        double cap = 0.0;      // from -> to
        double rev_cap = 0.0;  // to -> from
    };

    FlowGraph() = default;
    explicit FlowGraph(std::size_t nodes) : source_(nodes, 0.0), sink_(nodes, 0.0) {}

    std::size_t node_count() const { return source_.size(); }
    std::size_t edge_count() const { return edges_.size(); }

    // Capacities accumulate across calls. Throws InvalidArgument for negative
    // or non-finite capacities and out-of-range nodes.
    void add_terminal(std::size_t node, double source_cap, double sink_cap);
    void add_edge(std::size_t from, std::size_t to, double cap, double rev_cap);
    void reserve_edges(std::size_t n) { edges_.reserve(n); }

    double source_cap(std::size_t node) const { return source_.at(node); }
    double sink_cap(std::size_t node) const { return sink_.at(node); }
    const std::vector<Edge>& edges() const { return edges_; }

private:
    std::vector<double> source_;
    std::vector<double> sink_;
    std::vector<Edge> edges_;
};

struct CutResult {
    double flow = 0.0;
    // 1 = source side (foreground). Nodes not reachable from the source in
    // the final residual graph are on the sink side, so ties go to
    // background.
    std::vector<std::uint8_t> source_side;
};

// Boykov-Kolmogorov augmenting paths with search-tree reuse.
CutResult max_flow(const FlowGraph& g);

// Total capacity of the cut induced by a labeling (1 = source side).
double cut_capacity(const FlowGraph& g, const std::vector<std::uint8_t>& source_side);

inline constexpr double kLikelihoodClamp = 1e-7;
inline constexpr double kDefaultLambda = 5.0;
inline constexpr double kDefaultSigma = 0.1;

// One node per voxel (node index = voxel index), unary terms from the
// likelihood, and lambda * exp(-(I_i - I_j)^2 / (2 sigma^2)) on every
// 6-connected pair. With lambda = 0 no pairwise edges are added. `v` is the
// normalized intensity volume.
FlowGraph build_energy(const LikelihoodMap& l, const Volume3D& v, double lambda, double sigma);

LabelMask regularize(const LikelihoodMap& l, const Volume3D& v, double lambda = kDefaultLambda,
                     double sigma = kDefaultSigma);

// p > 0.5 -> 1.
LabelMask argmax_mask(const LikelihoodMap& l);

// Energy of a mask under build_energy(l, v, lambda, sigma).
double energy(const LikelihoodMap& l, const Volume3D& v, const LabelMask& m, double lambda, double sigma);

}  // namespace econet::graphcut
