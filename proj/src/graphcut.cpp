#include "econet/graphcut.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace econet::graphcut {

void FlowGraph::add_terminal(std::size_t node, double source_cap, double sink_cap) {
    if (node >= node_count()) throw InvalidArgument("terminal edge on node out of range");
    if (!(source_cap >= 0.0) || !(sink_cap >= 0.0) || !std::isfinite(source_cap) || !std::isfinite(sink_cap)) {
        throw InvalidArgument("terminal capacities must be finite and non-negative");
    }
    source_[node] += source_cap;
    sink_[node] += sink_cap;
}

void FlowGraph::add_edge(std::size_t from, std::size_t to, double cap, double rev_cap) {
    if (from >= node_count() || to >= node_count()) throw InvalidArgument("edge endpoint out of range");
    if (from == to) throw InvalidArgument("self loops are not allowed");
    if (!(cap >= 0.0) || !(rev_cap >= 0.0) || !std::isfinite(cap) || !std::isfinite(rev_cap)) {
        throw InvalidArgument("edge capacities must be finite and non-negative");
    }
    edges_.push_back({from, to, cap, rev_cap});
}

namespace {

constexpr int kNone = -1;      // free node
constexpr int kTerminal = -2;  // parent is the source / sink
constexpr int kOrphan = -3;
constexpr int kInfDist = std::numeric_limits<int>::max();

class BkSolver {
public:
    explicit BkSolver(const FlowGraph& g) {
        const std::size_t n = g.node_count();
        nodes_.resize(n);
        first_.assign(n, -1);
        const std::size_t m = g.edges().size();
        head_.resize(2 * m);
        next_.resize(2 * m);
        cap_.resize(2 * m);
        // Arcs are linked per node in insertion order.
        std::vector<int> last(n, -1);
        auto link = [&](std::size_t from, int a) {
            next_[a] = -1;
            if (last[from] < 0) first_[from] = a;
            else next_[last[from]] = a;
            last[from] = a;
        };
        for (std::size_t e = 0; e < m; ++e) {
            const auto& ed = g.edges()[e];
            const int a = static_cast<int>(2 * e), b = a + 1;
            head_[a] = static_cast<int>(ed.to);
            head_[b] = static_cast<int>(ed.from);
            cap_[a] = ed.cap;
            cap_[b] = ed.rev_cap;
            link(ed.from, a);
            link(ed.to, b);
        }
        for (std::size_t i = 0; i < n; ++i) {
            const double s = g.source_cap(i), t = g.sink_cap(i);
            flow_ += std::min(s, t);
            nodes_[i].tr = s - t;
            auto& nd = nodes_[i];
            if (nd.tr > 0.0) {
                nd.sink = false;
            } else if (nd.tr < 0.0) {
                nd.sink = true;
            } else {
                continue;
            }
            nd.parent = kTerminal;
            nd.dist = 1;
            activate(static_cast<int>(i));
        }
    }

    CutResult run() {
        int current = -1;
        while (true) {
            int i = current;
            if (i < 0 || nodes_[i].parent == kNone) {
                i = next_active();
                if (i < 0) break;
            }
            current = -1;
            const int meet = grow(i);
            if (meet < 0) continue;
            // keep growing from i after the augmentation
            current = i;
            ++time_;
            augment(meet);
            adopt_orphans();
        }
        CutResult r;
        r.flow = flow_;
        r.source_side.resize(nodes_.size());
        for (std::size_t i = 0; i < nodes_.size(); ++i) {
            r.source_side[i] = nodes_[i].parent != kNone && !nodes_[i].sink;
        }
        return r;
    }

private:
    struct Node {
        int parent = kNone;  // arc index, or kNone / kTerminal / kOrphan
        bool sink = false;
        bool queued = false;
        long ts = 0;
        int dist = 0;
        double tr = 0.0;  // > 0 residual from source, < 0 residual to sink
    };

    static int sister(int a) { return a ^ 1; }

    void activate(int i) {
        if (nodes_[i].queued) return;
        nodes_[i].queued = true;
        active_.push_back(i);
    }

    int next_active() {
        while (!active_.empty()) {
            const int i = active_.front();
            active_.pop_front();
            nodes_[i].queued = false;
            if (nodes_[i].parent != kNone) return i;
        }
        return -1;
    }

    // Grows the tree of node i by one layer. Returns the arc (oriented
    // source tree -> sink tree) joining the two trees, or -1.
    int grow(int i) {
        Node& ni = nodes_[i];
        for (int a = first_[i]; a >= 0; a = next_[a]) {
            const int j = head_[a];
            const double c = ni.sink ? cap_[sister(a)] : cap_[a];
            if (c <= 0.0) continue;
            Node& nj = nodes_[j];
            if (nj.parent == kNone) {
                nj.sink = ni.sink;
                nj.parent = sister(a);
                nj.ts = ni.ts;
                nj.dist = ni.dist + 1;
                activate(j);
            } else if (nj.sink != ni.sink) {
                return ni.sink ? sister(a) : a;
            } else if (nj.ts <= ni.ts && nj.dist > ni.dist) {
                // shorten the path to the terminal
                nj.parent = sister(a);
                nj.ts = ni.ts;
                nj.dist = ni.dist + 1;
            }
        }
        return -1;
    }

    void augment(int middle) {
        double b = cap_[middle];
        // source side: tail of middle is head of its sister
        for (int i = head_[sister(middle)];;) {
            const int a = nodes_[i].parent;
            if (a == kTerminal) {
                b = std::min(b, nodes_[i].tr);
                break;
            }
            b = std::min(b, cap_[sister(a)]);
            i = head_[a];
        }
        for (int i = head_[middle];;) {
            const int a = nodes_[i].parent;
            if (a == kTerminal) {
                b = std::min(b, -nodes_[i].tr);
                break;
            }
            b = std::min(b, cap_[a]);
            i = head_[a];
        }

        cap_[sister(middle)] += b;
        cap_[middle] -= b;
        for (int i = head_[sister(middle)];;) {
            const int a = nodes_[i].parent;
            if (a == kTerminal) {
                nodes_[i].tr -= b;
                if (nodes_[i].tr == 0.0) make_orphan(i);
                break;
            }
            cap_[a] += b;
            cap_[sister(a)] -= b;
            if (cap_[sister(a)] == 0.0) make_orphan(i);
            i = head_[a];
        }
        for (int i = head_[middle];;) {
            const int a = nodes_[i].parent;
            if (a == kTerminal) {
                nodes_[i].tr += b;
                if (nodes_[i].tr == 0.0) make_orphan(i);
                break;
            }
            cap_[sister(a)] += b;
            cap_[a] -= b;
            if (cap_[a] == 0.0) make_orphan(i);
            i = head_[a];
        }
        flow_ += b;
    }

    void make_orphan(int i) {
        nodes_[i].parent = kOrphan;
        orphans_.push_back(i);
    }

    // Distance from j to its terminal through valid parents, or kInfDist if
    // the path ends in an orphan.
    int origin_distance(int j) {
        int d = 0;
        for (int k = j;;) {
            Node& nk = nodes_[k];
            if (nk.ts == time_) {
                d += nk.dist;
                break;
            }
            const int a = nk.parent;
            ++d;
            if (a == kTerminal) {
                nk.ts = time_;
                nk.dist = 1;
                break;
            }
            if (a == kOrphan || a == kNone) return kInfDist;
            k = head_[a];
        }
        // cache distances along the path
        for (int k = j; nodes_[k].ts != time_; k = head_[nodes_[k].parent]) {
            nodes_[k].ts = time_;
            nodes_[k].dist = d--;
        }
        return nodes_[j].dist;
    }

    void adopt_orphans() {
        while (!orphans_.empty()) {
            const int i = orphans_.front();
            orphans_.pop_front();
            Node& ni = nodes_[i];
            int best_arc = -1, best_dist = kInfDist;
            for (int a = first_[i]; a >= 0; a = next_[a]) {
                const int j = head_[a];
                const Node& nj = nodes_[j];
                if (nj.sink != ni.sink || nj.parent == kNone) continue;
                const double c = ni.sink ? cap_[a] : cap_[sister(a)];
                if (c <= 0.0) continue;
                const int d = origin_distance(j);
                if (d < best_dist) {
                    best_dist = d;
                    best_arc = a;
                }
            }
            if (best_arc >= 0) {
                ni.parent = best_arc;
                ni.ts = time_;
                ni.dist = best_dist + 1;
                continue;
            }
            // no valid parent: i becomes free, its children orphans
            for (int a = first_[i]; a >= 0; a = next_[a]) {
                const int j = head_[a];
                Node& nj = nodes_[j];
                if (nj.sink != ni.sink || nj.parent == kNone) continue;
                const double c = ni.sink ? cap_[a] : cap_[sister(a)];
                if (c > 0.0) activate(j);
                if (nj.parent >= 0 && head_[nj.parent] == i) make_orphan(j);
            }
            ni.parent = kNone;
        }
    }

    std::vector<Node> nodes_;
    std::vector<int> first_, head_, next_;
    std::vector<double> cap_;
    std::deque<int> active_;
    std::deque<int> orphans_;
    double flow_ = 0.0;
    long time_ = 0;
};

}  // namespace

CutResult max_flow(const FlowGraph& g) { return BkSolver(g).run(); }

double cut_capacity(const FlowGraph& g, const std::vector<std::uint8_t>& source_side) {
    if (source_side.size() != g.node_count()) throw DimensionMismatch("labeling size does not match graph");
    double c = 0.0;
    for (std::size_t i = 0; i < g.node_count(); ++i) c += source_side[i] ? g.sink_cap(i) : g.source_cap(i);
    for (const auto& e : g.edges()) {
        if (source_side[e.from] && !source_side[e.to]) c += e.cap;
        if (source_side[e.to] && !source_side[e.from]) c += e.rev_cap;
    }
    return c;
}

namespace {

void check_inputs(const LikelihoodMap& l, const Volume3D& v, double lambda, double sigma) {
    if (l.dims() != v.dims()) {
        throw DimensionMismatch("likelihood dims " + l.dims().str() + " differ from volume dims " + v.dims().str());
    }
    if (!(sigma > 0.0)) throw InvalidArgument("sigma must be > 0");
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw InvalidArgument("lambda must be finite and >= 0");
}

double unary(double p) { return -std::log(std::clamp(p, kLikelihoodClamp, 1.0 - kLikelihoodClamp)); }

template <typename F>
void for_each_pair(const Dims& d, F&& f) {
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                const std::size_t i = d.index(x, y, z);
                if (x + 1 < d.nx) f(i, i + 1);
                if (y + 1 < d.ny) f(i, i + d.nx);
                if (z + 1 < d.nz) f(i, i + static_cast<std::size_t>(d.nx) * d.ny);
            }
}

}  // namespace

FlowGraph build_energy(const LikelihoodMap& l, const Volume3D& v, double lambda, double sigma) {
    check_inputs(l, v, lambda, sigma);
    const Dims& d = v.dims();
    FlowGraph g(d.voxels());
    for (std::size_t i = 0; i < d.voxels(); ++i) g.add_terminal(i, unary(1.0 - l[i]), unary(l[i]));
    if (lambda > 0.0) {
        g.reserve_edges(3 * d.voxels());
        const double inv = 1.0 / (2.0 * sigma * sigma);
        for_each_pair(d, [&](std::size_t i, std::size_t j) {
            const double diff = static_cast<double>(v[i]) - static_cast<double>(v[j]);
            const double w = lambda * std::exp(-diff * diff * inv);
            g.add_edge(i, j, w, w);
        });
    }
    return g;
}

LabelMask regularize(const LikelihoodMap& l, const Volume3D& v, double lambda, double sigma) {
    const CutResult r = max_flow(build_energy(l, v, lambda, sigma));
    return LabelMask(v.dims(), v.spacing(), r.source_side);
}

LabelMask argmax_mask(const LikelihoodMap& l) {
    LabelMask m(l.dims(), l.spacing());
    for (std::size_t i = 0; i < l.size(); ++i) m[i] = l[i] > 0.5;
    return m;
}

double energy(const LikelihoodMap& l, const Volume3D& v, const LabelMask& m, double lambda, double sigma) {
    check_inputs(l, v, lambda, sigma);
    if (m.dims() != v.dims()) throw DimensionMismatch("mask dims differ from volume dims");
    double e = 0.0;
    for (std::size_t i = 0; i < l.size(); ++i) e += m[i] ? unary(l[i]) : unary(1.0 - l[i]);
    if (lambda > 0.0) {
        const double inv = 1.0 / (2.0 * sigma * sigma);
        for_each_pair(v.dims(), [&](std::size_t i, std::size_t j) {
            if ((m[i] != 0) == (m[j] != 0)) return;
            const double diff = static_cast<double>(v[i]) - static_cast<double>(v[j]);
            e += lambda * std::exp(-diff * diff * inv);
        });
    }
    return e;
}

}  // namespace econet::graphcut
