#include "econet/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace econet::baselines {

using json = nlohmann::json;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

std::vector<double> class_intensities(const Volume3D& v, const std::set<Coord>& coords) {
    std::vector<double> out;
    out.reserve(coords.size());
    for (const auto& c : coords) out.push_back(v.at(c));
    return out;
}

void require_both(const Volume3D& v, const ScribbleSet& s) {
    class_weights(s);  // throws InsufficientScribbles
    s.require_within(v.dims());
}

std::uint64_t splitmix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

// ---------------------------------------------------------------------------
// Histogram
// ---------------------------------------------------------------------------

int histogram_bin(double x, int bins) {
    x = std::clamp(x, 0.0, 1.0);
    return std::min(bins - 1, static_cast<int>(x * bins));
}

HistogramModel histogram_fit(const Volume3D& v, const ScribbleSet& s, int bins) {
    if (bins < 2) throw InvalidArgument("histogram needs at least 2 bins");
    require_both(v, s);
    HistogramModel m;
    m.bins = bins;
    auto fill = [&](const std::set<Coord>& coords) {
        std::vector<double> h(bins, 1.0);
        for (const auto& c : coords) h[histogram_bin(v.at(c), bins)] += 1.0;
        const double total = static_cast<double>(coords.size() + bins);
        for (auto& x : h) x /= total;
        return h;
    };
    m.foreground = fill(s.foreground());
    m.background = fill(s.background());
    return m;
}

LikelihoodMap histogram_predict(const Volume3D& v, const HistogramModel& m) {
    if (m.foreground.size() != static_cast<std::size_t>(m.bins) || m.background.size() != m.foreground.size()) {
        throw InvalidArgument("histogram model is not fitted");
    }
    LikelihoodMap out(v.dims(), v.spacing());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(v.size()); ++i) {
        const int b = histogram_bin(v[i], m.bins);
        out[i] = m.foreground[b] / (m.foreground[b] + m.background[b]);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Gaussian mixtures
// ---------------------------------------------------------------------------

double GaussianMixture::log_density(double x) const {
    double best = -std::numeric_limits<double>::infinity();
    double terms[256];
    std::vector<double> spill;
    double* t = terms;
    if (components() > 256) {
        spill.resize(components());
        t = spill.data();
    }
    for (std::size_t k = 0; k < components(); ++k) {
        const double d = x - means[k];
        t[k] = weights[k] > 0.0 ? std::log(weights[k]) - 0.5 * (kLog2Pi + std::log(variances[k]) + d * d / variances[k])
                                : -std::numeric_limits<double>::infinity();
        best = std::max(best, t[k]);
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < components(); ++k) sum += std::exp(t[k] - best);
    return best + std::log(sum);
}

GaussianMixture fit_mixture(std::span<const double> x, int components, std::uint64_t seed, const EmOptions& opt,
                            std::vector<std::string>* warnings) {
    if (x.empty()) throw InvalidArgument("mixture fit needs at least one sample");
    if (components < 1) throw InvalidArgument("mixture needs at least one component");
    const std::size_t n = x.size();
    int g = components;
    if (static_cast<std::size_t>(g) > n) {
        g = static_cast<int>(n);
        if (warnings) {
            warnings->push_back("only " + std::to_string(n) + " samples for " + std::to_string(components) +
                                " components; using " + std::to_string(g));
        }
    }

    // k-means++ seeding
    std::mt19937_64 rng(seed);
    std::vector<double> centers;
    centers.push_back(x[rng() % n]);
    std::vector<double> d2(n);
    while (static_cast<int>(centers.size()) < g) {
        double total = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            double best = std::numeric_limits<double>::infinity();
            for (double c : centers) best = std::min(best, (x[i] - c) * (x[i] - c));
            d2[i] = best;
            total += best;
        }
        std::size_t pick = 0;
        if (total > 0.0) {
            double r = uniform01(rng) * total;
            for (pick = 0; pick + 1 < n; ++pick) {
                r -= d2[pick];
                if (r < 0.0) break;
            }
        } else {
            pick = rng() % n;
        }
        centers.push_back(x[pick]);
    }

    GaussianMixture m;
    m.weights.assign(g, 0.0);
    m.means = centers;
    m.variances.assign(g, 0.0);
    {
        double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
        double var = 0.0;
        for (double xi : x) var += (xi - mean) * (xi - mean);
        var = std::max(var / n, opt.variance_floor);
        std::vector<double> count(g, 0.0), sum2(g, 0.0);
        for (double xi : x) {
            int best = 0;
            for (int k = 1; k < g; ++k) {
                if (std::abs(xi - centers[k]) < std::abs(xi - centers[best])) best = k;
            }
            count[best] += 1.0;
            sum2[best] += (xi - centers[best]) * (xi - centers[best]);
        }
        for (int k = 0; k < g; ++k) {
            m.weights[k] = count[k] / n;
            m.variances[k] = count[k] > 1.0 ? std::max(sum2[k] / count[k], opt.variance_floor) : var;
        }
    }

    auto total_ll = [&] {
        double ll = 0.0;
        for (double xi : x) ll += m.log_density(xi);
        return ll;
    };
    m.log_likelihood.push_back(total_ll());

    std::vector<double> resp(n * g);
    for (int it = 0; it < opt.max_iterations; ++it) {
        // E step
        for (std::size_t i = 0; i < n; ++i) {
            double* r = resp.data() + i * g;
            double best = -std::numeric_limits<double>::infinity();
            for (int k = 0; k < g; ++k) {
                const double d = x[i] - m.means[k];
                r[k] = m.weights[k] > 0.0
                           ? std::log(m.weights[k]) - 0.5 * (std::log(m.variances[k]) + d * d / m.variances[k])
                           : -std::numeric_limits<double>::infinity();
                best = std::max(best, r[k]);
            }
            double sum = 0.0;
            for (int k = 0; k < g; ++k) sum += (r[k] = std::exp(r[k] - best));
            for (int k = 0; k < g; ++k) r[k] /= sum;
        }
        // M step
        for (int k = 0; k < g; ++k) {
            double nk = 0.0, s1 = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                nk += resp[i * g + k];
                s1 += resp[i * g + k] * x[i];
            }
            m.weights[k] = nk / n;
            if (nk <= 0.0) continue;  // dead component keeps its parameters
            const double mu = s1 / nk;
            double s2 = 0.0;
            for (std::size_t i = 0; i < n; ++i) s2 += resp[i * g + k] * (x[i] - mu) * (x[i] - mu);
            m.means[k] = mu;
            m.variances[k] = std::max(s2 / nk, opt.variance_floor);
        }
        const double ll = total_ll();
        const double gain = ll - m.log_likelihood.back();
        m.log_likelihood.push_back(ll);
        if (gain < opt.tolerance) break;
    }
    return m;
}

GmmModel gmm_fit(const Volume3D& v, const ScribbleSet& s, int components, std::uint64_t seed, const EmOptions& opt) {
    require_both(v, s);
    GmmModel m;
    const auto fg = class_intensities(v, s.foreground());
    const auto bg = class_intensities(v, s.background());
    m.foreground = fit_mixture(fg, components, splitmix(seed), opt, &m.warnings);
    m.background = fit_mixture(bg, components, splitmix(seed + 1), opt, &m.warnings);
    return m;
}

LikelihoodMap gmm_predict(const Volume3D& v, const GmmModel& m) {
    if (m.foreground.components() == 0 || m.background.components() == 0) {
        throw InvalidArgument("gmm model is not fitted");
    }
    LikelihoodMap out(v.dims(), v.spacing());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(v.size()); ++i) {
        const double lf = m.foreground.log_density(v[i]);
        const double lb = m.background.log_density(v[i]);
        out[i] = 1.0 / (1.0 + std::exp(lb - lf));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Forest
// ---------------------------------------------------------------------------

namespace {

struct Split {
    int feature = -1;
    double threshold = 0.0;
    double cost = std::numeric_limits<double>::infinity();
};

double gini_mass(double wf, double wb) {
    const double w = wf + wb;
    if (w <= 0.0) return 0.0;
    return w - (wf * wf + wb * wb) / w;  // = w * gini
}

std::vector<TreeNode> grow_tree(std::span<const double> x, int d, std::span<const int> labels, const ClassWeights& w,
                                const ForestConfig& cfg, std::uint64_t seed) {
    const std::size_t n = labels.size();
    std::mt19937_64 rng(seed);
    std::vector<std::size_t> sample(n);
    for (auto& s : sample) s = rng() % n;

    const int candidates = std::max(1, static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d)))));
    std::vector<int> feat_order(d);
    std::iota(feat_order.begin(), feat_order.end(), 0);

    std::vector<TreeNode> tree;
    struct Task {
        int node;
        std::size_t begin, end;
    };
    std::vector<Task> stack;
    tree.push_back({});
    stack.push_back({0, 0, n});
    std::vector<std::pair<double, std::size_t>> sorted;

    while (!stack.empty()) {
        const Task t = stack.back();
        stack.pop_back();
        const int depth = tree[t.node].depth;
        double wf = 0.0, wb = 0.0;
        for (std::size_t i = t.begin; i < t.end; ++i) (labels[sample[i]] ? wf : wb) += labels[sample[i]] ? w.foreground : w.background;
        tree[t.node].foreground = wf + wb > 0.0 ? wf / (wf + wb) : 0.0;
        const std::size_t count = t.end - t.begin;
        if (depth >= cfg.max_depth || count < static_cast<std::size_t>(cfg.min_samples_split) || wf == 0.0 ||
            wb == 0.0) {
            continue;
        }

        // partial Fisher-Yates for the candidate features
        for (int k = 0; k < candidates; ++k) {
            const int j = k + static_cast<int>(rng() % static_cast<std::uint64_t>(d - k));
            std::swap(feat_order[k], feat_order[j]);
        }
        Split best;
        for (int k = 0; k < candidates; ++k) {
            const int f = feat_order[k];
            sorted.clear();
            for (std::size_t i = t.begin; i < t.end; ++i) sorted.emplace_back(x[sample[i] * d + f], sample[i]);
            std::sort(sorted.begin(), sorted.end());
            double lf = 0.0, lb = 0.0;
            for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
                (labels[sorted[i].second] ? lf : lb) += labels[sorted[i].second] ? w.foreground : w.background;
                if (!(sorted[i].first < sorted[i + 1].first)) continue;
                const double cost = gini_mass(lf, lb) + gini_mass(wf - lf, wb - lb);
                if (cost < best.cost) best = {f, sorted[i].first, cost};
            }
        }
        if (best.feature < 0) continue;

        // partition sample[begin,end) in place
        auto mid = std::stable_partition(sample.begin() + t.begin, sample.begin() + t.end, [&](std::size_t s) {
            return x[s * d + best.feature] <= best.threshold;
        });
        const std::size_t m = static_cast<std::size_t>(mid - sample.begin());
        const int left = static_cast<int>(tree.size());
        tree.push_back({});
        tree.push_back({});
        tree[left].depth = tree[left + 1].depth = depth + 1;
        TreeNode& node = tree[t.node];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = left;
        node.right = left + 1;
        stack.push_back({left + 1, m, t.end});
        stack.push_back({left, t.begin, m});
    }
    return tree;
}

}  // namespace

ForestModel forest_fit(std::span<const double> x, int features, std::span<const int> labels, const ClassWeights& w,
                       const ForestConfig& cfg) {
    if (features < 1) throw InvalidArgument("forest needs at least one feature");
    if (x.size() != labels.size() * static_cast<std::size_t>(features)) {
        throw DimensionMismatch("forest feature matrix does not match label count");
    }
    if (cfg.trees < 1 || cfg.max_depth < 0 || cfg.min_samples_split < 2) {
        throw InvalidArgument("invalid forest configuration");
    }
    const bool has_fg = std::count(labels.begin(), labels.end(), 1) > 0;
    const bool has_bg = std::count(labels.begin(), labels.end(), 0) > 0;
    if (!has_fg || !has_bg) throw InsufficientScribbles("forest training needs samples of both classes");

    ForestModel m;
    m.config = cfg;
    m.features = features;
    m.weights = w;
    m.trees.resize(cfg.trees);
#pragma omp parallel for schedule(dynamic)
    for (int t = 0; t < cfg.trees; ++t) {
        m.trees[t] = grow_tree(x, features, labels, w, cfg, splitmix(cfg.seed * 1000003ULL + t));
    }
    return m;
}

double forest_predict_row(const ForestModel& m, const double* row) {
    double sum = 0.0;
    for (const auto& tree : m.trees) {
        int k = 0;
        while (tree[k].feature >= 0) k = row[tree[k].feature] <= tree[k].threshold ? tree[k].left : tree[k].right;
        sum += tree[k].foreground;
    }
    return sum / static_cast<double>(m.trees.size());
}

std::vector<double> forest_predict(const ForestModel& m, std::span<const double> x) {
    if (x.size() % m.features != 0) throw DimensionMismatch("feature matrix width does not match the forest");
    std::vector<double> out(x.size() / m.features);
#pragma omp parallel for schedule(static)
    for (long i = 0; i < static_cast<long>(out.size()); ++i) out[i] = forest_predict_row(m, x.data() + i * m.features);
    return out;
}

LikelihoodMap forest_predict(const ForestModel& m, const haar::FeatureVolume& fv, const Spacing& spacing) {
    if (fv.channels != m.features) throw DimensionMismatch("feature volume width does not match the forest");
    auto p = forest_predict(m, fv.values);
    return LikelihoodMap(fv.dims, spacing, std::move(p));
}

int tree_depth(const std::vector<TreeNode>& tree) {
    int d = 0;
    for (const auto& n : tree) d = std::max(d, n.depth);
    return d;
}

ScribbleFeatures scribble_features(const haar::FeatureVolume& fv, const ScribbleSet& s) {
    ScribbleFeatures out;
    auto add = [&](const std::set<Coord>& coords, int label) {
        for (const auto& c : coords) {
            if (!fv.dims.contains(c)) throw InvalidArgument("scribble outside the feature volume");
            const double* row = fv.at(fv.dims.index(c));
            out.x.insert(out.x.end(), row, row + fv.channels);
            out.labels.push_back(label);
        }
    };
    add(s.foreground(), 1);
    add(s.background(), 0);
    return out;
}

// ---------------------------------------------------------------------------

json to_json(const HistogramModel& m) {
    return {{"bins", m.bins}, {"foreground", m.foreground}, {"background", m.background}};
}

json to_json(const GaussianMixture& m) {
    return {{"weights", m.weights},
            {"means", m.means},
            {"variances", m.variances},
            {"log_likelihood", m.log_likelihood}};
}

json to_json(const GmmModel& m) {
    return {{"foreground", to_json(m.foreground)}, {"background", to_json(m.background)}, {"warnings", m.warnings}};
}

json to_json(const ForestModel& m) {
    json trees = json::array();
    for (const auto& t : m.trees) {
        json nodes = json::array();
        for (const auto& n : t) {
            nodes.push_back({{"feature", n.feature},
                             {"threshold", n.threshold},
                             {"left", n.left},
                             {"right", n.right},
                             {"foreground", n.foreground},
                             {"depth", n.depth}});
        }
        trees.push_back(nodes);
    }
    return {{"trees", trees},
            {"features", m.features},
            {"class_weights", {m.weights.foreground, m.weights.background}},
            {"config",
             {{"trees", m.config.trees},
              {"max_depth", m.config.max_depth},
              {"min_samples_split", m.config.min_samples_split},
              {"seed", m.config.seed}}}};
}

}  // namespace econet::baselines
