#pragma once

// Classical likelihood models the online network is compared against. All
// posteriors use equal class priors; spatial balance is the graph cut's job.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "econet/annotation.hpp"
#include "econet/haar.hpp"
#include "econet/volume.hpp"

namespace econet::baselines {

// --- intensity histogram -----------------------------------------------------

struct HistogramModel {
    int bins = 128;
    std::vector<double> foreground;  // per-bin probability, sums to 1
    std::vector<double> background;
};

// Bin of a normalized intensity; values are clamped to [0,1] and 1.0 falls
// in the last bin.
int histogram_bin(double x, int bins);

// Every bin starts at one count (Laplace smoothing) before normalization.
HistogramModel histogram_fit(const Volume3D& v, const ScribbleSet& s, int bins = 128);
// p = h_f / (h_f + h_b) per voxel.
LikelihoodMap histogram_predict(const Volume3D& v, const HistogramModel& m);

// --- Gaussian mixtures --------------------------------------------------------

struct GaussianMixture {
    std::vector<double> weights;
    std::vector<double> means;
    std::vector<double> variances;
    // Log-likelihood after initialization and after every EM iteration.
    std::vector<double> log_likelihood;

    std::size_t components() const { return weights.size(); }
    double log_density(double x) const;
};

struct EmOptions {
    int max_iterations = 100;
    double tolerance = 1e-6;  // stop when the log-likelihood gains less
    double variance_floor = 1e-6;
};

// k-means++ seeding followed by EM. Fewer samples than components reduces
// the component count to the sample count and appends to `warnings`.
GaussianMixture fit_mixture(std::span<const double> samples, int components, std::uint64_t seed,
                            const EmOptions& opt = {}, std::vector<std::string>* warnings = nullptr);

struct GmmModel {
    GaussianMixture foreground;
    GaussianMixture background;
    std::vector<std::string> warnings;
};

GmmModel gmm_fit(const Volume3D& v, const ScribbleSet& s, int components = 20, std::uint64_t seed = 0,
                 const EmOptions& opt = {});
LikelihoodMap gmm_predict(const Volume3D& v, const GmmModel& m);

// --- class-weighted random forest --------------------------------------------

struct ForestConfig {
    int trees = 50;
    int max_depth = 20;
    int min_samples_split = 6;
    std::uint64_t seed = 0;
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;  // x[feature] <= threshold goes left
    int left = -1;
    int right = -1;
    double foreground = 0.0;  // leaf: class-weighted foreground fraction
    int depth = 0;
};

struct ForestModel {
    ForestConfig config;
    int features = 0;
    ClassWeights weights;
    std::vector<std::vector<TreeNode>> trees;
};

// `x` is row-major [labels.size(), features]. Each tree is grown on a
// bootstrap sample, choosing among ceil(sqrt(features)) random features per
// node by class-weighted Gini impurity. Thresholds are training values, so
// predictions are unchanged by strictly increasing feature transforms.
ForestModel forest_fit(std::span<const double> x, int features, std::span<const int> labels, const ClassWeights& w,
                       const ForestConfig& cfg);
// Mean leaf foreground fraction over the trees.
double forest_predict_row(const ForestModel& m, const double* row);
std::vector<double> forest_predict(const ForestModel& m, std::span<const double> x);
LikelihoodMap forest_predict(const ForestModel& m, const haar::FeatureVolume& fv, const Spacing& spacing);
int tree_depth(const std::vector<TreeNode>& tree);

// Haar rows at the scribbled voxels (foreground first) and their labels.
struct ScribbleFeatures {
    std::vector<double> x;
    std::vector<int> labels;
};
ScribbleFeatures scribble_features(const haar::FeatureVolume& fv, const ScribbleSet& s);

// --- serialization ---------------------------------------------------------------

nlohmann::json to_json(const HistogramModel& m);
nlohmann::json to_json(const GaussianMixture& m);
nlohmann::json to_json(const GmmModel& m);
nlohmann::json to_json(const ForestModel& m);

}  // namespace econet::baselines
