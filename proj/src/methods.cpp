#include "econet/methods.hpp"

#include <chrono>

namespace econet {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t) { return std::chrono::duration<double>(Clock::now() - t).count(); }

class EcoNetMethod : public LikelihoodMethod {
public:
    EcoNetMethod(std::string id, EcoNetConfig cfg, bool warm) : id_(std::move(id)), cfg_(std::move(cfg)), warm_(warm) {}

    std::string id() const override { return id_; }

    MethodUpdate update(const Volume3D& v, const ScribbleSet& s) override {
        MethodUpdate u;
        auto t0 = Clock::now();
        EcoNetParams next = train_online(v, s, cfg_, warm_ && params_ ? &*params_ : nullptr);
        if (!warm_ && params_) next.rounds_trained += params_->rounds_trained;
        u.train_seconds = seconds_since(t0);
        t0 = Clock::now();
        u.likelihood = infer_likelihood(v, next);
        u.infer_seconds = seconds_since(t0);
        params_ = std::move(next);
        return u;
    }

    json state() const override { return params_ ? checkpoint_to_json(*params_) : json(nullptr); }
    void restore(const json& j) override {
        if (j.is_null()) {
            params_.reset();
            return;
        }
        EcoNetParams p = checkpoint_from_json(j);
        if (!p.config.same_architecture(cfg_)) throw InvalidArgument("checkpoint architecture does not match method");
        params_ = std::move(p);
    }

private:
    std::string id_;
    EcoNetConfig cfg_;
    bool warm_;
    std::optional<EcoNetParams> params_;
};

class HistogramMethod : public LikelihoodMethod {
public:
    explicit HistogramMethod(int bins) : bins_(bins) {}
    std::string id() const override { return "histogram"; }
    MethodUpdate update(const Volume3D& v, const ScribbleSet& s) override {
        MethodUpdate u;
        auto t0 = Clock::now();
        model_ = baselines::histogram_fit(v, s, bins_);
        u.train_seconds = seconds_since(t0);
        t0 = Clock::now();
        u.likelihood = baselines::histogram_predict(v, model_);
        u.infer_seconds = seconds_since(t0);
        return u;
    }
    json state() const override { return baselines::to_json(model_); }

private:
    int bins_;
    baselines::HistogramModel model_;
};

class GmmMethod : public LikelihoodMethod {
public:
    GmmMethod(int components, std::uint64_t seed) : components_(components), seed_(seed) {}
    std::string id() const override { return "gmm"; }
    MethodUpdate update(const Volume3D& v, const ScribbleSet& s) override {
        MethodUpdate u;
        auto t0 = Clock::now();
        model_ = baselines::gmm_fit(v, s, components_, seed_ + round_++);
        u.train_seconds = seconds_since(t0);
        t0 = Clock::now();
        u.likelihood = baselines::gmm_predict(v, model_);
        u.infer_seconds = seconds_since(t0);
        return u;
    }
    json state() const override { return baselines::to_json(model_); }

private:
    int components_;
    std::uint64_t seed_;
    std::uint64_t round_ = 0;
    baselines::GmmModel model_;
};

// Fully retrained every round with class weights from the current scribbles.
class ForestMethod : public LikelihoodMethod {
public:
    ForestMethod(baselines::ForestConfig cfg, haar::BankSpec bank, std::uint64_t seed)
        : cfg_(cfg), bank_(haar::HaarBank::make(bank)), seed_(seed) {}
    std::string id() const override { return "dybaorf-haar"; }
    MethodUpdate update(const Volume3D& v, const ScribbleSet& s) override {
        MethodUpdate u;
        auto t0 = Clock::now();
        const ClassWeights w = class_weights(s);
        s.require_within(v.dims());
        // The feature volume depends only on the volume; reuse it across rounds.
        if (!features_ || !(features_volume_ == v)) {
            features_ = haar::haar_feature_volume(v, bank_);
            features_volume_ = v;
        }
        const auto train = baselines::scribble_features(*features_, s);
        auto cfg = cfg_;
        cfg.seed = seed_ * 7919 + round_++;
        model_ = baselines::forest_fit(train.x, features_->channels, train.labels, w, cfg);
        u.train_seconds = seconds_since(t0);
        t0 = Clock::now();
        u.likelihood = baselines::forest_predict(model_, *features_, v.spacing());
        u.infer_seconds = seconds_since(t0);
        return u;
    }
    json state() const override { return baselines::to_json(model_); }

private:
    baselines::ForestConfig cfg_;
    haar::HaarBank bank_;
    std::uint64_t seed_;
    std::uint64_t round_ = 0;
    baselines::ForestModel model_;
    std::optional<haar::FeatureVolume> features_;
    Volume3D features_volume_;
};

}  // namespace

MethodUpdate FunctionMethod::update(const Volume3D& v, const ScribbleSet& s) {
    MethodUpdate u;
    const auto t0 = Clock::now();
    u.likelihood = fn_(v, s);
    u.infer_seconds = seconds_since(t0);
    return u;
}

const std::vector<std::string>& method_ids() {
    static const std::vector<std::string> ids{"econet", "econet-haar", "dybaorf-haar", "gmm", "histogram"};
    return ids;
}

bool is_method_id(const std::string& id) {
    for (const auto& m : method_ids()) {
        if (m == id) return true;
    }
    return false;
}

std::unique_ptr<LikelihoodMethod> make_method(const std::string& id, const MethodConfig& cfg, std::uint64_t seed) {
    if (id == "econet" || id == "econet-haar") {
        EcoNetConfig e = cfg.econet;
        e.seed = seed;
        e.feature_mode = id == "econet" ? FeatureMode::learned_conv : FeatureMode::haar;
        e.validate();
        return std::make_unique<EcoNetMethod>(id, e, cfg.warm_start);
    }
    if (id == "histogram") return std::make_unique<HistogramMethod>(cfg.histogram_bins);
    if (id == "gmm") return std::make_unique<GmmMethod>(cfg.gmm_components, seed);
    if (id == "dybaorf-haar") return std::make_unique<ForestMethod>(cfg.forest, cfg.forest_bank, seed);
    throw InvalidArgument("unknown method '" + id + "'");
}

json to_json(const MethodConfig& c) {
    return {{"econet", to_json(c.econet)},
            {"warm_start", c.warm_start},
            {"histogram_bins", c.histogram_bins},
            {"gmm_components", c.gmm_components},
            {"forest",
             {{"trees", c.forest.trees},
              {"max_depth", c.forest.max_depth},
              {"min_samples_split", c.forest.min_samples_split}}},
            {"forest_bank", {{"window", c.forest_bank.window}, {"size", c.forest_bank.size}, {"seed", c.forest_bank.seed}}}};
}

MethodConfig method_config_from_json(const json& j) {
    MethodConfig c;
    if (j.contains("econet")) c.econet = econet_config_from_json(j.at("econet"));
    c.warm_start = j.value("warm_start", c.warm_start);
    c.histogram_bins = j.value("histogram_bins", c.histogram_bins);
    c.gmm_components = j.value("gmm_components", c.gmm_components);
    if (j.contains("forest")) {
        const auto& f = j.at("forest");
        c.forest.trees = f.value("trees", c.forest.trees);
        c.forest.max_depth = f.value("max_depth", c.forest.max_depth);
        c.forest.min_samples_split = f.value("min_samples_split", c.forest.min_samples_split);
    }
    if (j.contains("forest_bank")) {
        const auto& b = j.at("forest_bank");
        c.forest_bank.window = b.value("window", c.forest_bank.window);
        c.forest_bank.size = b.value("size", c.forest_bank.size);
        c.forest_bank.seed = b.value("seed", c.forest_bank.seed);
    }
    if (c.histogram_bins < 2) throw InvalidArgument("histogram_bins must be >= 2");
    if (c.gmm_components < 1) throw InvalidArgument("gmm_components must be >= 1");
    return c;
}

}  // namespace econet
