#pragma once

// Likelihood methods behind one interface so the scribbler protocol, the
// bench runner and the HTTP service treat ECONet and the baselines alike.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "econet/annotation.hpp"
#include "econet/baselines.hpp"
#include "econet/econet.hpp"
#include "econet/volume.hpp"

namespace econet {

struct MethodConfig {
    // Used by "econet"; "econet-haar" uses the same settings in Haar mode.
    EcoNetConfig econet{};
    // Continue from the previous round's weights.
    bool warm_start = true;
    int histogram_bins = 128;
    int gmm_components = 20;
    baselines::ForestConfig forest{};
    // Haar bank for the forest.
    haar::BankSpec forest_bank{};

    friend bool operator==(const MethodConfig&, const MethodConfig&) = default;
};

nlohmann::json to_json(const MethodConfig& c);
MethodConfig method_config_from_json(const nlohmann::json& j);

struct MethodUpdate {
    LikelihoodMap likelihood;
    double train_seconds = 0.0;
    double infer_seconds = 0.0;
};

class LikelihoodMethod {
public:
    virtual ~LikelihoodMethod() = default;
    virtual std::string id() const = 0;
    // Fits on all scribbles so far and returns the likelihood of every voxel
    // of the normalized volume `v`.
    virtual MethodUpdate update(const Volume3D& v, const ScribbleSet& s) = 0;
    // Model state for checkpointing / inspection; null when stateless.
    virtual nlohmann::json state() const { return nullptr; }
    // Restores what state() returned.
    virtual void restore(const nlohmann::json&) {}
};

// Ids: "econet", "econet-haar", "dybaorf-haar", "gmm", "histogram".
const std::vector<std::string>& method_ids();
bool is_method_id(const std::string& id);

// `seed` makes every stochastic part of the method reproducible. Throws
// InvalidArgument for unknown ids.
std::unique_ptr<LikelihoodMethod> make_method(const std::string& id, const MethodConfig& cfg, std::uint64_t seed);

// Adapter for tests and experiments.
class FunctionMethod : public LikelihoodMethod {
public:
    using Fn = std::function<LikelihoodMap(const Volume3D&, const ScribbleSet&)>;
    FunctionMethod(std::string id, Fn fn) : id_(std::move(id)), fn_(std::move(fn)) {}
    std::string id() const override { return id_; }
    MethodUpdate update(const Volume3D& v, const ScribbleSet& s) override;

private:
    std::string id_;
    Fn fn_;
};

}  // namespace econet
