#pragma once

// The online likelihood network: a K^3 feature convolution (or a fixed Haar
// feature bank) followed by small fully-connected layers. Training sees only
// K^3 patches centred on scribbled voxels; inference runs the same weights
// fully convolutionally over the whole volume.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "econet/annotation.hpp"
#include "econet/haar.hpp"
#include "econet/nnet.hpp"
#include "econet/volume.hpp"

namespace econet {

enum class FeatureMode { learned_conv, haar };

std::string to_string(FeatureMode mode);
FeatureMode feature_mode_from_string(const std::string& s);

struct EcoNetConfig {
    int kernel = 7;
    int filters = 128;
    std::vector<int> fc_sizes{32, 16};
    int num_classes = 2;
    // Stacked K^3 convolutions; the patch edge grows to conv_layers*(K-1)+1.
    int conv_layers = 1;
    double dropout = 0.3;
    int epochs = 200;
    nn::LrSchedule lr_schedule{};
    std::uint64_t seed = 0;
    FeatureMode feature_mode = FeatureMode::learned_conv;
    // Haar mode only; the bank window follows `kernel`.
    int haar_features = 64;
    std::uint64_t haar_seed = 0;

    // Patch counts up to this train as one full batch per epoch; larger sets
    // use shuffled minibatches of `minibatch`.
    std::size_t full_batch_limit = 4096;
    std::size_t minibatch = 1024;
    // Upper bound on training activations per batch. Only binds for stacked
    // convolutions, whose per-patch activations are large.
    std::size_t activation_budget_mb = 512;

    int patch_edge() const;
    void validate() const;
    bool same_architecture(const EcoNetConfig& o) const;

    friend bool operator==(const EcoNetConfig&, const EcoNetConfig&) = default;
};

nlohmann::json to_json(const EcoNetConfig& c);
// Missing keys keep their defaults.
EcoNetConfig econet_config_from_json(const nlohmann::json& j);

struct EcoNetParams {
    EcoNetConfig config;
    // [conv, batchnorm] x conv_layers (learned mode only), then
    // [linear, batchnorm] per fc size, then the output linear layer.
    std::vector<nn::LayerParams> layers;
    std::optional<haar::HaarBank> bank;
    std::vector<double> epoch_loss;
    double train_seconds = 0.0;
    int rounds_trained = 0;
    nn::AdamState adam;

    std::size_t learnable_count() const;
    // Convolution weights and biases, batch norm excluded (0 in Haar mode).
    std::size_t conv_learnable_count() const;
    int feature_width() const;  // input width of the first linear layer
};

// Deterministic in cfg.seed.
EcoNetParams build_model(const EcoNetConfig& cfg);

struct TrainOptions {
    // Called after every epoch; returning false ends training early.
    std::function<bool(int epoch, double loss)> on_epoch;
};

// Trains on patches around the scribbles for cfg.epochs epochs with the
// scribble-balanced loss. With `warm`, continues from those weights and batch
// norm statistics but restarts the optimizer and learning-rate schedule.
// Throws InsufficientScribbles or TrainingDiverged.
EcoNetParams train_online(const Volume3D& v, const ScribbleSet& s, const EcoNetConfig& cfg,
                          const EcoNetParams* warm = nullptr, const TrainOptions& options = {});

// Foreground probability for every voxel; output dims equal input dims.
LikelihoodMap infer_likelihood(const Volume3D& v, const EcoNetParams& p);

// Network input built from a patch batch: [N,P,P,P,1] in learned mode,
// [N, features] in Haar mode.
nn::Tensor network_input(const EcoNetParams& p, const PatchBatch& batch);

// Eval-mode logits [N,2] for a prepared network input.
nn::Tensor forward_logits(const EcoNetParams& p, const nn::Tensor& input);

// Eval-mode foreground probability of each patch.
std::vector<double> patch_likelihood(const EcoNetParams& p, const PatchBatch& batch);

struct LossAndGrads {
    double loss = 0.0;
    std::vector<nn::LayerGrads> grads;  // parallel to params.layers
};

// Forward + backward on one batch. In train mode batch norm uses batch
// statistics and its running statistics in `p` are updated; dropout uses
// `rng`. In eval mode `p` is not modified and dropout is off.
LossAndGrads loss_and_gradients(EcoNetParams& p, const nn::Tensor& input, std::span<const int> labels,
                                const ClassWeights& w, nn::Mode mode, std::mt19937_64* rng = nullptr);

// Checkpoint: one JSON document tagged with kCheckpointFormat.
inline constexpr const char* kCheckpointFormat = "econet-checkpoint/1";
nlohmann::json checkpoint_to_json(const EcoNetParams& p);
EcoNetParams checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const EcoNetParams& p, const std::filesystem::path& path);
EcoNetParams load_checkpoint(const std::filesystem::path& path);

}  // namespace econet
