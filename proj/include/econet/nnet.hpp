#pragma once

// A small from-scratch network engine: exactly the layers the online
// likelihood model needs, each with an explicit backward pass.

#include <cstdint>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "econet/tensor.hpp"

namespace econet::nn {

enum class Mode { train, eval };
enum class Padding { valid, same };
enum class LayerKind { conv3d, batchnorm, linear };

std::string to_string(LayerKind kind);

// Parameters of one layer.
//   conv3d    weights [k,k,k,in,out], biases [out]
//   linear    weights [in,out], biases [out]
//   batchnorm weights = gamma [c], biases = beta [c], plus running stats
struct LayerParams {
    LayerKind kind = LayerKind::linear;
    int in_channels = 0;
    int out_channels = 0;
    int kernel = 1;
    std::vector<double> weights;
    std::vector<double> biases;
    std::vector<double> running_mean;
    std::vector<double> running_var;
    double momentum = 0.1;
    double eps = 1e-5;

    // Fan-in scaled uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)), zero bias.
    static LayerParams conv3d(int kernel, int in_channels, int out_channels, std::mt19937_64& rng);
    static LayerParams linear(int in, int out, std::mt19937_64& rng);
    // gamma = 1, beta = 0, running mean 0, running var 1.
    static LayerParams batchnorm(int channels, double momentum = 0.1, double eps = 1e-5);

    std::size_t learnable_count() const { return weights.size() + biases.size(); }
    void validate() const;

    friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct LayerGrads {
    std::vector<double> weights;
    std::vector<double> biases;

    static LayerGrads zeros_like(const LayerParams& p) {
        return {std::vector<double>(p.weights.size(), 0.0), std::vector<double>(p.biases.size(), 0.0)};
    }
};

// --- convolution -----------------------------------------------------------

// x: [N, D, H, W, C_in]. `same` pads every spatial side by k/2 with edge
// replication first, so the spatial extent is preserved.
Tensor conv3d_forward(const Tensor& x, const LayerParams& p, Padding padding = Padding::valid);
// Valid convolution only. Accumulates into g; returns dL/dx when
// `need_input_grad`, otherwise an empty tensor.
Tensor conv3d_backward(const Tensor& x, const LayerParams& p, const Tensor& dy, LayerGrads& g,
                       bool need_input_grad = true);
// Edge-replication padding of the spatial axes of [N,D,H,W,C].
Tensor replicate_pad(const Tensor& x, int pad);

// --- linear ------------------------------------------------------------------

// Applies to the last axis, so [rows, in] and [N,D,H,W,in] both work; the
// latter is the 1x1x1 convolution form.
Tensor linear_forward(const Tensor& x, const LayerParams& p);
Tensor linear_backward(const Tensor& x, const LayerParams& p, const Tensor& dy, LayerGrads& g);

// --- batch normalization ---------------------------------------------------

struct BatchNormCache {
    Mode mode = Mode::eval;
    std::vector<double> inv_std;  // per channel
    Tensor xhat;                  // normalized input
};

// Channels are the last axis; statistics are taken over all other axes.
// Train mode uses batch statistics (biased variance) and updates the running
// statistics with momentum (unbiased variance, as the common frameworks do).
// Throws InvalidArgument in train mode when fewer than 2 rows are given.
Tensor batchnorm_forward(const Tensor& x, LayerParams& p, Mode mode, BatchNormCache* cache = nullptr);
// Same normalization but never updates the running statistics.
Tensor batchnorm_apply(const Tensor& x, const LayerParams& p, Mode mode, BatchNormCache* cache = nullptr);
Tensor batchnorm_backward(const Tensor& dy, const LayerParams& p, const BatchNormCache& cache, LayerGrads& g);

// --- activations -------------------------------------------------------------

Tensor relu_forward(const Tensor& x);
// Uses the forward output to find the active units.
Tensor relu_backward(const Tensor& y, const Tensor& dy);

struct DropoutMask {
    std::vector<std::uint8_t> keep;
    double scale = 1.0;
};

// Inverted dropout. Eval mode and rate 0 are the identity.
Tensor dropout_forward(const Tensor& x, double rate, Mode mode, std::mt19937_64& rng, DropoutMask* mask = nullptr);
Tensor dropout_backward(const Tensor& dy, const DropoutMask& mask);

// Softmax over the last axis.
Tensor softmax(const Tensor& logits);

// --- loss --------------------------------------------------------------------

struct LossResult {
    double loss = 0.0;
    Tensor grad;  // dL/dlogits, same shape as logits
};

inline constexpr double kProbabilityClamp = 1e-7;

// Scribble-balanced cross-entropy over [N, 2] logits (column 0 background,
// column 1 foreground):
//   L = -sum_i [ w_f y_i log p_i + w_b (1 - y_i) log(1 - p_i) ]
// with p_i the softmax foreground probability clamped to [eps, 1-eps]. The
// returned gradient is the exact gradient wherever the clamp is inactive.
LossResult weighted_softmax_ce(const Tensor& logits, std::span<const int> labels, double w_f, double w_b);

// --- optimizer ---------------------------------------------------------------

// Piecewise constant learning rate keyed by the 0-based epoch at which each
// value takes effect.
class LrSchedule {
public:
    LrSchedule() : steps_{{0, 0.01}, {140, 0.001}} {}
    explicit LrSchedule(std::map<int, double> steps);

    double at(int epoch) const;
    const std::map<int, double>& steps() const { return steps_; }

    friend bool operator==(const LrSchedule&, const LrSchedule&) = default;

private:
    std::map<int, double> steps_;
};

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    long step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double lr = 0.01;

    friend bool operator==(const AdamState&, const AdamState&) = default;
};

// One Adam update with bias correction over a list of parameter arrays.
// Accumulators are created on first use.
void adam_step(std::span<std::vector<double>* const> params, std::span<const std::vector<double>* const> grads,
               AdamState& st);

// --- serialization -----------------------------------------------------------

nlohmann::json to_json(const LayerParams& p);
LayerParams layer_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AdamState& s);
AdamState adam_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LrSchedule& s);
LrSchedule schedule_from_json(const nlohmann::json& j);

}  // namespace econet::nn
