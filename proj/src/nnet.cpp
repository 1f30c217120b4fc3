#include "econet/nnet.hpp"

#include <algorithm>
#include <cmath>

#include "econet/kernels.hpp"

namespace econet::nn {

using json = nlohmann::json;

bool Tensor::all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string to_string(LayerKind kind) {
    switch (kind) {
        case LayerKind::conv3d: return "conv3d";
        case LayerKind::batchnorm: return "batchnorm";
        case LayerKind::linear: return "linear";
    }
    return "?";
}

namespace {

LayerKind kind_from_string(const std::string& s) {
    if (s == "conv3d") return LayerKind::conv3d;
    if (s == "batchnorm") return LayerKind::batchnorm;
    if (s == "linear") return LayerKind::linear;
    throw FormatError("unknown layer kind: " + s);
}

void fill_uniform(std::vector<double>& w, double bound, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : w) v = dist(rng);
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

LayerParams LayerParams::conv3d(int kernel, int in_channels, int out_channels, std::mt19937_64& rng) {
    LayerParams p;
    p.kind = LayerKind::conv3d;
    p.kernel = kernel;
    p.in_channels = in_channels;
    p.out_channels = out_channels;
    const int fan_in = kernel * kernel * kernel * in_channels;
    p.weights.resize(static_cast<std::size_t>(fan_in) * out_channels);
    fill_uniform(p.weights, std::sqrt(6.0 / fan_in), rng);
    p.biases.assign(out_channels, 0.0);
    p.validate();
    return p;
}

LayerParams LayerParams::linear(int in, int out, std::mt19937_64& rng) {
    LayerParams p;
    p.kind = LayerKind::linear;
    p.in_channels = in;
    p.out_channels = out;
    p.weights.resize(static_cast<std::size_t>(in) * out);
    fill_uniform(p.weights, std::sqrt(6.0 / in), rng);
    p.biases.assign(out, 0.0);
    p.validate();
    return p;
}

LayerParams LayerParams::batchnorm(int channels, double momentum, double eps) {
    LayerParams p;
    p.kind = LayerKind::batchnorm;
    p.in_channels = p.out_channels = channels;
    p.weights.assign(channels, 1.0);
    p.biases.assign(channels, 0.0);
    p.running_mean.assign(channels, 0.0);
    p.running_var.assign(channels, 1.0);
    p.momentum = momentum;
    p.eps = eps;
    p.validate();
    return p;
}

void LayerParams::validate() const {
    if (in_channels <= 0 || out_channels <= 0) throw InvalidArgument("layer channel counts must be positive");
    const auto c_out = static_cast<std::size_t>(out_channels);
    switch (kind) {
        case LayerKind::conv3d:
            if (kernel <= 0) throw InvalidArgument("conv3d kernel must be positive");
            if (weights.size() != static_cast<std::size_t>(kernel) * kernel * kernel * in_channels * c_out ||
                biases.size() != c_out) {
                throw DimensionMismatch("conv3d parameter shapes do not match its configuration");
            }
            break;
        case LayerKind::linear:
            if (weights.size() != static_cast<std::size_t>(in_channels) * c_out || biases.size() != c_out) {
                throw DimensionMismatch("linear parameter shapes do not match its configuration");
            }
            break;
        case LayerKind::batchnorm:
            if (in_channels != out_channels || weights.size() != c_out || biases.size() != c_out ||
                running_mean.size() != c_out || running_var.size() != c_out) {
                throw DimensionMismatch("batchnorm parameter shapes do not match its configuration");
            }
            for (double v : running_var) {
                if (!(v >= 0.0)) throw InvalidArgument("batchnorm running variance must be >= 0");
            }
            break;
    }
}

// --- convolution -------------------------------------------------------------

Tensor replicate_pad(const Tensor& x, int pad) {
    if (x.rank() != 5) throw DimensionMismatch("replicate_pad expects [N,D,H,W,C], got " + x.shape_string());
    if (pad == 0) return x;
    const int n = x.dim(0), d = x.dim(1), h = x.dim(2), w = x.dim(3), c = x.dim(4);
    Tensor out({n, d + 2 * pad, h + 2 * pad, w + 2 * pad, c});
    double* o = out.data();
    for (int s = 0; s < n; ++s)
        for (int z = 0; z < d + 2 * pad; ++z) {
            const int sz = std::clamp(z - pad, 0, d - 1);
            for (int y = 0; y < h + 2 * pad; ++y) {
                const int sy = std::clamp(y - pad, 0, h - 1);
                for (int xx = 0; xx < w + 2 * pad; ++xx) {
                    const int sx = std::clamp(xx - pad, 0, w - 1);
                    const double* src =
                        x.data() + ((((static_cast<std::size_t>(s) * d + sz) * h + sy) * w + sx) * c);
                    o = std::copy(src, src + c, o);
                }
            }
        }
    return out;
}

namespace {

kernels::Conv3dShape conv_shape(const Tensor& x, const LayerParams& p) {
    if (p.kind != LayerKind::conv3d) throw InvalidArgument("expected conv3d parameters");
    if (x.rank() != 5) throw DimensionMismatch("conv3d input must be [N,D,H,W,C], got " + x.shape_string());
    if (x.dim(4) != p.in_channels) {
        throw DimensionMismatch("conv3d expects " + std::to_string(p.in_channels) + " input channels, got " +
                                std::to_string(x.dim(4)));
    }
    kernels::Conv3dShape s{x.dim(0), x.dim(1), x.dim(2), x.dim(3), x.dim(4), p.kernel, p.out_channels};
    s.validate();
    return s;
}

}  // namespace

Tensor conv3d_forward(const Tensor& x, const LayerParams& p, Padding padding) {
    if (padding == Padding::same) return conv3d_forward(replicate_pad(x, p.kernel / 2), p, Padding::valid);
    const auto s = conv_shape(x, p);
    Tensor y({s.batch, s.out_d(), s.out_h(), s.out_w(), s.out_c});
    kernels::conv3d_forward(s, x.values(), p.weights, p.biases, y.values());
    return y;
}

Tensor conv3d_backward(const Tensor& x, const LayerParams& p, const Tensor& dy, LayerGrads& g, bool need_input_grad) {
    const auto s = conv_shape(x, p);
    if (dy.size() != s.output_size()) throw DimensionMismatch("conv3d backward: gradient shape mismatch");
    Tensor dx;
    if (need_input_grad) dx = Tensor(x.shape());
    kernels::conv3d_backward(s, x.values(), p.weights, dy.values(), g.weights, g.biases,
                             need_input_grad ? dx.values() : std::span<double>{});
    return dx;
}

// --- linear ------------------------------------------------------------------

Tensor linear_forward(const Tensor& x, const LayerParams& p) {
    if (p.kind != LayerKind::linear) throw InvalidArgument("expected linear parameters");
    if (x.last() != p.in_channels) {
        throw DimensionMismatch("linear expects " + std::to_string(p.in_channels) + " features, got " +
                                x.shape_string());
    }
    auto shape = x.shape();
    shape.back() = p.out_channels;
    Tensor y(shape);
    kernels::dense_forward(x.rows(), p.in_channels, p.out_channels, x.values(), p.weights, p.biases, y.values());
    return y;
}

Tensor linear_backward(const Tensor& x, const LayerParams& p, const Tensor& dy, LayerGrads& g) {
    if (dy.rows() != x.rows() || dy.last() != p.out_channels) {
        throw DimensionMismatch("linear backward: gradient shape mismatch");
    }
    Tensor dx(x.shape());
    kernels::dense_backward(x.rows(), p.in_channels, p.out_channels, x.values(), p.weights, dy.values(), g.weights,
                            g.biases, dx.values());
    return dx;
}

// --- batch normalization -------------------------------------------------------

namespace {

Tensor batchnorm_impl(const Tensor& x, const LayerParams& p, Mode mode, BatchNormCache* cache,
                      std::vector<double>* batch_mean, std::vector<double>* batch_var) {
    if (p.kind != LayerKind::batchnorm) throw InvalidArgument("expected batchnorm parameters");
    const int c = p.out_channels;
    if (x.last() != c) throw DimensionMismatch("batchnorm channel mismatch for input " + x.shape_string());
    const std::size_t rows = x.rows();
    std::vector<double> mean(c, 0.0), var(c, 0.0), inv_std(c);
    if (mode == Mode::train) {
        if (rows < 2) throw InvalidArgument("batchnorm in train mode needs a batch of at least 2");
        const double* px = x.data();
        for (std::size_t r = 0; r < rows; ++r)
            for (int k = 0; k < c; ++k) mean[k] += px[r * c + k];
        for (auto& m : mean) m /= static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
            for (int k = 0; k < c; ++k) {
                const double d = px[r * c + k] - mean[k];
                var[k] += d * d;
            }
        for (auto& v : var) v /= static_cast<double>(rows);
    } else {
        mean = p.running_mean;
        var = p.running_var;
    }
    for (int k = 0; k < c; ++k) inv_std[k] = 1.0 / std::sqrt(var[k] + p.eps);

    Tensor y(x.shape());
    Tensor xhat;
    if (cache) xhat = Tensor(x.shape());
    const double* px = x.data();
    double* py = y.data();
    for (std::size_t r = 0; r < rows; ++r)
        for (int k = 0; k < c; ++k) {
            const std::size_t i = r * c + k;
            const double h = (px[i] - mean[k]) * inv_std[k];
            if (cache) xhat[i] = h;
            py[i] = p.weights[k] * h + p.biases[k];
        }
    if (cache) {
        cache->mode = mode;
        cache->inv_std = std::move(inv_std);
        cache->xhat = std::move(xhat);
    }
    if (batch_mean) *batch_mean = std::move(mean);
    if (batch_var) *batch_var = std::move(var);
    return y;
}

}  // namespace

Tensor batchnorm_apply(const Tensor& x, const LayerParams& p, Mode mode, BatchNormCache* cache) {
    return batchnorm_impl(x, p, mode, cache, nullptr, nullptr);
}

Tensor batchnorm_forward(const Tensor& x, LayerParams& p, Mode mode, BatchNormCache* cache) {
    if (mode == Mode::eval) return batchnorm_impl(x, p, mode, cache, nullptr, nullptr);
    std::vector<double> mean, var;
    Tensor y = batchnorm_impl(x, p, mode, cache, &mean, &var);
    const double n = static_cast<double>(x.rows());
    const double unbias = n / (n - 1.0);
    for (int k = 0; k < p.out_channels; ++k) {
        p.running_mean[k] = (1.0 - p.momentum) * p.running_mean[k] + p.momentum * mean[k];
        p.running_var[k] = (1.0 - p.momentum) * p.running_var[k] + p.momentum * var[k] * unbias;
    }
    return y;
}

Tensor batchnorm_backward(const Tensor& dy, const LayerParams& p, const BatchNormCache& cache, LayerGrads& g) {
    const int c = p.out_channels;
    if (dy.size() != cache.xhat.size() || dy.last() != c) {
        throw DimensionMismatch("batchnorm backward: gradient shape mismatch");
    }
    const std::size_t rows = dy.rows();
    const double* pg = dy.data();
    const double* ph = cache.xhat.data();
    std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
    for (std::size_t r = 0; r < rows; ++r)
        for (int k = 0; k < c; ++k) {
            sum_dy[k] += pg[r * c + k];
            sum_dy_xhat[k] += pg[r * c + k] * ph[r * c + k];
        }
    for (int k = 0; k < c; ++k) {
        g.weights[k] += sum_dy_xhat[k];
        g.biases[k] += sum_dy[k];
    }
    Tensor dx(dy.shape());
    double* pd = dx.data();
    if (cache.mode == Mode::eval) {
        for (std::size_t r = 0; r < rows; ++r)
            for (int k = 0; k < c; ++k) pd[r * c + k] = pg[r * c + k] * p.weights[k] * cache.inv_std[k];
        return dx;
    }
    const double n = static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
        for (int k = 0; k < c; ++k) {
            const std::size_t i = r * c + k;
            // dxhat = dy * gamma; dx = inv_std/n * (n dxhat - sum dxhat - xhat sum(dxhat xhat))
            pd[i] = p.weights[k] * cache.inv_std[k] / n * (n * pg[i] - sum_dy[k] - ph[i] * sum_dy_xhat[k]);
        }
    return dx;
}

// --- activations ---------------------------------------------------------------

Tensor relu_forward(const Tensor& x) {
    Tensor y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
    return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
    if (y.size() != dy.size()) throw DimensionMismatch("relu backward: gradient shape mismatch");
    Tensor dx(dy.shape());
    for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > 0.0 ? dy[i] : 0.0;
    return dx;
}

Tensor dropout_forward(const Tensor& x, double rate, Mode mode, std::mt19937_64& rng, DropoutMask* mask) {
    if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("dropout rate must be in [0,1)");
    if (mode == Mode::eval || rate == 0.0) {
        if (mask) {
            mask->keep.assign(x.size(), 1);
            mask->scale = 1.0;
        }
        return x;
    }
    const double scale = 1.0 / (1.0 - rate);
    Tensor y(x.shape());
    std::vector<std::uint8_t> keep(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        keep[i] = uniform01(rng) >= rate;
        y[i] = keep[i] ? x[i] * scale : 0.0;
    }
    if (mask) {
        mask->keep = std::move(keep);
        mask->scale = scale;
    }
    return y;
}

Tensor dropout_backward(const Tensor& dy, const DropoutMask& mask) {
    if (mask.keep.size() != dy.size()) throw DimensionMismatch("dropout backward: mask size mismatch");
    Tensor dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = mask.keep[i] ? dy[i] * mask.scale : 0.0;
    return dx;
}

Tensor softmax(const Tensor& logits) {
    const int c = logits.last();
    Tensor p(logits.shape());
    for (std::size_t r = 0; r < logits.rows(); ++r) {
        const double* z = logits.data() + r * c;
        double* out = p.data() + r * c;
        const double mx = *std::max_element(z, z + c);
        double sum = 0.0;
        for (int k = 0; k < c; ++k) sum += out[k] = std::exp(z[k] - mx);
        for (int k = 0; k < c; ++k) out[k] /= sum;
    }
    return p;
}

// --- loss ----------------------------------------------------------------------

LossResult weighted_softmax_ce(const Tensor& logits, std::span<const int> labels, double w_f, double w_b) {
    if (logits.last() != 2) throw DimensionMismatch("loss expects 2 logits per sample, got " + logits.shape_string());
    if (logits.rows() != labels.size()) throw DimensionMismatch("loss: label count does not match logits");
    const Tensor prob = softmax(logits);
    LossResult res{0.0, Tensor(logits.shape())};
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const int y = labels[i];
        if (y != 0 && y != 1) throw InvalidArgument("label " + std::to_string(y) + " outside {0,1}");
        const double p = std::clamp(prob[2 * i + 1], kProbabilityClamp, 1.0 - kProbabilityClamp);
        const double w = y == 1 ? w_f : w_b;
        res.loss -= y == 1 ? w_f * std::log(p) : w_b * std::log(1.0 - p);
        // d/dz of -w log softmax_y(z) = w (softmax(z) - onehot(y))
        res.grad[2 * i + 0] = w * (prob[2 * i + 0] - (y == 0 ? 1.0 : 0.0));
        res.grad[2 * i + 1] = w * (prob[2 * i + 1] - (y == 1 ? 1.0 : 0.0));
    }
    return res;
}

// --- optimizer -------------------------------------------------------------------

LrSchedule::LrSchedule(std::map<int, double> steps) : steps_(std::move(steps)) {
    if (steps_.empty() || steps_.begin()->first != 0) throw InvalidArgument("learning-rate schedule must start at epoch 0");
    for (const auto& [epoch, lr] : steps_) {
        if (epoch < 0 || !(lr > 0.0)) throw InvalidArgument("learning rates must be positive");
    }
}

double LrSchedule::at(int epoch) const {
    auto it = steps_.upper_bound(epoch);
    if (it == steps_.begin()) return steps_.begin()->second;
    return std::prev(it)->second;
}

void adam_step(std::span<std::vector<double>* const> params, std::span<const std::vector<double>* const> grads,
               AdamState& st) {
    if (params.size() != grads.size()) throw DimensionMismatch("adam: parameter/gradient list length mismatch");
    if (st.m.empty()) {
        st.m.resize(params.size());
        st.v.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i) {
            st.m[i].assign(params[i]->size(), 0.0);
            st.v[i].assign(params[i]->size(), 0.0);
        }
    }
    if (st.m.size() != params.size()) throw DimensionMismatch("adam: state does not match parameter list");
    ++st.step;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& w = *params[i];
        const auto& g = *grads[i];
        auto& m = st.m[i];
        auto& v = st.v[i];
        if (g.size() != w.size() || m.size() != w.size()) throw DimensionMismatch("adam: shape mismatch");
        for (std::size_t k = 0; k < w.size(); ++k) {
            m[k] = st.beta1 * m[k] + (1.0 - st.beta1) * g[k];
            v[k] = st.beta2 * v[k] + (1.0 - st.beta2) * g[k] * g[k];
            const double mhat = m[k] / bc1;
            const double vhat = v[k] / bc2;
            w[k] -= st.lr * mhat / (std::sqrt(vhat) + st.eps);
        }
    }
}

// --- serialization -----------------------------------------------------------------

json to_json(const LayerParams& p) {
    json j{{"kind", to_string(p.kind)},
           {"in_channels", p.in_channels},
           {"out_channels", p.out_channels},
           {"kernel", p.kernel},
           {"weights", p.weights},
           {"biases", p.biases}};
    if (p.kind == LayerKind::batchnorm) {
        j["running_mean"] = p.running_mean;
        j["running_var"] = p.running_var;
        j["momentum"] = p.momentum;
        j["eps"] = p.eps;
    }
    return j;
}

LayerParams layer_from_json(const json& j) {
    LayerParams p;
    p.kind = kind_from_string(j.at("kind").get<std::string>());
    p.in_channels = j.at("in_channels").get<int>();
    p.out_channels = j.at("out_channels").get<int>();
    p.kernel = j.at("kernel").get<int>();
    p.weights = j.at("weights").get<std::vector<double>>();
    p.biases = j.at("biases").get<std::vector<double>>();
    if (p.kind == LayerKind::batchnorm) {
        p.running_mean = j.at("running_mean").get<std::vector<double>>();
        p.running_var = j.at("running_var").get<std::vector<double>>();
        p.momentum = j.at("momentum").get<double>();
        p.eps = j.at("eps").get<double>();
    }
    p.validate();
    return p;
}

json to_json(const AdamState& s) {
    return {{"m", s.m},       {"v", s.v},         {"step", s.step}, {"beta1", s.beta1},
            {"beta2", s.beta2}, {"eps", s.eps}, {"lr", s.lr}};
}

AdamState adam_from_json(const json& j) {
    AdamState s;
    s.m = j.at("m").get<std::vector<std::vector<double>>>();
    s.v = j.at("v").get<std::vector<std::vector<double>>>();
    s.step = j.at("step").get<long>();
    s.beta1 = j.at("beta1").get<double>();
    s.beta2 = j.at("beta2").get<double>();
    s.eps = j.at("eps").get<double>();
    s.lr = j.at("lr").get<double>();
    return s;
}

json to_json(const LrSchedule& s) {
    json j = json::array();
    for (const auto& [epoch, lr] : s.steps()) j.push_back({epoch, lr});
    return j;
}

LrSchedule schedule_from_json(const json& j) {
    std::map<int, double> steps;
    for (const auto& e : j) steps[e.at(0).get<int>()] = e.at(1).get<double>();
    return LrSchedule(std::move(steps));
}

}  // namespace econet::nn
