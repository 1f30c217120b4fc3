#include "econet/econet.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

namespace econet {

using json = nlohmann::json;
using nn::LayerParams;
using nn::Mode;
using nn::Tensor;

std::string to_string(FeatureMode mode) { return mode == FeatureMode::haar ? "haar" : "learned-conv"; }

FeatureMode feature_mode_from_string(const std::string& s) {
    if (s == "haar") return FeatureMode::haar;
    if (s == "learned-conv") return FeatureMode::learned_conv;
    throw InvalidArgument("unknown feature mode: " + s);
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

int EcoNetConfig::patch_edge() const {
    return feature_mode == FeatureMode::haar ? kernel : conv_layers * (kernel - 1) + 1;
}

void EcoNetConfig::validate() const {
    if (kernel < 1 || kernel % 2 == 0) throw InvalidArgument("kernel edge must be odd and positive");
    if (feature_mode == FeatureMode::haar && kernel < 3) throw InvalidArgument("haar window must be >= 3");
    if (filters < 1) throw InvalidArgument("filter count must be positive");
    if (num_classes != 2) throw InvalidArgument("only two-class likelihood is supported");
    if (conv_layers < 1) throw InvalidArgument("conv_layers must be >= 1");
    for (int s : fc_sizes) {
        if (s < 1) throw InvalidArgument("fully-connected sizes must be positive");
    }
    if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidArgument("dropout must be in [0,1)");
    if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
    if (haar_features < 1) throw InvalidArgument("haar feature count must be positive");
    if (minibatch < 2) throw InvalidArgument("minibatch must be >= 2");
}

bool EcoNetConfig::same_architecture(const EcoNetConfig& o) const {
    return kernel == o.kernel && filters == o.filters && fc_sizes == o.fc_sizes && num_classes == o.num_classes &&
           conv_layers == o.conv_layers && feature_mode == o.feature_mode &&
           (feature_mode != FeatureMode::haar || (haar_features == o.haar_features && haar_seed == o.haar_seed));
}

json to_json(const EcoNetConfig& c) {
    return {{"kernel", c.kernel},
            {"filters", c.filters},
            {"fc_sizes", c.fc_sizes},
            {"num_classes", c.num_classes},
            {"conv_layers", c.conv_layers},
            {"dropout", c.dropout},
            {"epochs", c.epochs},
            {"lr_schedule", nn::to_json(c.lr_schedule)},
            {"seed", c.seed},
            {"feature_mode", to_string(c.feature_mode)},
            {"haar_features", c.haar_features},
            {"haar_seed", c.haar_seed},
            {"full_batch_limit", c.full_batch_limit},
            {"minibatch", c.minibatch},
            {"activation_budget_mb", c.activation_budget_mb}};
}

EcoNetConfig econet_config_from_json(const json& j) {
    EcoNetConfig c;
    c.kernel = j.value("kernel", c.kernel);
    c.filters = j.value("filters", c.filters);
    c.fc_sizes = j.value("fc_sizes", c.fc_sizes);
    c.num_classes = j.value("num_classes", c.num_classes);
    c.conv_layers = j.value("conv_layers", c.conv_layers);
    c.dropout = j.value("dropout", c.dropout);
    c.epochs = j.value("epochs", c.epochs);
    if (j.contains("lr_schedule")) c.lr_schedule = nn::schedule_from_json(j.at("lr_schedule"));
    c.seed = j.value("seed", c.seed);
    if (j.contains("feature_mode")) c.feature_mode = feature_mode_from_string(j.at("feature_mode").get<std::string>());
    c.haar_features = j.value("haar_features", c.haar_features);
    c.haar_seed = j.value("haar_seed", c.haar_seed);
    c.full_batch_limit = j.value("full_batch_limit", c.full_batch_limit);
    c.minibatch = j.value("minibatch", c.minibatch);
    c.activation_budget_mb = j.value("activation_budget_mb", c.activation_budget_mb);
    c.validate();
    return c;
}

// ---------------------------------------------------------------------------
// Model construction
// ---------------------------------------------------------------------------

namespace {

int conv_count(const EcoNetConfig& c) { return c.feature_mode == FeatureMode::haar ? 0 : c.conv_layers; }
std::size_t conv_index(int l) { return 2 * static_cast<std::size_t>(l); }
std::size_t fc_index(const EcoNetConfig& c, std::size_t j) { return 2 * conv_count(c) + 2 * j; }
std::size_t out_index(const EcoNetConfig& c) { return fc_index(c, c.fc_sizes.size()); }

}  // namespace

std::size_t EcoNetParams::learnable_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.learnable_count();
    return n;
}

std::size_t EcoNetParams::conv_learnable_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
        if (l.kind == nn::LayerKind::conv3d) n += l.learnable_count();
    }
    return n;
}

int EcoNetParams::feature_width() const {
    return config.feature_mode == FeatureMode::haar ? config.haar_features : config.filters;
}

EcoNetParams build_model(const EcoNetConfig& cfg) {
    cfg.validate();
    EcoNetParams p;
    p.config = cfg;
    std::mt19937_64 rng(cfg.seed);
    int width = 1;
    if (cfg.feature_mode == FeatureMode::learned_conv) {
        for (int l = 0; l < cfg.conv_layers; ++l) {
            p.layers.push_back(LayerParams::conv3d(cfg.kernel, width, cfg.filters, rng));
            p.layers.push_back(LayerParams::batchnorm(cfg.filters));
            width = cfg.filters;
        }
    } else {
        p.bank = haar::HaarBank::make({cfg.kernel, cfg.haar_features, cfg.haar_seed});
        width = cfg.haar_features;
    }
    for (int size : cfg.fc_sizes) {
        p.layers.push_back(LayerParams::linear(width, size, rng));
        p.layers.push_back(LayerParams::batchnorm(size));
        width = size;
    }
    p.layers.push_back(LayerParams::linear(width, cfg.num_classes, rng));
    return p;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

namespace {

struct StageCache {
    Tensor input;
    nn::BatchNormCache bn;
    Tensor activation;  // ReLU output
    nn::DropoutMask dropout;
};

struct ForwardCache {
    std::vector<StageCache> conv;
    std::vector<StageCache> fc;
    Tensor out_input;
};

// `stats` receives batch norm running-statistic updates in train mode; it may
// alias `layers`. Pass nullptr to leave statistics untouched.
Tensor run_forward(const EcoNetConfig& cfg, const std::vector<LayerParams>& layers, std::vector<LayerParams>* stats,
                   const Tensor& input, Mode mode, std::mt19937_64* rng, ForwardCache* cache) {
    auto bn = [&](const Tensor& x, std::size_t idx, nn::BatchNormCache* c) {
        if (mode == Mode::train && stats) return nn::batchnorm_forward(x, (*stats)[idx], mode, c);
        return nn::batchnorm_apply(x, layers[idx], mode, c);
    };

    Tensor h = input;
    const int L = conv_count(cfg);
    if (cache) {
        cache->conv.assign(L, {});
        cache->fc.assign(cfg.fc_sizes.size(), {});
    }
    for (int l = 0; l < L; ++l) {
        Tensor z = nn::conv3d_forward(h, layers[conv_index(l)], nn::Padding::valid);
        StageCache* c = cache ? &cache->conv[l] : nullptr;
        Tensor b = bn(z, conv_index(l) + 1, c ? &c->bn : nullptr);
        Tensor a = nn::relu_forward(b);
        if (c) {
            c->input = std::move(h);
            c->activation = a;
        }
        h = std::move(a);
    }
    if (L > 0) {
        // [N, d, h, w, F] -> [N*d*h*w, F]; for patches d=h=w=1.
        const int f = h.last();
        h = std::move(h).reshaped({static_cast<int>(h.rows()), f});
    }
    const double rate = mode == Mode::train && rng ? cfg.dropout : 0.0;
    std::mt19937_64 unused(0);
    for (std::size_t j = 0; j < cfg.fc_sizes.size(); ++j) {
        const std::size_t idx = fc_index(cfg, j);
        Tensor z = nn::linear_forward(h, layers[idx]);
        StageCache* c = cache ? &cache->fc[j] : nullptr;
        Tensor b = bn(z, idx + 1, c ? &c->bn : nullptr);
        Tensor a = nn::relu_forward(b);
        Tensor d = nn::dropout_forward(a, rate, mode, rng ? *rng : unused, c ? &c->dropout : nullptr);
        if (c) {
            c->input = std::move(h);
            c->activation = std::move(a);
        }
        h = std::move(d);
    }
    Tensor logits = nn::linear_forward(h, layers[out_index(cfg)]);
    if (cache) cache->out_input = std::move(h);
    return logits;
}

std::vector<nn::LayerGrads> run_backward(const EcoNetConfig& cfg, const std::vector<LayerParams>& layers,
                                         const ForwardCache& cache, const Tensor& d_logits) {
    std::vector<nn::LayerGrads> g;
    g.reserve(layers.size());
    for (const auto& l : layers) g.push_back(nn::LayerGrads::zeros_like(l));

    Tensor d = nn::linear_backward(cache.out_input, layers[out_index(cfg)], d_logits, g[out_index(cfg)]);
    for (std::size_t jj = cfg.fc_sizes.size(); jj-- > 0;) {
        const std::size_t idx = fc_index(cfg, jj);
        const auto& c = cache.fc[jj];
        d = nn::dropout_backward(d, c.dropout);
        d = nn::relu_backward(c.activation, d);
        d = nn::batchnorm_backward(d, layers[idx + 1], c.bn, g[idx + 1]);
        d = nn::linear_backward(c.input, layers[idx], d, g[idx]);
    }
    const int L = conv_count(cfg);
    if (L > 0) {
        const Tensor& last = cache.conv[L - 1].activation;
        d = std::move(d).reshaped(last.shape());
    }
    for (int l = L; l-- > 0;) {
        const auto& c = cache.conv[l];
        d = nn::relu_backward(c.activation, d);
        d = nn::batchnorm_backward(d, layers[conv_index(l) + 1], c.bn, g[conv_index(l) + 1]);
        d = nn::conv3d_backward(c.input, layers[conv_index(l)], d, g[conv_index(l)], l > 0);
    }
    return g;
}

Tensor gather_rows(const Tensor& input, std::span<const std::size_t> rows) {
    auto shape = input.shape();
    const std::size_t stride = input.size() / static_cast<std::size_t>(shape[0]);
    shape[0] = static_cast<int>(rows.size());
    Tensor out(shape);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(input.data() + rows[i] * stride, stride, out.data() + i * stride);
    }
    return out;
}

std::size_t batch_size_for(const EcoNetConfig& cfg, std::size_t n) {
    std::size_t size = n <= cfg.full_batch_limit ? n : cfg.minibatch;
    if (cfg.feature_mode == FeatureMode::learned_conv) {
        // Bytes of activations kept per patch: conv out, bn xhat, bn out,
        // relu out and the incoming gradient, for every stacked layer.
        const int p = cfg.patch_edge();
        double per_patch = static_cast<double>(p) * p * p;
        for (int l = 1; l <= cfg.conv_layers; ++l) {
            const double e = p - l * (cfg.kernel - 1);
            per_patch += 5.0 * e * e * e * cfg.filters;
        }
        const double budget = static_cast<double>(cfg.activation_budget_mb) * 1024.0 * 1024.0 / sizeof(double);
        const auto cap = static_cast<std::size_t>(std::max(2.0, std::floor(budget / per_patch)));
        size = std::min(size, cap);
    }
    return std::max<std::size_t>(size, 2);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

}  // namespace

LossAndGrads loss_and_gradients(EcoNetParams& p, const Tensor& input, std::span<const int> labels,
                                const ClassWeights& w, Mode mode, std::mt19937_64* rng) {
    ForwardCache cache;
    const Tensor logits =
        run_forward(p.config, p.layers, mode == Mode::train ? &p.layers : nullptr, input, mode,
                    mode == Mode::train ? rng : nullptr, &cache);
    auto loss = nn::weighted_softmax_ce(logits, labels, w.foreground, w.background);
    return {loss.loss, run_backward(p.config, p.layers, cache, loss.grad)};
}

Tensor network_input(const EcoNetParams& p, const PatchBatch& batch) {
    const int n = static_cast<int>(batch.count());
    if (n == 0) throw InvalidArgument("empty patch batch");
    if (batch.edge != p.config.patch_edge()) {
        throw DimensionMismatch("patch edge " + std::to_string(batch.edge) + " does not match model input edge " +
                                std::to_string(p.config.patch_edge()));
    }
    if (p.config.feature_mode == FeatureMode::haar) {
        const int f = static_cast<int>(p.bank->size());
        Tensor t({n, f});
        for (int i = 0; i < n; ++i) {
            const auto feats = haar::haar_features(
                std::span<const float>(batch.patch(i), batch.patch_voxels()), *p.bank);
            std::copy(feats.begin(), feats.end(), t.data() + static_cast<std::size_t>(i) * f);
        }
        return t;
    }
    const int e = batch.edge;
    return Tensor({n, e, e, e, 1}, std::vector<double>(batch.values.begin(), batch.values.end()));
}

Tensor forward_logits(const EcoNetParams& p, const Tensor& input) {
    return run_forward(p.config, p.layers, nullptr, input, Mode::eval, nullptr, nullptr);
}

std::vector<double> patch_likelihood(const EcoNetParams& p, const PatchBatch& batch) {
    const Tensor prob = nn::softmax(forward_logits(p, network_input(p, batch)));
    std::vector<double> out(batch.count());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = prob[2 * i + 1];
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

EcoNetParams train_online(const Volume3D& v, const ScribbleSet& s, const EcoNetConfig& cfg, const EcoNetParams* warm,
                          const TrainOptions& options) {
    cfg.validate();
    const ClassWeights w = class_weights(s);
    const auto t0 = std::chrono::steady_clock::now();

    EcoNetParams p;
    if (warm) {
        if (!cfg.same_architecture(warm->config)) {
            throw InvalidArgument("warm-start parameters were built for a different architecture");
        }
        p = *warm;
        p.config = cfg;
    } else {
        p = build_model(cfg);
    }
    p.adam = nn::AdamState{};
    p.epoch_loss.clear();

    const PatchBatch batch = extract_patches(v, s, cfg.patch_edge());
    const Tensor input = network_input(p, batch);
    const std::size_t n = batch.count();
    const std::size_t bs = batch_size_for(cfg, n);

    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(p.rounds_trained)));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    std::vector<std::vector<double>*> params;
    for (auto& l : p.layers) {
        params.push_back(&l.weights);
        params.push_back(&l.biases);
    }

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        p.adam.lr = cfg.lr_schedule.at(epoch);
        if (bs < n) std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += bs) {
            std::size_t end = std::min(n, start + bs);
            // Batch norm needs >= 2 rows: fold a lone trailing sample into
            // this batch.
            if (n - end == 1) end = n;
            LossAndGrads lg;
            if (start == 0 && end == n) {
                lg = loss_and_gradients(p, input, batch.labels, w, Mode::train, &rng);
            } else {
                const std::span<const std::size_t> rows(order.data() + start, end - start);
                std::vector<int> labels;
                labels.reserve(rows.size());
                for (auto r : rows) labels.push_back(batch.labels[r]);
                lg = loss_and_gradients(p, gather_rows(input, rows), labels, w, Mode::train, &rng);
            }
            std::vector<const std::vector<double>*> grads;
            for (auto& g : lg.grads) {
                grads.push_back(&g.weights);
                grads.push_back(&g.biases);
            }
            nn::adam_step(params, grads, p.adam);
            epoch_loss += lg.loss;
            if (end == n) break;
            start = end - bs;  // loop increment adds bs back
        }
        if (!std::isfinite(epoch_loss)) {
            throw TrainingDiverged("non-finite training loss at epoch " + std::to_string(epoch));
        }
        p.epoch_loss.push_back(epoch_loss);
        if (options.on_epoch && !options.on_epoch(epoch, epoch_loss)) break;
    }

    ++p.rounds_trained;
    p.train_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return p;
}

// ---------------------------------------------------------------------------
// Fully convolutional inference
// ---------------------------------------------------------------------------

namespace {

// Runs the fully-connected head over [rows, features] and writes the
// foreground probability of each row to `out`.
void head_probabilities(const EcoNetParams& p, Tensor features, double* out) {
    const auto& cfg = p.config;
    Tensor h = std::move(features);
    for (std::size_t j = 0; j < cfg.fc_sizes.size(); ++j) {
        const std::size_t idx = fc_index(cfg, j);
        h = nn::relu_forward(nn::batchnorm_apply(nn::linear_forward(h, p.layers[idx]), p.layers[idx + 1], Mode::eval));
    }
    const Tensor prob = nn::softmax(nn::linear_forward(h, p.layers[out_index(cfg)]));
    for (std::size_t r = 0; r < prob.rows(); ++r) out[r] = prob[2 * r + 1];
}

}  // namespace

LikelihoodMap infer_likelihood(const Volume3D& v, const EcoNetParams& p) {
    const auto& cfg = p.config;
    if (p.layers.size() != out_index(cfg) + 1) throw DimensionMismatch("parameters do not match their configuration");
    for (const auto& l : p.layers) l.validate();
    const Dims& d = v.dims();
    LikelihoodMap out(d, v.spacing());
    const std::size_t plane = static_cast<std::size_t>(d.nx) * d.ny;

    if (cfg.feature_mode == FeatureMode::haar) {
        if (!p.bank) throw InvalidArgument("haar-mode parameters carry no feature bank");
        const auto fv = haar::haar_feature_volume(v, *p.bank);
        const std::size_t rows_per_slab = std::max<std::size_t>(plane, 1 << 16);
        for (std::size_t r0 = 0; r0 < d.voxels(); r0 += rows_per_slab) {
            const std::size_t nr = std::min(rows_per_slab, d.voxels() - r0);
            Tensor feats({static_cast<int>(nr), fv.channels},
                         std::vector<double>(fv.values.begin() + r0 * fv.channels,
                                             fv.values.begin() + (r0 + nr) * fv.channels));
            head_probabilities(p, std::move(feats), out.storage().data() + r0);
        }
        return out;
    }

    // Pad once by the receptive-field radius, then run valid convolutions on
    // z-slabs; each output voxel sees exactly the patch extract_patch() gives.
    const int radius = cfg.conv_layers * (cfg.kernel - 1) / 2;
    const int px = d.nx + 2 * radius, py = d.ny + 2 * radius;
    std::vector<double> padded(static_cast<std::size_t>(px) * py * (d.nz + 2 * radius));
    {
        std::size_t i = 0;
        for (int z = 0; z < d.nz + 2 * radius; ++z)
            for (int y = 0; y < py; ++y)
                for (int x = 0; x < px; ++x) padded[i++] = v.clamped(x - radius, y - radius, z - radius);
    }
    const std::size_t target = std::size_t{1} << 22;  // activation values per slab
    const int slab = static_cast<int>(std::clamp<std::size_t>(target / (plane * cfg.filters), 1, d.nz));
    const std::size_t in_plane = static_cast<std::size_t>(px) * py;
    for (int z0 = 0; z0 < d.nz; z0 += slab) {
        const int t = std::min(slab, d.nz - z0);
        const int in_d = t + 2 * radius;
        Tensor h({1, in_d, py, px, 1}, std::vector<double>(padded.begin() + z0 * in_plane,
                                                           padded.begin() + (z0 + in_d) * in_plane));
        for (int l = 0; l < cfg.conv_layers; ++l) {
            h = nn::conv3d_forward(h, p.layers[conv_index(l)], nn::Padding::valid);
            h = nn::relu_forward(nn::batchnorm_apply(h, p.layers[conv_index(l) + 1], Mode::eval));
        }
        const int f = h.last();
        head_probabilities(p, std::move(h).reshaped({static_cast<int>(static_cast<std::size_t>(t) * plane), f}),
                           out.storage().data() + static_cast<std::size_t>(z0) * plane);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

json checkpoint_to_json(const EcoNetParams& p) {
    json layers = json::array();
    for (const auto& l : p.layers) layers.push_back(nn::to_json(l));
    json j{{"format", kCheckpointFormat},
           {"config", to_json(p.config)},
           {"layers", layers},
           {"adam", nn::to_json(p.adam)},
           {"epoch_loss", p.epoch_loss},
           {"train_seconds", p.train_seconds},
           {"rounds_trained", p.rounds_trained}};
    if (p.bank) j["haar_bank"] = haar::to_json(*p.bank);
    return j;
}

EcoNetParams checkpoint_from_json(const json& j) {
    if (j.value("format", std::string{}) != kCheckpointFormat) {
        throw FormatError("not an " + std::string(kCheckpointFormat) + " document");
    }
    EcoNetParams p;
    p.config = econet_config_from_json(j.at("config"));
    for (const auto& l : j.at("layers")) p.layers.push_back(nn::layer_from_json(l));
    p.adam = nn::adam_from_json(j.at("adam"));
    p.epoch_loss = j.at("epoch_loss").get<std::vector<double>>();
    p.train_seconds = j.at("train_seconds").get<double>();
    p.rounds_trained = j.at("rounds_trained").get<int>();
    if (j.contains("haar_bank")) p.bank = haar::bank_from_json(j.at("haar_bank"));
    const EcoNetParams shape = build_model(p.config);
    if (shape.layers.size() != p.layers.size()) throw FormatError("checkpoint layer count does not match its config");
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
        if (shape.layers[i].kind != p.layers[i].kind || shape.layers[i].weights.size() != p.layers[i].weights.size()) {
            throw FormatError("checkpoint layer " + std::to_string(i) + " does not match its config");
        }
    }
    return p;
}

void save_checkpoint(const EcoNetParams& p, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write checkpoint " + path.string());
    out << checkpoint_to_json(p).dump();
}

EcoNetParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read checkpoint " + path.string());
    try {
        return checkpoint_from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw FormatError(std::string("malformed checkpoint: ") + e.what());
    }
}

}  // namespace econet
