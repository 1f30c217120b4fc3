// Serial reference kernels against the im2col + GEMM / OpenMP versions, plus
// the end-to-end stages they feed.

#include <benchmark/benchmark.h>

#include <random>
#include <vector>

#include "econet/econet.hpp"
#include "econet/graphcut.hpp"
#include "econet/haar.hpp"
#include "econet/kernels.hpp"
#include "econet/volio.hpp"

using namespace econet;
namespace k = econet::kernels;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    std::vector<double> v(n);
    for (auto& x : v) x = dist(rng);
    return v;
}

// Training-sized patch batch: N x 7^3 x 1 -> 128 filters.
k::Conv3dShape patch_shape(int batch) { return {batch, 7, 7, 7, 1, 7, 128}; }
// Inference slab: 8 z-planes of a 64^2 in-plane volume, padded by 3.
k::Conv3dShape slab_shape() { return {1, 14, 70, 70, 1, 7, 128}; }

void conv_forward(benchmark::State& st, bool reference, k::Conv3dShape s) {
    const auto in = random_values(s.input_size(), 1), w = random_values(s.weight_size(), 2),
               b = random_values(s.out_c, 3);
    std::vector<double> out(s.output_size());
    for (auto _ : st) {
        if (reference)
            k::conv3d_forward_reference(s, in, w, b, out);
        else
            k::conv3d_forward(s, in, w, b, out);
        benchmark::DoNotOptimize(out.data());
    }
    st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(s.batch * s.out_positions()));
}

void conv_backward(benchmark::State& st, bool reference, k::Conv3dShape s) {
    const auto in = random_values(s.input_size(), 1), w = random_values(s.weight_size(), 2),
               dy = random_values(s.output_size(), 3);
    std::vector<double> dw(s.weight_size()), db(s.out_c);
    for (auto _ : st) {
        if (reference)
            k::conv3d_backward_reference(s, in, w, dy, dw, db, {});
        else
            k::conv3d_backward(s, in, w, dy, dw, db, {});
        benchmark::DoNotOptimize(dw.data());
    }
}

void dense_forward(benchmark::State& st, bool reference) {
    const std::size_t rows = static_cast<std::size_t>(st.range(0));
    const int in = 128, out = 32;
    const auto x = random_values(rows * in, 1), w = random_values(std::size_t{in} * out, 2), b = random_values(out, 3);
    std::vector<double> y(rows * out);
    for (auto _ : st) {
        if (reference)
            k::dense_forward_reference(rows, in, out, x, w, b, y);
        else
            k::dense_forward(rows, in, out, x, w, b, y);
        benchmark::DoNotOptimize(y.data());
    }
    st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(rows));
}

std::pair<Volume3D, LabelMask> phantom() {
    PhantomSpec spec;
    return generate_phantom(spec);
}

ScribbleSet scribbles_from(const LabelMask& gt, std::size_t per_class) {
    std::vector<Coord> fg, bg;
    for (std::size_t i = 0; i < gt.values().size(); ++i) (gt.values()[i] ? fg : bg).push_back(gt.dims().coord(i));
    std::mt19937_64 rng(5);
    std::shuffle(fg.begin(), fg.end(), rng);
    std::shuffle(bg.begin(), bg.end(), rng);
    ScribbleSet s;
    for (std::size_t i = 0; i < per_class; ++i) {
        s.add(fg[i], ScribbleClass::foreground);
        s.add(bg[i], ScribbleClass::background);
    }
    return s;
}

void train(benchmark::State& st) {
    const auto [raw, gt] = phantom();
    const Volume3D v = normalize_intensity(raw);
    const ScribbleSet s = scribbles_from(gt, static_cast<std::size_t>(st.range(0)));
    EcoNetConfig cfg;
    cfg.epochs = 20;
    for (auto _ : st) benchmark::DoNotOptimize(train_online(v, s, cfg).epoch_loss.back());
}

void infer(benchmark::State& st) {
    const auto [raw, gt] = phantom();
    const Volume3D v = normalize_intensity(raw);
    EcoNetConfig cfg;
    cfg.feature_mode = st.range(0) ? FeatureMode::haar : FeatureMode::learned_conv;
    const EcoNetParams p = build_model(cfg);
    for (auto _ : st) benchmark::DoNotOptimize(infer_likelihood(v, p).values().data());
    st.SetItemsProcessed(st.iterations() * static_cast<std::int64_t>(v.dims().voxels()));
}

void haar_volume(benchmark::State& st) {
    const auto [raw, gt] = phantom();
    const Volume3D v = normalize_intensity(raw);
    const auto bank = haar::HaarBank::make({});
    for (auto _ : st) benchmark::DoNotOptimize(haar::haar_feature_volume(v, bank).values.data());
}

void regularize(benchmark::State& st) {
    const auto [raw, gt] = phantom();
    const Volume3D v = normalize_intensity(raw);
    LikelihoodMap l(gt.dims(), gt.spacing());
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 0.3);
    for (std::size_t i = 0; i < l.values().size(); ++i) l.storage()[i] = gt.values()[i] ? 1.0 - u(rng) : u(rng);
    for (auto _ : st) benchmark::DoNotOptimize(graphcut::regularize(l, v).values().data());
}

}  // namespace

BENCHMARK_CAPTURE(conv_forward, patches_reference, true, patch_shape(256))->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_forward, patches, false, patch_shape(256))->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_forward, slab_reference, true, slab_shape())->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_forward, slab, false, slab_shape())->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_backward, patches_reference, true, patch_shape(256))->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(conv_backward, patches, false, patch_shape(256))->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(dense_forward, reference, true)->Arg(1 << 12)->Arg(1 << 16)->Unit(benchmark::kMillisecond);
BENCHMARK_CAPTURE(dense_forward, gemm, false)->Arg(1 << 12)->Arg(1 << 16)->Unit(benchmark::kMillisecond);
BENCHMARK(train)->Arg(50)->Arg(500)->Unit(benchmark::kMillisecond);
BENCHMARK(infer)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(haar_volume)->Unit(benchmark::kMillisecond);
BENCHMARK(regularize)->Unit(benchmark::kMillisecond);

BENCHMARK_MAIN();
