#include <doctest.h>

#include <cmath>
#include <random>

#include "econet/baselines.hpp"
#include "econet/volio.hpp"
#include "oracles.hpp"

using namespace econet;
using namespace econet::baselines;

namespace {

ScribbleSet scribbles_from_mask(const LabelMask& gt, std::size_t nf, std::size_t nb, std::uint64_t seed) {
    std::vector<std::size_t> fg, bg;
    for (std::size_t i = 0; i < gt.size(); ++i) (gt[i] ? fg : bg).push_back(i);
    std::mt19937_64 rng(seed);
    std::shuffle(fg.begin(), fg.end(), rng);
    std::shuffle(bg.begin(), bg.end(), rng);
    ScribbleSet s;
    for (std::size_t i = 0; i < nf; ++i) s.add(gt.dims().coord(fg[i]), ScribbleClass::foreground);
    for (std::size_t i = 0; i < nb; ++i) s.add(gt.dims().coord(bg[i]), ScribbleClass::background);
    return s;
}

ClassWeights weights_for(const std::vector<int>& labels) {
    ScribbleSet s;
    int i = 0;
    for (int l : labels) s.add({i++, 0, 0}, l ? ScribbleClass::foreground : ScribbleClass::background);
    return class_weights(s);
}

}  // namespace

TEST_CASE("histogram: binning, smoothing, symmetry") {
    CHECK(histogram_bin(0.0, 128) == 0);
    CHECK(histogram_bin(1.0, 128) == 127);
    CHECK(histogram_bin(-3.0, 128) == 0);
    CHECK(histogram_bin(7.0, 128) == 127);
    CHECK(histogram_bin(0.5, 128) == 64);

    Volume3D v({10, 2, 1});
    for (int x = 0; x < 10; ++x) {
        v.at(x, 0, 0) = 0.30f;  // foreground row, one bin
        v.at(x, 1, 0) = static_cast<float>(x) / 10.0f;
    }
    ScribbleSet s;
    for (int x = 0; x < 10; ++x) {
        s.add({x, 0, 0}, ScribbleClass::foreground);
        s.add({x, 1, 0}, ScribbleClass::background);
    }
    const HistogramModel m = histogram_fit(v, s, 128);
    const int bin = histogram_bin(0.30, 128);
    CHECK(m.foreground[bin] == doctest::Approx(11.0 / 138.0));
    double sf = 0, sb = 0;
    for (int b = 0; b < 128; ++b) sf += m.foreground[b], sb += m.background[b];
    CHECK(sf == doctest::Approx(1.0));
    CHECK(sb == doctest::Approx(1.0));

    SUBCASE("identical class distributions give 0.5 everywhere") {
        Volume3D w({8, 2, 1});
        ScribbleSet t;
        for (int x = 0; x < 8; ++x) {
            w.at(x, 0, 0) = w.at(x, 1, 0) = static_cast<float>(x) / 8.0f;
            t.add({x, 0, 0}, ScribbleClass::foreground);
            t.add({x, 1, 0}, ScribbleClass::background);
        }
        const LikelihoodMap l = histogram_predict(w, histogram_fit(w, t));
        for (double p : l.values()) CHECK(p == doctest::Approx(0.5));
    }
    SUBCASE("constant volume gives a constant map") {
        const LikelihoodMap l = histogram_predict(Volume3D({4, 4, 4}, {1, 1, 1}, 0.2f), m);
        for (double p : l.values()) CHECK(p == l[0]);
    }
    CHECK_THROWS_AS(histogram_fit(v, ScribbleSet(s.foreground(), {}), 128), InsufficientScribbles);
    CHECK_THROWS_AS(histogram_fit(v, s, 1), InvalidArgument);
}

TEST_CASE("histogram: separable phantom lesion interior is confidently foreground") {
    PhantomSpec spec;
    spec.kind = PhantomKind::intensity_separable;
    const auto [raw, gt] = generate_phantom(spec);
    const Volume3D v = normalize_intensity(raw);
    const LikelihoodMap l = histogram_predict(v, histogram_fit(v, scribbles_from_mask(gt, 300, 300, 1)));
    // Interior: lesion voxels whose 6-neighbourhood is all lesion.
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < gt.size(); ++i) {
        const Coord c = gt.dims().coord(i);
        if (!gt[i] || c.x == 0 || c.y == 0 || c.z == 0 || c.x == 63 || c.y == 63 || c.z == 63) continue;
        if (!gt.at(c.x - 1, c.y, c.z) || !gt.at(c.x + 1, c.y, c.z) || !gt.at(c.x, c.y - 1, c.z) ||
            !gt.at(c.x, c.y + 1, c.z) || !gt.at(c.x, c.y, c.z - 1) || !gt.at(c.x, c.y, c.z + 1))
            continue;
        sum += l[i];
        ++n;
    }
    CHECK(sum / n > 0.9);
}

TEST_CASE("intensity-only models commute with voxel permutations") {
    std::mt19937_64 rng(2);
    const Volume3D v = oracle::random_volume({6, 6, 6}, rng);
    ScribbleSet s;
    for (int i = 0; i < 40; ++i) s.add(v.dims().coord(rng() % v.size()), ScribbleClass::foreground);
    for (int i = 0; i < 40; ++i) {
        const Coord c = v.dims().coord(rng() % v.size());
        if (!s.contains(c, ScribbleClass::foreground)) s.add(c, ScribbleClass::background);
    }
    std::vector<std::size_t> perm(v.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    Volume3D pv(v.dims());
    for (std::size_t i = 0; i < v.size(); ++i) pv[perm[i]] = v[i];

    const auto hm = histogram_fit(v, s);
    const auto gm = gmm_fit(v, s, 3, 7);
    const LikelihoodMap h = histogram_predict(v, hm), hp = histogram_predict(pv, hm);
    const LikelihoodMap g = gmm_predict(v, gm), gp = gmm_predict(pv, gm);
    for (std::size_t i = 0; i < v.size(); ++i) {
        CHECK(hp[perm[i]] == h[i]);
        CHECK(gp[perm[i]] == g[i]);
    }
}

TEST_CASE("mixture: one component is the sample mean and variance") {
    std::mt19937_64 rng(3);
    std::normal_distribution<double> g(0.4, 0.1);
    std::vector<double> x(500);
    for (auto& v : x) v = g(rng);
    const GaussianMixture m = fit_mixture(x, 1, 1);
    double mean = 0, var = 0;
    for (double v : x) mean += v;
    mean /= x.size();
    for (double v : x) var += (v - mean) * (v - mean);
    var /= x.size();
    CHECK(m.weights[0] == doctest::Approx(1.0));
    CHECK(m.means[0] == doctest::Approx(mean).epsilon(1e-12));
    CHECK(m.variances[0] == doctest::Approx(var).epsilon(1e-9));

    const std::vector<double> same(20, 0.3);
    CHECK(fit_mixture(same, 1, 1).variances[0] == doctest::Approx(EmOptions{}.variance_floor));
}

TEST_CASE("mixture: EM log-likelihood never decreases") {
    std::mt19937_64 rng(4);
    for (int t = 0; t < 20; ++t) {
        std::vector<double> x(300);
        for (auto& v : x) v = std::normal_distribution<double>(static_cast<double>(rng() % 3) * 0.3, 0.05)(rng);
        const GaussianMixture m = fit_mixture(x, 2 + t % 5, t);
        for (std::size_t i = 1; i < m.log_likelihood.size(); ++i)
            CHECK(m.log_likelihood[i] >= m.log_likelihood[i - 1] - 1e-9 * std::abs(m.log_likelihood[i - 1]));
        double w = 0;
        for (double v : m.weights) w += v;
        CHECK(w == doctest::Approx(1.0));
        for (double v : m.variances) CHECK(v >= EmOptions{}.variance_floor);
    }
}

TEST_CASE("mixture: two separated clusters are recovered") {
    std::mt19937_64 rng(5);
    std::vector<double> x;
    for (int i = 0; i < 2000; ++i) x.push_back(std::normal_distribution<double>(0.2, 0.02)(rng));
    for (int i = 0; i < 2000; ++i) x.push_back(std::normal_distribution<double>(0.8, 0.02)(rng));
    const GaussianMixture m = fit_mixture(x, 2, 9);
    std::vector<double> means = m.means;
    std::sort(means.begin(), means.end());
    CHECK(std::abs(means[0] - 0.2) < 0.01);
    CHECK(std::abs(means[1] - 0.8) < 0.01);
}

TEST_CASE("mixture: too few samples reduce the component count with a warning") {
    std::vector<std::string> warnings;
    const GaussianMixture m = fit_mixture(std::vector<double>{0.1, 0.5, 0.9}, 20, 1, {}, &warnings);
    CHECK(m.components() == 3);
    CHECK(warnings.size() == 1);
    CHECK_THROWS_AS(fit_mixture(std::vector<double>{}, 2, 1), InvalidArgument);
}

TEST_CASE("gmm posterior: equal priors, range, determinism") {
    std::mt19937_64 rng(6);
    const Volume3D v = oracle::random_volume({8, 8, 8}, rng);
    ScribbleSet s;
    for (std::size_t i = 0; i < v.size(); i += 3) s.add(v.dims().coord(i), v[i] > 0.5f ? ScribbleClass::foreground : ScribbleClass::background);
    const GmmModel a = gmm_fit(v, s, 4, 11), b = gmm_fit(v, s, 4, 11);
    CHECK(a.foreground.means == b.foreground.means);
    const LikelihoodMap l = gmm_predict(v, a);
    for (double p : l.values()) CHECK((p >= 0.0 && p <= 1.0));
    for (std::size_t i = 0; i < v.size(); ++i) {
        const double lf = a.foreground.log_density(v[i]), lb = a.background.log_density(v[i]);
        CHECK(l[i] == doctest::Approx(1.0 / (1.0 + std::exp(lb - lf))).epsilon(1e-9));
    }
}

TEST_CASE("forest: separable data is fitted exactly") {
    std::vector<double> x;
    std::vector<int> y;
    for (int i = 0; i < 60; ++i) {
        x.push_back(i);
        y.push_back(i >= 25);
    }
    const ForestModel m = forest_fit(x, 1, y, weights_for(y), {});
    const auto p = forest_predict(m, x);
    for (std::size_t i = 0; i < y.size(); ++i) CHECK((p[i] > 0.5) == (y[i] == 1));
}

TEST_CASE("forest: a depth-1 tree on XOR cannot beat the best stump") {
    std::vector<double> x;
    std::vector<int> y;
    std::mt19937_64 rng(7);
    for (int i = 0; i < 200; ++i) {
        const int a = static_cast<int>(rng() % 2), b = static_cast<int>(rng() % 2);
        x.push_back(a + 0.01 * (rng() % 10));
        x.push_back(b + 0.01 * (rng() % 10));
        y.push_back(a ^ b);
    }
    // Oracle: every axis-aligned stump with either leaf labelling.
    double best = 0.0;
    for (int f = 0; f < 2; ++f)
        for (std::size_t t = 0; t < y.size(); ++t)
            for (int flip = 0; flip < 2; ++flip) {
                std::size_t ok = 0;
                for (std::size_t i = 0; i < y.size(); ++i) ok += ((x[2 * i + f] <= x[2 * t + f]) ^ flip) == (y[i] == 1);
                best = std::max(best, static_cast<double>(ok) / y.size());
            }
    CHECK(best <= 0.75);

    ForestConfig cfg;
    cfg.max_depth = 1;
    cfg.trees = 1;
    const ForestModel m = forest_fit(x, 2, y, weights_for(y), cfg);
    CHECK(tree_depth(m.trees[0]) <= 1);
    const auto p = forest_predict(m, x);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < y.size(); ++i) ok += (p[i] > 0.5) == (y[i] == 1);
    CHECK(static_cast<double>(ok) / y.size() <= best);
}

TEST_CASE("forest: limits, determinism and monotone invariance") {
    std::mt19937_64 rng(8);
    const int d = 5;
    std::vector<double> x;
    std::vector<int> y;
    for (int i = 0; i < 400; ++i) {
        double s = 0;
        for (int f = 0; f < d; ++f) {
            const double v = std::uniform_real_distribution<double>(-1, 1)(rng);
            x.push_back(v);
            s += v * (f + 1);
        }
        y.push_back(s + std::normal_distribution<double>(0, 0.5)(rng) > 0);
    }
    ForestConfig cfg;
    cfg.trees = 20;
    cfg.seed = 3;
    const ForestModel a = forest_fit(x, d, y, weights_for(y), cfg);
    const ForestModel b = forest_fit(x, d, y, weights_for(y), cfg);
    CHECK(forest_predict(a, x) == forest_predict(b, x));
    for (const auto& t : a.trees) {
        CHECK(tree_depth(t) <= cfg.max_depth);
        // A split node never holds fewer samples than min_samples_split; the
        // bootstrap makes counts unavailable here, so check structure only.
        for (const auto& n : t) CHECK((n.feature == -1 || (n.left > 0 && n.right > 0)));
    }

    // exp() on feature 2 for both training and test values.
    std::vector<double> tx = x;
    for (std::size_t r = 0; r < y.size(); ++r) tx[r * d + 2] = std::exp(3.0 * x[r * d + 2]);
    const ForestModel c = forest_fit(tx, d, y, weights_for(y), cfg);
    const auto pa = forest_predict(a, x), pc = forest_predict(c, tx);
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pc[i] == doctest::Approx(pa[i]).epsilon(1e-15));
    for (double p : pa) CHECK((p >= 0.0 && p <= 1.0));
}

TEST_CASE("forest: min-samples-split stops small nodes") {
    std::vector<double> x{0, 1, 2, 3, 4};
    std::vector<int> y{0, 1, 0, 1, 0};
    ForestConfig cfg;
    cfg.trees = 5;
    const ForestModel m = forest_fit(x, 1, y, weights_for(y), cfg);
    for (const auto& t : m.trees) CHECK(t.size() == 1);
}

TEST_CASE("forest: class weights move the decision toward the rare class") {
    // Five identical rows: one foreground, four background.
    std::vector<double> x(5, 0.0);
    std::vector<int> y{1, 0, 0, 0, 0};
    ForestConfig cfg;
    cfg.trees = 50;
    const ForestModel m = forest_fit(x, 1, y, weights_for(y), cfg);
    // Weighted leaf fraction: bootstrap draws with w_f = 5, w_b = 5/4 make
    // the expected leaf value 0.5 rather than the unweighted 0.2.
    const double p = forest_predict(m, x)[0];
    CHECK(p > 0.3);
    CHECK(p < 0.7);
}
