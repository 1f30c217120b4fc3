#include <doctest.h>

#include <random>

#include "econet/annotation.hpp"
#include "econet/haar.hpp"
#include "oracles.hpp"

using namespace econet;
using namespace econet::haar;

namespace {

double naive_box_mean(const Volume3D& v, const Coord& c, int window, const Box& b) {
    const int r = window / 2;
    double s = 0.0;
    for (int z = b.z0; z < b.z0 + b.ez; ++z)
        for (int y = b.y0; y < b.y0 + b.ey; ++y)
            for (int x = b.x0; x < b.x0 + b.ex; ++x) s += v.clamped(c.x - r + x, c.y - r + y, c.z - r + z);
    return s / (b.ex * b.ey * b.ez);
}

}  // namespace

TEST_CASE("default bank layout") {
    const HaarBank bank = HaarBank::make({});
    CHECK(bank.window() == 7);
    CHECK(bank.size() == 64);
    const auto& f = bank.features();
    CHECK(f[0] == Feature{Box{0, 0, 0, 7, 7, 7}, std::nullopt});
    int means = 0, diffs = 0;
    for (int i = 0; i < kFixedFeatureCount; ++i) (f[i].is_difference() ? diffs : means)++;
    CHECK(means == 1 + 8 + 1);
    CHECK(diffs == 3 + 6);
    CHECK(f[kFixedFeatureCount - 1] == Feature{Box{3, 3, 3, 1, 1, 1}, std::nullopt});
    CHECK(HaarBank::make({}) == bank);
    CHECK(!(HaarBank::make({7, 64, 1}) == bank));
    CHECK_THROWS_AS(HaarBank::make({4, 64, 0}), InvalidArgument);
    CHECK_THROWS_AS(HaarBank(3, {Feature{Box{2, 0, 0, 2, 1, 1}, std::nullopt}}), InvalidArgument);
}

TEST_CASE("constant patch: means equal the constant, differences vanish") {
    const HaarBank bank = HaarBank::make({5, 40, 3});
    const std::vector<float> patch(125, 2.5f);
    const auto f = haar_features(patch, bank);
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (bank.features()[i].is_difference()) {
            CHECK(f[i] == doctest::Approx(0.0));
        } else {
            CHECK(f[i] == doctest::Approx(2.5));
        }
    }
    CHECK_THROWS_AS(haar_features(std::vector<float>(124, 0.0f), bank), DimensionMismatch);
}

TEST_CASE("single-voxel centre box returns the centre intensity") {
    std::mt19937_64 rng(1);
    std::vector<float> patch(343);
    for (auto& x : patch) x = static_cast<float>(rng() % 1000) / 7.0f;
    const HaarBank bank(7, {Feature{Box{3, 3, 3, 1, 1, 1}, std::nullopt}});
    CHECK(haar_features(patch, bank)[0] == doctest::Approx(patch[3 + 7 * (3 + 7 * 3)]));
}

TEST_CASE("features match direct per-box averaging") {
    std::mt19937_64 rng(2);
    const HaarBank bank = HaarBank::make({7, 64, 5});
    for (int t = 0; t < 20; ++t) {
        std::vector<float> patch(343);
        for (auto& x : patch) x = static_cast<float>(std::uniform_real_distribution<double>(-1, 1)(rng));
        const auto f = haar_features(patch, bank);
        for (std::size_t i = 0; i < f.size(); ++i) {
            auto mean = [&](const Box& b) {
                double s = 0.0;
                for (int z = 0; z < 7; ++z)
                    for (int y = 0; y < 7; ++y)
                        for (int x = 0; x < 7; ++x)
                            if (x >= b.x0 && x < b.x0 + b.ex && y >= b.y0 && y < b.y0 + b.ey && z >= b.z0 &&
                                z < b.z0 + b.ez)
                                s += patch[x + 7 * (y + 7 * z)];
                return s / b.volume();
            };
            const auto& ft = bank.features()[i];
            const double expect = mean(ft.a) - (ft.b ? mean(*ft.b) : 0.0);
            CHECK(f[i] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("feature volume: integral volume equals naive summation, borders included") {
    std::mt19937_64 rng(3);
    const Volume3D v = oracle::random_volume({9, 8, 7}, rng, -2.0, 2.0);
    const HaarBank bank = HaarBank::make({5, 30, 4});
    const FeatureVolume fv = haar_feature_volume(v, bank);
    CHECK(fv.channels == 30);
    CHECK(fv.dims == v.dims());
    std::vector<float> patch(125);
    double worst = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const Coord c = v.dims().coord(i);
        extract_patch(v, c, 5, patch.data());
        const auto f = haar_features(patch, bank);
        for (int k = 0; k < fv.channels; ++k) {
            const auto& ft = bank.features()[k];
            const double naive = naive_box_mean(v, c, 5, ft.a) - (ft.b ? naive_box_mean(v, c, 5, *ft.b) : 0.0);
            worst = std::max({worst, std::abs(fv.at(i)[k] - naive), std::abs(fv.at(i)[k] - f[k])});
        }
    }
    CHECK(worst < 1e-9);
}

TEST_CASE("feature volume of a constant volume has zero difference channels") {
    const Volume3D v({6, 6, 6}, {1, 1, 1}, 0.75f);
    const HaarBank bank = HaarBank::make({});
    const FeatureVolume fv = haar_feature_volume(v, bank);
    for (std::size_t i = 0; i < v.size(); ++i)
        for (int k = 0; k < fv.channels; ++k)
            CHECK(fv.at(i)[k] == doctest::Approx(bank.features()[k].is_difference() ? 0.0 : 0.75).epsilon(1e-12));
}

TEST_CASE("features are affine in intensity") {
    std::mt19937_64 rng(4);
    std::vector<float> patch(343), scaled(343);
    for (std::size_t i = 0; i < patch.size(); ++i) {
        patch[i] = static_cast<float>(static_cast<int>(rng() % 64)) / 8.0f;
        scaled[i] = 2.0f * patch[i] + 3.0f;
    }
    const HaarBank bank = HaarBank::make({});
    const auto f = haar_features(patch, bank), g = haar_features(scaled, bank);
    for (std::size_t i = 0; i < f.size(); ++i) {
        const double expect = 2.0 * f[i] + (bank.features()[i].is_difference() ? 0.0 : 3.0);
        CHECK(g[i] == doctest::Approx(expect).epsilon(1e-12));
    }
}

TEST_CASE("bank JSON round-trip") {
    const HaarBank bank = HaarBank::make({5, 25, 9});
    CHECK(bank_from_json(to_json(bank)) == bank);
}
