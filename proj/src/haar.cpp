#include "econet/haar.hpp"

#include <algorithm>
#include <random>

namespace econet::haar {

using json = nlohmann::json;

namespace {

void check_box(const Box& b, int window) {
    if (b.x0 < 0 || b.y0 < 0 || b.z0 < 0 || b.ex <= 0 || b.ey <= 0 || b.ez <= 0 || b.x0 + b.ex > window ||
        b.y0 + b.ey > window || b.z0 + b.ez > window) {
        throw InvalidArgument("haar box lies outside the " + std::to_string(window) + "^3 window");
    }
}

Box cube(int origin, int edge) { return {origin, origin, origin, edge, edge, edge}; }

}  // namespace

HaarBank::HaarBank(int window, std::vector<Feature> features) : window_(window), features_(std::move(features)) {
    if (window < 1) throw InvalidArgument("haar window must be positive");
    for (const auto& f : features_) {
        check_box(f.a, window_);
        if (f.b) check_box(*f.b, window_);
    }
}

HaarBank HaarBank::make(const BankSpec& spec) {
    const int k = spec.window;
    if (k < 3 || k % 2 == 0) throw InvalidArgument("haar window must be odd and >= 3");
    if (spec.size < 1) throw InvalidArgument("haar bank size must be positive");
    std::vector<Feature> f;

    f.push_back({cube(0, k), std::nullopt});

    const int h = (k + 1) / 2;
    for (int oz : {0, k - h})
        for (int oy : {0, k - h})
            for (int ox : {0, k - h}) f.push_back({Box{ox, oy, oz, h, h, h}, std::nullopt});

    const int half = k / 2;
    for (int axis = 0; axis < 3; ++axis) {
        Box lo = cube(0, k), hi = cube(0, k);
        int* lo_o[3] = {&lo.x0, &lo.y0, &lo.z0};
        int* lo_e[3] = {&lo.ex, &lo.ey, &lo.ez};
        int* hi_o[3] = {&hi.x0, &hi.y0, &hi.z0};
        int* hi_e[3] = {&hi.ex, &hi.ey, &hi.ez};
        *lo_e[axis] = half;
        *lo_o[axis] = 0;
        *hi_e[axis] = half;
        *hi_o[axis] = k - half;
        f.push_back({lo, hi});
    }

    for (int r : {0, 1}) {
        const int edge = 2 * r + 1;
        const int origin = k / 2 - r;
        for (int axis = 0; axis < 3; ++axis) {
            Box rod = cube(origin, edge);
            int* o[3] = {&rod.x0, &rod.y0, &rod.z0};
            int* e[3] = {&rod.ex, &rod.ey, &rod.ez};
            *o[axis] = 0;
            *e[axis] = k;
            f.push_back({cube(origin, edge), rod});
        }
    }

    f.push_back({cube(k / 2, 1), std::nullopt});

    std::mt19937_64 rng(spec.seed);
    auto random_box = [&] {
        int o[3], e[3];
        for (int a = 0; a < 3; ++a) {
            o[a] = static_cast<int>(rng() % static_cast<std::uint64_t>(k));
            e[a] = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(k - o[a]));
        }
        return Box{o[0], o[1], o[2], e[0], e[1], e[2]};
    };
    while (static_cast<int>(f.size()) < spec.size) {
        Box a = random_box();
        Box b = random_box();
        f.push_back({a, b});
    }
    f.resize(spec.size);
    return HaarBank(k, std::move(f));
}

std::vector<double> haar_features(std::span<const float> patch, const HaarBank& bank) {
    const int k = bank.window();
    if (patch.size() != static_cast<std::size_t>(k) * k * k) {
        throw DimensionMismatch("haar patch has " + std::to_string(patch.size()) + " values, window needs " +
                                std::to_string(k * k * k));
    }
    auto box_mean = [&](const Box& b) {
        double sum = 0.0;
        for (int z = b.z0; z < b.z0 + b.ez; ++z)
            for (int y = b.y0; y < b.y0 + b.ey; ++y)
                for (int x = b.x0; x < b.x0 + b.ex; ++x) sum += patch[(static_cast<std::size_t>(z) * k + y) * k + x];
        return sum / b.volume();
    };
    std::vector<double> out;
    out.reserve(bank.size());
    for (const auto& f : bank.features()) {
        double v = box_mean(f.a);
        if (f.b) v -= box_mean(*f.b);
        out.push_back(v);
    }
    return out;
}

FeatureVolume haar_feature_volume(const Volume3D& v, const HaarBank& bank) {
    const Dims& d = v.dims();
    const int r = bank.window() / 2;
    // Integral of the replication-padded volume with a leading zero plane on
    // each axis: I(x,y,z) = sum over padded [0,x) x [0,y) x [0,z).
    const int px = d.nx + 2 * r + 1, py = d.ny + 2 * r + 1, pz = d.nz + 2 * r + 1;
    std::vector<double> integral(static_cast<std::size_t>(px) * py * pz, 0.0);
    auto I = [&](int x, int y, int z) -> double& {
        return integral[(static_cast<std::size_t>(z) * py + y) * px + x];
    };
    for (int z = 1; z < pz; ++z)
        for (int y = 1; y < py; ++y) {
            double row = 0.0;
            for (int x = 1; x < px; ++x) {
                row += v.clamped(x - 1 - r, y - 1 - r, z - 1 - r);
                I(x, y, z) = row + I(x, y - 1, z) + I(x, y, z - 1) - I(x, y - 1, z - 1);
            }
        }

    FeatureVolume out{d, static_cast<int>(bank.size()), {}};
    out.values.resize(d.voxels() * bank.size());
    const auto& feats = bank.features();
    const int channels = out.channels;

#pragma omp parallel for schedule(static)
    for (int z = 0; z < d.nz; ++z) {
        auto box_mean = [&](const Box& b, int x, int y) {
            // window origin for voxel (x,y,z) in padded coordinates is (x,y,z)
            const int x0 = x + b.x0, y0 = y + b.y0, z0 = z + b.z0;
            const int x1 = x0 + b.ex, y1 = y0 + b.ey, z1 = z0 + b.ez;
            const double s = I(x1, y1, z1) - I(x0, y1, z1) - I(x1, y0, z1) - I(x1, y1, z0) + I(x0, y0, z1) +
                             I(x0, y1, z0) + I(x1, y0, z0) - I(x0, y0, z0);
            return s / b.volume();
        };
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                double* dst = out.values.data() + d.index(x, y, z) * channels;
                for (int c = 0; c < channels; ++c) {
                    double val = box_mean(feats[c].a, x, y);
                    if (feats[c].b) val -= box_mean(*feats[c].b, x, y);
                    dst[c] = val;
                }
            }
    }
    return out;
}

json to_json(const HaarBank& bank) {
    json feats = json::array();
    auto box_json = [](const Box& b) { return json{b.x0, b.y0, b.z0, b.ex, b.ey, b.ez}; };
    for (const auto& f : bank.features()) {
        feats.push_back({{"a", box_json(f.a)}, {"b", f.b ? box_json(*f.b) : json(nullptr)}});
    }
    return {{"window", bank.window()}, {"features", feats}};
}

HaarBank bank_from_json(const json& j) {
    auto box = [](const json& b) {
        return Box{b.at(0).get<int>(), b.at(1).get<int>(), b.at(2).get<int>(),
                   b.at(3).get<int>(), b.at(4).get<int>(), b.at(5).get<int>()};
    };
    std::vector<Feature> feats;
    for (const auto& f : j.at("features")) {
        Feature ft{box(f.at("a")), std::nullopt};
        if (f.contains("b") && !f.at("b").is_null()) ft.b = box(f.at("b"));
        feats.push_back(ft);
    }
    return HaarBank(j.at("window").get<int>(), std::move(feats));
}

}  // namespace econet::haar
