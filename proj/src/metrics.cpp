#include "econet/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace econet::metrics {

namespace {

void check_dims(const LabelMask& a, const LabelMask& b) {
    if (a.dims() != b.dims()) throw DimensionMismatch("mask dims " + a.dims().str() + " vs " + b.dims().str());
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// Lower envelope of parabolas along one line (Felzenszwalb & Huttenlocher),
// sample positions i * step.
void edt_line(const double* f, double* out, int n, double step, std::vector<int>& v, std::vector<double>& z) {
    const double s2 = step * step;
    int k = -1;
    for (int q = 0; q < n; ++q) {
        if (f[q] == kInf) continue;
        while (k >= 0) {
            const int r = v[k];
            const double sect = ((f[q] + s2 * q * q) - (f[r] + s2 * r * r)) / (2.0 * s2 * (q - r));
            if (sect <= z[k]) --k;
            else break;
        }
        ++k;
        v[k] = q;
        if (k == 0) {
            z[0] = -kInf;
        } else {
            const int r = v[k - 1];
            z[k] = ((f[q] + s2 * q * q) - (f[r] + s2 * r * r)) / (2.0 * s2 * (q - r));
        }
    }
    if (k < 0) {
        for (int q = 0; q < n; ++q) out[q] = kInf;
        return;
    }
    int j = 0;
    for (int q = 0; q < n; ++q) {
        while (j < k && z[j + 1] < q) ++j;
        const double d = step * (q - v[j]);
        out[q] = d * d + f[v[j]];
    }
}

}  // namespace

double dice(const LabelMask& pred, const LabelMask& gt) {
    check_dims(pred, gt);
    std::size_t inter = 0, a = 0, b = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] != 0, g = gt[i] != 0;
        inter += p && g;
        a += p;
        b += g;
    }
    if (a + b == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(a + b);
}

std::vector<std::size_t> surface_voxels(const LabelMask& m) {
    const Dims& d = m.dims();
    std::vector<std::size_t> out;
    for (int z = 0; z < d.nz; ++z)
        for (int y = 0; y < d.ny; ++y)
            for (int x = 0; x < d.nx; ++x) {
                if (!m.at(x, y, z)) continue;
                const bool edge = x == 0 || y == 0 || z == 0 || x == d.nx - 1 || y == d.ny - 1 || z == d.nz - 1;
                if (edge || !m.at(x - 1, y, z) || !m.at(x + 1, y, z) || !m.at(x, y - 1, z) ||
                    !m.at(x, y + 1, z) || !m.at(x, y, z - 1) || !m.at(x, y, z + 1)) {
                    out.push_back(d.index(x, y, z));
                }
            }
    return out;
}

std::vector<double> squared_distance_transform(const Dims& d, std::span<const std::size_t> seeds,
                                               const Spacing& spacing) {
    std::vector<double> g(d.voxels(), kInf);
    for (auto s : seeds) {
        if (s >= g.size()) throw InvalidArgument("distance transform seed out of range");
        g[s] = 0.0;
    }
    const int longest = std::max({d.nx, d.ny, d.nz});
    const int extents[3] = {d.nx, d.ny, d.nz};
    const std::size_t strides[3] = {1, static_cast<std::size_t>(d.nx), static_cast<std::size_t>(d.nx) * d.ny};
    for (int axis = 0; axis < 3; ++axis) {
        const int n = extents[axis];
        const std::size_t stride = strides[axis];
        const std::size_t lines = d.voxels() / n;
        // enumerate line starts: all voxels with coordinate 0 along `axis`
#pragma omp parallel
        {
            std::vector<double> f(longest), out(longest), z(longest + 1);
            std::vector<int> v(longest);
#pragma omp for schedule(static)
            for (long li = 0; li < static_cast<long>(lines); ++li) {
                std::size_t start;
                const auto l = static_cast<std::size_t>(li);
                if (axis == 0) start = l * d.nx;
                else if (axis == 1) start = (l / d.nx) * strides[2] + l % d.nx;
                else start = l;
                for (int q = 0; q < n; ++q) f[q] = g[start + q * stride];
                edt_line(f.data(), out.data(), n, spacing[axis], v, z);
                for (int q = 0; q < n; ++q) g[start + q * stride] = out[q];
            }
        }
    }
    return g;
}

std::optional<double> assd(const LabelMask& pred, const LabelMask& gt, const Spacing& spacing) {
    check_dims(pred, gt);
    const auto sp = surface_voxels(pred), sg = surface_voxels(gt);
    if (sp.empty() || sg.empty()) return std::nullopt;
    const auto dg = squared_distance_transform(gt.dims(), sg, spacing);
    const auto dp = squared_distance_transform(pred.dims(), sp, spacing);
    double sum = 0.0;
    for (auto i : sp) sum += std::sqrt(dg[i]);
    for (auto i : sg) sum += std::sqrt(dp[i]);
    return sum / static_cast<double>(sp.size() + sg.size());
}

Components connected_components(const LabelMask& m, Connectivity c) {
    const Dims& d = m.dims();
    Components out;
    out.labels.assign(d.voxels(), 0);
    std::vector<std::array<int, 3>> offsets;
    for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
            for (int dx = -1; dx <= 1; ++dx) {
                const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manhattan == 0) continue;
                if (c == Connectivity::six && manhattan > 1) continue;
                if (c == Connectivity::eighteen && manhattan > 2) continue;
                offsets.push_back({dx, dy, dz});
            }
    std::vector<std::size_t> stack;
    for (std::size_t seed = 0; seed < d.voxels(); ++seed) {
        if (!m[seed] || out.labels[seed]) continue;
        const int label = ++out.count;
        std::size_t size = 0;
        out.labels[seed] = label;
        stack.push_back(seed);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            ++size;
            const Coord p = d.coord(i);
            for (const auto& o : offsets) {
                const Coord q{p.x + o[0], p.y + o[1], p.z + o[2]};
                if (!d.contains(q)) continue;
                const std::size_t j = d.index(q);
                if (m[j] && !out.labels[j]) {
                    out.labels[j] = label;
                    stack.push_back(j);
                }
            }
        }
        out.sizes.push_back(size);
    }
    return out;
}

Summary summarize(std::span<const double> values) {
    Summary s;
    s.n = values.size();
    if (values.empty()) return s;
    double sum = 0.0;
    for (double v : values) sum += v;
    s.mean = sum / static_cast<double>(s.n);
    double ss = 0.0;
    for (double v : values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.n));
    return s;
}

}  // namespace econet::metrics
