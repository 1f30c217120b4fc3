#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "econet/errors.hpp"

namespace econet {

// Voxel coordinate. Linear order everywhere in the project is x fastest,
// then y, then z: index = x + nx * (y + ny * z).
struct Coord {
    int x = 0;
    int y = 0;
    int z = 0;

    friend bool operator==(const Coord&, const Coord&) = default;
    // Ordered like the linear voxel index so sorted containers iterate in
    // memory order.
    friend bool operator<(const Coord& a, const Coord& b) {
        if (a.z != b.z) return a.z < b.z;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    }
};

struct Dims {
    int nx = 0;
    int ny = 0;
    int nz = 0;

    friend bool operator==(const Dims&, const Dims&) = default;

    std::size_t voxels() const {
        return static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny) *
               static_cast<std::size_t>(nz);
    }
    bool contains(const Coord& c) const {
        return c.x >= 0 && c.y >= 0 && c.z >= 0 && c.x < nx && c.y < ny && c.z < nz;
    }
    std::size_t index(int x, int y, int z) const {
        return static_cast<std::size_t>(x) +
               static_cast<std::size_t>(nx) *
                   (static_cast<std::size_t>(y) + static_cast<std::size_t>(ny) * static_cast<std::size_t>(z));
    }
    std::size_t index(const Coord& c) const { return index(c.x, c.y, c.z); }
    Coord coord(std::size_t i) const {
        const auto plane = static_cast<std::size_t>(nx) * static_cast<std::size_t>(ny);
        return {static_cast<int>(i % nx), static_cast<int>((i / nx) % ny), static_cast<int>(i / plane)};
    }
    std::string str() const {
        return "(" + std::to_string(nx) + "," + std::to_string(ny) + "," + std::to_string(nz) + ")";
    }
};

using Spacing = std::array<double, 3>;

// Dense scalar field on a voxel grid. Volume3D, LabelMask and LikelihoodMap
// are all instances; they differ only in the element type.
template <typename T>
class Grid {
public:
    using value_type = T;

    Grid() = default;
    explicit Grid(Dims dims, Spacing spacing = {1.0, 1.0, 1.0}, T fill = T{})
        : dims_(dims), spacing_(spacing), data_(checked_size(dims), fill) {}
    Grid(Dims dims, Spacing spacing, std::vector<T> data)
        : dims_(dims), spacing_(spacing), data_(std::move(data)) {
        if (data_.size() != checked_size(dims)) {
            throw DimensionMismatch("grid payload has " + std::to_string(data_.size()) +
                                    " values but dims " + dims.str() + " need " +
                                    std::to_string(dims.voxels()));
        }
    }

    const Dims& dims() const { return dims_; }
    const Spacing& spacing() const { return spacing_; }
    void set_spacing(const Spacing& s) { spacing_ = s; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }
    T& at(int x, int y, int z) { return data_[dims_.index(x, y, z)]; }
    const T& at(int x, int y, int z) const { return data_[dims_.index(x, y, z)]; }
    T& at(const Coord& c) { return data_[dims_.index(c)]; }
    const T& at(const Coord& c) const { return data_[dims_.index(c)]; }

    // Edge-replicated read: out-of-range coordinates clamp to the nearest
    // border voxel.
    const T& clamped(int x, int y, int z) const {
        x = x < 0 ? 0 : (x >= dims_.nx ? dims_.nx - 1 : x);
        y = y < 0 ? 0 : (y >= dims_.ny ? dims_.ny - 1 : y);
        z = z < 0 ? 0 : (z >= dims_.nz ? dims_.nz - 1 : z);
        return data_[dims_.index(x, y, z)];
    }

    std::span<T> values() { return data_; }
    std::span<const T> values() const { return data_; }
    std::vector<T>& storage() { return data_; }
    const std::vector<T>& storage() const { return data_; }

    friend bool operator==(const Grid&, const Grid&) = default;

private:
    static std::size_t checked_size(const Dims& d) {
        if (d.nx <= 0 || d.ny <= 0 || d.nz <= 0) {
            throw InvalidArgument("grid dims must be positive, got " + d.str());
        }
        return d.voxels();
    }

    Dims dims_{};
    Spacing spacing_{1.0, 1.0, 1.0};
    std::vector<T> data_;
};

using Volume3D = Grid<float>;
// 0 = background, 1 = foreground.
using LabelMask = Grid<std::uint8_t>;
// Per-voxel foreground probability in [0,1].
using LikelihoodMap = Grid<double>;

inline std::size_t count_foreground(const LabelMask& m) {
    std::size_t n = 0;
    for (auto v : m.values()) n += v != 0;
    return n;
}

}  // namespace econet
