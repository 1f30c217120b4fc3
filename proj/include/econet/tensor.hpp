#pragma once

#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "econet/errors.hpp"

namespace econet::nn {

// Dense row-major array of doubles. Convolution activations use the
// channels-last layout [N, D, H, W, C] with W (the x axis) varying fastest
// among the spatial extents; dense activations are [rows, features].
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0) : shape_(std::move(shape)) {
        data_.assign(count(shape_), fill);
    }
    Tensor(std::vector<int> shape, std::vector<double> values) : shape_(std::move(shape)), data_(std::move(values)) {
        if (data_.size() != count(shape_)) {
            throw DimensionMismatch("tensor shape " + shape_string() + " needs " + std::to_string(count(shape_)) +
                                    " values, got " + std::to_string(data_.size()));
        }
    }

    const std::vector<int>& shape() const { return shape_; }
    int dim(std::size_t i) const { return shape_.at(i); }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::span<double> values() { return data_; }
    std::span<const double> values() const { return data_; }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Same values, new shape with the same element count.
    Tensor reshaped(std::vector<int> shape) const& { return Tensor(std::move(shape), data_); }
    Tensor reshaped(std::vector<int> shape) && { return Tensor(std::move(shape), std::move(data_)); }

    // Size of the last axis; rows() * last() == size().
    int last() const { return shape_.empty() ? 0 : shape_.back(); }
    std::size_t rows() const { return last() == 0 ? 0 : data_.size() / static_cast<std::size_t>(last()); }

    bool all_finite() const;

    std::string shape_string() const {
        std::string s = "[";
        for (std::size_t i = 0; i < shape_.size(); ++i) s += (i ? "," : "") + std::to_string(shape_[i]);
        return s + "]";
    }

    static std::size_t count(const std::vector<int>& shape) {
        std::size_t n = 1;
        for (int e : shape) {
            if (e <= 0) throw InvalidArgument("tensor extents must be positive");
            n *= static_cast<std::size_t>(e);
        }
        return n;
    }

private:
    std::vector<int> shape_;
    std::vector<double> data_;
};

}  // namespace econet::nn
