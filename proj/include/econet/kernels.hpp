#pragma once

// Compute kernels behind the network layers. Every kernel exists twice:
//
//   *_reference  plain nested loops, single-threaded. Kept as the oracle for
//                tests and as the baseline in the benchmark target.
//   (no suffix)  im2col + GEMM, OpenMP-parallel over blocks of output rows.
//
// Both produce the same values up to floating-point reassociation. The
// parallel versions are deterministic for a fixed thread count.
//
// Layouts:
//   conv input   [batch, in_d, in_h, in_w, in_c]       (channels last)
//   conv weight  [k, k, k, in_c, out_c]                (a (k^3*in_c) x out_c matrix)
//   conv output  [batch, out_d, out_h, out_w, out_c]   (valid convolution)
//   dense        x [rows, in], w [in, out], y [rows, out]

#include <cstddef>
#include <span>

namespace econet::kernels {

struct Conv3dShape {
    int batch = 1;
    int in_d = 1;
    int in_h = 1;
    int in_w = 1;
    int in_c = 1;
    int kernel = 1;
    int out_c = 1;

    int out_d() const { return in_d - kernel + 1; }
    int out_h() const { return in_h - kernel + 1; }
    int out_w() const { return in_w - kernel + 1; }
    std::size_t input_size() const;
    std::size_t output_size() const;
    std::size_t weight_size() const;
    std::size_t out_positions() const;  // per sample
    std::size_t patch_size() const;     // k^3 * in_c
    void validate() const;
};

void conv3d_forward_reference(const Conv3dShape& s, std::span<const double> in, std::span<const double> weight,
                              std::span<const double> bias, std::span<double> out);
void conv3d_forward(const Conv3dShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out);

// Accumulates into d_weight / d_bias. Writes d_in when it is non-empty.
void conv3d_backward_reference(const Conv3dShape& s, std::span<const double> in, std::span<const double> weight,
                               std::span<const double> d_out, std::span<double> d_weight,
                               std::span<double> d_bias, std::span<double> d_in);
void conv3d_backward(const Conv3dShape& s, std::span<const double> in, std::span<const double> weight,
                     std::span<const double> d_out, std::span<double> d_weight, std::span<double> d_bias,
                     std::span<double> d_in);

void dense_forward_reference(std::size_t rows, int in, int out, std::span<const double> x,
                             std::span<const double> weight, std::span<const double> bias, std::span<double> y);
void dense_forward(std::size_t rows, int in, int out, std::span<const double> x, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> y);

// Accumulates into d_weight / d_bias; writes d_x when non-empty.
void dense_backward(std::size_t rows, int in, int out, std::span<const double> x, std::span<const double> weight,
                    std::span<const double> d_y, std::span<double> d_weight, std::span<double> d_bias,
                    std::span<double> d_x);

// Rows handled per parallel block.
inline constexpr std::size_t kRowBlock = 256;

int max_threads();

}  // namespace econet::kernels
