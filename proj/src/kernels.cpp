#include "econet/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cstring>
#include <vector>

#include <Eigen/Core>

#include "econet/errors.hpp"

namespace econet::kernels {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMatrix = Eigen::Map<RowMatrix>;
using ConstMapMatrix = Eigen::Map<const RowMatrix>;
using ConstMapVector = Eigen::Map<const Eigen::RowVectorXd>;
using MapVector = Eigen::Map<Eigen::RowVectorXd>;

void check(bool ok, const char* what) {
    if (!ok) throw DimensionMismatch(what);
}

void check_conv_spans(const Conv3dShape& s, std::size_t in, std::size_t w, std::size_t b, std::size_t out) {
    s.validate();
    check(in == s.input_size(), "conv3d: input size does not match shape");
    check(w == s.weight_size(), "conv3d: weight size does not match shape");
    check(b == static_cast<std::size_t>(s.out_c), "conv3d: bias size does not match out channels");
    check(out == s.output_size(), "conv3d: output size does not match shape");
}

// Copies the receptive fields of output rows [row0, row0 + nrows) into `col`
// (nrows x patch_size). Rows enumerate (sample, oz, oy, ox) with ox fastest.
void im2col(const Conv3dShape& s, const double* in, std::size_t row0, std::size_t nrows, double* col) {
    const int od = s.out_d(), oh = s.out_h(), ow = s.out_w();
    const std::size_t run = static_cast<std::size_t>(s.kernel) * s.in_c;
    const std::size_t in_row = static_cast<std::size_t>(s.in_w) * s.in_c;
    const std::size_t in_plane = in_row * s.in_h;
    const std::size_t in_sample = in_plane * s.in_d;
    const std::size_t per_sample = static_cast<std::size_t>(od) * oh * ow;
    for (std::size_t r = 0; r < nrows; ++r) {
        const std::size_t g = row0 + r;
        const std::size_t n = g / per_sample;
        std::size_t rem = g % per_sample;
        const int oz = static_cast<int>(rem / (static_cast<std::size_t>(oh) * ow));
        rem %= static_cast<std::size_t>(oh) * ow;
        const int oy = static_cast<int>(rem / ow);
        const int ox = static_cast<int>(rem % ow);
        const double* base = in + n * in_sample + static_cast<std::size_t>(ox) * s.in_c;
        double* dst = col + r * s.patch_size();
        for (int kz = 0; kz < s.kernel; ++kz)
            for (int ky = 0; ky < s.kernel; ++ky) {
                const double* src = base + (oz + kz) * in_plane + (oy + ky) * in_row;
                std::memcpy(dst, src, run * sizeof(double));
                dst += run;
            }
    }
}

// Inverse of im2col for a block of rows belonging to one sample: adds the
// column gradients back onto the input gradient.
void col2im_add(const Conv3dShape& s, const double* col, std::size_t row0, std::size_t nrows, double* d_in) {
    const int oh = s.out_h(), ow = s.out_w();
    const std::size_t run = static_cast<std::size_t>(s.kernel) * s.in_c;
    const std::size_t in_row = static_cast<std::size_t>(s.in_w) * s.in_c;
    const std::size_t in_plane = in_row * s.in_h;
    const std::size_t in_sample = in_plane * s.in_d;
    const std::size_t per_sample = s.out_positions();
    for (std::size_t r = 0; r < nrows; ++r) {
        const std::size_t g = row0 + r;
        const std::size_t n = g / per_sample;
        std::size_t rem = g % per_sample;
        const int oz = static_cast<int>(rem / (static_cast<std::size_t>(oh) * ow));
        rem %= static_cast<std::size_t>(oh) * ow;
        const int oy = static_cast<int>(rem / ow);
        const int ox = static_cast<int>(rem % ow);
        double* base = d_in + n * in_sample + static_cast<std::size_t>(ox) * s.in_c;
        const double* src = col + r * s.patch_size();
        for (int kz = 0; kz < s.kernel; ++kz)
            for (int ky = 0; ky < s.kernel; ++ky) {
                double* dst = base + (oz + kz) * in_plane + (oy + ky) * in_row;
                for (std::size_t i = 0; i < run; ++i) dst[i] += src[i];
                src += run;
            }
    }
}

std::size_t block_count(std::size_t rows) { return (rows + kRowBlock - 1) / kRowBlock; }

}  // namespace

std::size_t Conv3dShape::input_size() const {
    return static_cast<std::size_t>(batch) * in_d * in_h * in_w * in_c;
}
std::size_t Conv3dShape::output_size() const { return static_cast<std::size_t>(batch) * out_positions() * out_c; }
std::size_t Conv3dShape::weight_size() const { return patch_size() * out_c; }
std::size_t Conv3dShape::out_positions() const {
    return static_cast<std::size_t>(out_d()) * out_h() * out_w();
}
std::size_t Conv3dShape::patch_size() const {
    return static_cast<std::size_t>(kernel) * kernel * kernel * in_c;
}
void Conv3dShape::validate() const {
    if (batch <= 0 || in_c <= 0 || out_c <= 0 || kernel <= 0) throw DimensionMismatch("conv3d: non-positive extent");
    if (kernel > in_d || kernel > in_h || kernel > in_w) {
        throw DimensionMismatch("conv3d: kernel edge " + std::to_string(kernel) + " exceeds input extent");
    }
}

int max_threads() { return omp_get_max_threads(); }

void conv3d_forward_reference(const Conv3dShape& s, std::span<const double> in, std::span<const double> weight,
                              std::span<const double> bias, std::span<double> out) {
    check_conv_spans(s, in.size(), weight.size(), bias.size(), out.size());
    const int od = s.out_d(), oh = s.out_h(), ow = s.out_w(), k = s.kernel;
    std::size_t o = 0;
    for (int n = 0; n < s.batch; ++n)
        for (int oz = 0; oz < od; ++oz)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox)
                    for (int co = 0; co < s.out_c; ++co, ++o) {
                        double acc = bias[co];
                        std::size_t wi = co;
                        for (int kz = 0; kz < k; ++kz)
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx)
                                    for (int ci = 0; ci < s.in_c; ++ci, wi += s.out_c) {
                                        const std::size_t ii =
                                            ((((static_cast<std::size_t>(n) * s.in_d + oz + kz) * s.in_h + oy + ky) *
                                                  s.in_w +
                                              ox + kx) *
                                             s.in_c) +
                                            ci;
                                        acc += in[ii] * weight[wi];
                                    }
                        out[o] = acc;
                    }
}

void conv3d_forward(const Conv3dShape& s, std::span<const double> in, std::span<const double> weight,
                    std::span<const double> bias, std::span<double> out) {
    check_conv_spans(s, in.size(), weight.size(), bias.size(), out.size());
    const std::size_t rows = static_cast<std::size_t>(s.batch) * s.out_positions();
    const std::size_t ps = s.patch_size();
    const ConstMapMatrix w(weight.data(), static_cast<Eigen::Index>(ps), s.out_c);
    const ConstMapVector b(bias.data(), s.out_c);
    const auto blocks = static_cast<long>(block_count(rows));

#pragma omp parallel
    {
        std::vector<double> col(kRowBlock * ps);
#pragma omp for schedule(static)
        for (long blk = 0; blk < blocks; ++blk) {
            const std::size_t r0 = static_cast<std::size_t>(blk) * kRowBlock;
            const std::size_t nr = std::min(kRowBlock, rows - r0);
            im2col(s, in.data(), r0, nr, col.data());
            const ConstMapMatrix c(col.data(), static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(ps));
            MapMatrix y(out.data() + r0 * s.out_c, static_cast<Eigen::Index>(nr), s.out_c);
            y.noalias() = c * w;
            y.rowwise() += b;
        }
    }
}

void conv3d_backward_reference(const Conv3dShape& s, std::span<const double> in, std::span<const double> weight,
                               std::span<const double> d_out, std::span<double> d_weight,
                               std::span<double> d_bias, std::span<double> d_in) {
    check_conv_spans(s, in.size(), weight.size(), d_bias.size(), d_out.size());
    check(d_weight.size() == weight.size(), "conv3d: weight gradient size mismatch");
    check(d_in.empty() || d_in.size() == in.size(), "conv3d: input gradient size mismatch");
    if (!d_in.empty()) std::fill(d_in.begin(), d_in.end(), 0.0);
    const int od = s.out_d(), oh = s.out_h(), ow = s.out_w(), k = s.kernel;
    std::size_t o = 0;
    for (int n = 0; n < s.batch; ++n)
        for (int oz = 0; oz < od; ++oz)
            for (int oy = 0; oy < oh; ++oy)
                for (int ox = 0; ox < ow; ++ox)
                    for (int co = 0; co < s.out_c; ++co, ++o) {
                        const double g = d_out[o];
                        d_bias[co] += g;
                        std::size_t wi = co;
                        for (int kz = 0; kz < k; ++kz)
                            for (int ky = 0; ky < k; ++ky)
                                for (int kx = 0; kx < k; ++kx)
                                    for (int ci = 0; ci < s.in_c; ++ci, wi += s.out_c) {
                                        const std::size_t ii =
                                            ((((static_cast<std::size_t>(n) * s.in_d + oz + kz) * s.in_h + oy + ky) *
                                                  s.in_w +
                                              ox + kx) *
                                             s.in_c) +
                                            ci;
                                        d_weight[wi] += g * in[ii];
                                        if (!d_in.empty()) d_in[ii] += g * weight[wi];
                                    }
                    }
}

void conv3d_backward(const Conv3dShape& s, std::span<const double> in, std::span<const double> weight,
                     std::span<const double> d_out, std::span<double> d_weight, std::span<double> d_bias,
                     std::span<double> d_in) {
    check_conv_spans(s, in.size(), weight.size(), d_bias.size(), d_out.size());
    check(d_weight.size() == weight.size(), "conv3d: weight gradient size mismatch");
    check(d_in.empty() || d_in.size() == in.size(), "conv3d: input gradient size mismatch");
    const std::size_t rows = static_cast<std::size_t>(s.batch) * s.out_positions();
    const std::size_t ps = s.patch_size();
    const auto blocks = static_cast<long>(block_count(rows));
    const int threads = omp_get_max_threads();

    // Weight/bias gradients: per-thread partial sums reduced in thread order.
    std::vector<RowMatrix> dw_part(threads, RowMatrix::Zero(static_cast<Eigen::Index>(ps), s.out_c));
    std::vector<Eigen::RowVectorXd> db_part(threads, Eigen::RowVectorXd::Zero(s.out_c));
#pragma omp parallel num_threads(threads)
    {
        const int t = omp_get_thread_num();
        std::vector<double> col(kRowBlock * ps);
#pragma omp for schedule(static)
        for (long blk = 0; blk < blocks; ++blk) {
            const std::size_t r0 = static_cast<std::size_t>(blk) * kRowBlock;
            const std::size_t nr = std::min(kRowBlock, rows - r0);
            im2col(s, in.data(), r0, nr, col.data());
            const ConstMapMatrix c(col.data(), static_cast<Eigen::Index>(nr), static_cast<Eigen::Index>(ps));
            const ConstMapMatrix g(d_out.data() + r0 * s.out_c, static_cast<Eigen::Index>(nr), s.out_c);
            dw_part[t].noalias() += c.transpose() * g;
            db_part[t] += g.colwise().sum();
        }
    }
    MapMatrix dw(d_weight.data(), static_cast<Eigen::Index>(ps), s.out_c);
    MapVector db(d_bias.data(), s.out_c);
    for (int t = 0; t < threads; ++t) {
        dw += dw_part[t];
        db += db_part[t];
    }

    if (d_in.empty()) return;
    // Input gradient: samples are independent, so parallelize over them and
    // scatter serially within each sample.
    std::fill(d_in.begin(), d_in.end(), 0.0);
    const ConstMapMatrix w(weight.data(), static_cast<Eigen::Index>(ps), s.out_c);
    const std::size_t per_sample = s.out_positions();
#pragma omp parallel
    {
        RowMatrix dcol;
#pragma omp for schedule(static)
        for (int n = 0; n < s.batch; ++n) {
            for (std::size_t off = 0; off < per_sample; off += kRowBlock) {
                const std::size_t r0 = static_cast<std::size_t>(n) * per_sample + off;
                const std::size_t nr = std::min(kRowBlock, per_sample - off);
                const ConstMapMatrix g(d_out.data() + r0 * s.out_c, static_cast<Eigen::Index>(nr), s.out_c);
                dcol.noalias() = g * w.transpose();
                col2im_add(s, dcol.data(), r0, nr, d_in.data());
            }
        }
    }
}

void dense_forward_reference(std::size_t rows, int in, int out, std::span<const double> x,
                             std::span<const double> weight, std::span<const double> bias, std::span<double> y) {
    check(x.size() == rows * in && weight.size() == static_cast<std::size_t>(in) * out &&
              bias.size() == static_cast<std::size_t>(out) && y.size() == rows * out,
          "dense: size mismatch");
    for (std::size_t r = 0; r < rows; ++r)
        for (int o = 0; o < out; ++o) {
            double acc = bias[o];
            for (int i = 0; i < in; ++i) acc += x[r * in + i] * weight[static_cast<std::size_t>(i) * out + o];
            y[r * out + o] = acc;
        }
}

void dense_forward(std::size_t rows, int in, int out, std::span<const double> x, std::span<const double> weight,
                   std::span<const double> bias, std::span<double> y) {
    check(x.size() == rows * in && weight.size() == static_cast<std::size_t>(in) * out &&
              bias.size() == static_cast<std::size_t>(out) && y.size() == rows * out,
          "dense: size mismatch");
    const ConstMapMatrix w(weight.data(), in, out);
    const ConstMapVector b(bias.data(), out);
    const std::size_t block = 4 * kRowBlock;
    const auto blocks = static_cast<long>((rows + block - 1) / block);
#pragma omp parallel for schedule(static)
    for (long blk = 0; blk < blocks; ++blk) {
        const std::size_t r0 = static_cast<std::size_t>(blk) * block;
        const std::size_t nr = std::min(block, rows - r0);
        const ConstMapMatrix xm(x.data() + r0 * in, static_cast<Eigen::Index>(nr), in);
        MapMatrix ym(y.data() + r0 * out, static_cast<Eigen::Index>(nr), out);
        ym.noalias() = xm * w;
        ym.rowwise() += b;
    }
}

void dense_backward(std::size_t rows, int in, int out, std::span<const double> x, std::span<const double> weight,
                    std::span<const double> d_y, std::span<double> d_weight, std::span<double> d_bias,
                    std::span<double> d_x) {
    check(x.size() == rows * in && weight.size() == static_cast<std::size_t>(in) * out &&
              d_y.size() == rows * out && d_weight.size() == weight.size() &&
              d_bias.size() == static_cast<std::size_t>(out) && (d_x.empty() || d_x.size() == x.size()),
          "dense backward: size mismatch");
    const ConstMapMatrix xm(x.data(), static_cast<Eigen::Index>(rows), in);
    const ConstMapMatrix g(d_y.data(), static_cast<Eigen::Index>(rows), out);
    MapMatrix dw(d_weight.data(), in, out);
    MapVector db(d_bias.data(), out);
    dw.noalias() += xm.transpose() * g;
    db += g.colwise().sum();
    if (!d_x.empty()) {
        const ConstMapMatrix w(weight.data(), in, out);
        MapMatrix dx(d_x.data(), static_cast<Eigen::Index>(rows), in);
        dx.noalias() = g * w.transpose();
    }
}

}  // namespace econet::kernels
