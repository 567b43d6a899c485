#pragma once

// Hot loops of the network. The functions in `fstta::kernels` are OpenMP
// parallel; every parallel loop partitions independent outputs, so results are
// bit-identical for any thread count. `fstta::kernels::reference` holds plain
// textbook loops used as the oracle in tests and as the benchmark baseline.

#include <cstddef>
#include <span>

namespace fstta::kernels {

/// Stride-1 convolution with zero padding that preserves H and W.
struct ConvGeometry {
    std::size_t batch = 0;
    std::size_t in_channels = 0;
    std::size_t out_channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t ksize = 3;

    std::size_t pad() const noexcept { return ksize / 2; }
    std::size_t pixels() const noexcept { return height * width; }
    std::size_t col_rows() const noexcept { return in_channels * ksize * ksize; }
    std::size_t col_size() const noexcept { return batch * col_rows() * pixels(); }
    std::size_t input_size() const noexcept { return batch * in_channels * pixels(); }
    std::size_t output_size() const noexcept { return batch * out_channels * pixels(); }
    std::size_t weight_size() const noexcept { return out_channels * col_rows(); }
};

/// y = conv(x, w). When `cols` is non-empty it receives the im2col buffer
/// (batch x col_rows x pixels), which conv2d_backward can reuse.
void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y, std::span<double> cols = {});

/// Accumulates into dx (if non-empty) and dw (if non-empty).
/// `cols` must be the buffer filled by conv2d_forward for the same input.
void conv2d_backward(const ConvGeometry& g, std::span<const double> cols, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw);

/// Per (sample, channel) standardization followed by a per-channel affine map.
/// Writes y, the standardized values xhat, and 1/sqrt(var + eps) per instance.
void instance_norm_forward(std::size_t n, std::size_t c, std::size_t hw, std::span<const double> x,
                           std::span<const double> gamma, std::span<const double> beta, double eps,
                           std::span<double> y, std::span<double> xhat, std::span<double> inv_std);

/// Accumulates into dx, dgamma, dbeta (each may be empty).
void instance_norm_backward(std::size_t n, std::size_t c, std::size_t hw, std::span<const double> xhat,
                            std::span<const double> inv_std, std::span<const double> gamma,
                            std::span<const double> dy, std::span<double> dx, std::span<double> dgamma,
                            std::span<double> dbeta);

/// c (m x n) += a (m x k) * b (k x n)
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c);
/// c (m x n) += a^T * b, a is (k x m), b is (k x n)
void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c);
/// c (m x n) += a * b^T, a is (m x k), b is (n x k)
void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c);

/// Threads used by the parallel kernels (OpenMP max threads, or 1 without OpenMP).
int max_threads();
void set_threads(int threads);

namespace reference {

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y);
void conv2d_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw);
void instance_norm_forward(std::size_t n, std::size_t c, std::size_t hw, std::span<const double> x,
                           std::span<const double> gamma, std::span<const double> beta, double eps,
                           std::span<double> y);
void instance_norm_backward(std::size_t n, std::size_t c, std::size_t hw, std::span<const double> x,
                            std::span<const double> gamma, double eps, std::span<const double> dy,
                            std::span<double> dx, std::span<double> dgamma, std::span<double> dbeta);
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c);

}  // namespace reference

}  // namespace fstta::kernels
