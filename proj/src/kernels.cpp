#include "fstta/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fstta::kernels {

namespace {

using index_t = std::ptrdiff_t;

void im2col(const ConvGeometry& g, const double* x, double* col) {
    const index_t h = static_cast<index_t>(g.height);
    const index_t w = static_cast<index_t>(g.width);
    const index_t k = static_cast<index_t>(g.ksize);
    const index_t pad = static_cast<index_t>(g.pad());
    const std::size_t p = g.pixels();
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        const double* xc = x + c * p;
        for (index_t ki = 0; ki < k; ++ki) {
            for (index_t kj = 0; kj < k; ++kj) {
                double* row = col + ((c * g.ksize + static_cast<std::size_t>(ki)) * g.ksize + static_cast<std::size_t>(kj)) * p;
                for (index_t i = 0; i < h; ++i) {
                    const index_t si = i + ki - pad;
                    double* out = row + i * w;
                    if (si < 0 || si >= h) {
                        std::fill(out, out + w, 0.0);
                        continue;
                    }
                    const double* src = xc + si * w;
                    for (index_t j = 0; j < w; ++j) {
                        const index_t sj = j + kj - pad;
                        out[j] = (sj >= 0 && sj < w) ? src[sj] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const ConvGeometry& g, const double* col, double* dx) {
    const index_t h = static_cast<index_t>(g.height);
    const index_t w = static_cast<index_t>(g.width);
    const index_t k = static_cast<index_t>(g.ksize);
    const index_t pad = static_cast<index_t>(g.pad());
    const std::size_t p = g.pixels();
    for (std::size_t c = 0; c < g.in_channels; ++c) {
        double* dxc = dx + c * p;
        for (index_t ki = 0; ki < k; ++ki) {
            for (index_t kj = 0; kj < k; ++kj) {
                const double* row = col + ((c * g.ksize + static_cast<std::size_t>(ki)) * g.ksize + static_cast<std::size_t>(kj)) * p;
                for (index_t i = 0; i < h; ++i) {
                    const index_t si = i + ki - pad;
                    if (si < 0 || si >= h) continue;
                    const double* in = row + i * w;
                    double* dst = dxc + si * w;
                    for (index_t j = 0; j < w; ++j) {
                        const index_t sj = j + kj - pad;
                        if (sj >= 0 && sj < w) dst[sj] += in[j];
                    }
                }
            }
        }
    }
}

// c (m x n) += a (m x k) * b (k x n), serial. Four rows of c share each load of b.
inline void gemm_nn_serial(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        double* c0 = c + i * n;
        double* c1 = c0 + n;
        double* c2 = c1 + n;
        double* c3 = c2 + n;
        const double* a0 = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double s0 = a0[kk], s1 = a0[k + kk], s2 = a0[2 * k + kk], s3 = a0[3 * k + kk];
            const double* bk = b + kk * n;
#pragma omp simd
            for (std::size_t j = 0; j < n; ++j) {
                const double bv = bk[j];
                c0[j] += s0 * bv;
                c1[j] += s1 * bv;
                c2[j] += s2 * bv;
                c3[j] += s3 * bv;
            }
        }
    }
    for (; i < m; ++i) {
        double* ci = c + i * n;
        const double* ai = a + i * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double s = ai[kk];
            const double* bk = b + kk * n;
#pragma omp simd
            for (std::size_t j = 0; j < n; ++j) ci[j] += s * bk[j];
        }
    }
}

inline double dot(const double* a, const double* b, std::size_t n) {
    double s = 0.0;
#pragma omp simd reduction(+ : s)
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

}  // namespace

int max_threads() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

void set_threads(int threads) {
#ifdef _OPENMP
    omp_set_num_threads(std::max(1, threads));
#else
    (void)threads;
#endif
}

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y, std::span<double> cols) {
    const std::size_t p = g.pixels();
    const std::size_t kr = g.col_rows();
    const index_t batch = static_cast<index_t>(g.batch);
    const bool keep = !cols.empty();
#pragma omp parallel
    {
        std::vector<double> scratch(keep ? 0 : kr * p);
#pragma omp for schedule(static)
        for (index_t n = 0; n < batch; ++n) {
            double* col = keep ? cols.data() + static_cast<std::size_t>(n) * kr * p : scratch.data();
            im2col(g, x.data() + static_cast<std::size_t>(n) * g.in_channels * p, col);
            double* yn = y.data() + static_cast<std::size_t>(n) * g.out_channels * p;
            std::fill(yn, yn + g.out_channels * p, 0.0);
            gemm_nn_serial(g.out_channels, p, kr, w.data(), col, yn);
        }
    }
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> cols, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw) {
    const std::size_t p = g.pixels();
    const std::size_t kr = g.col_rows();
    const std::size_t oc = g.out_channels;
    if (!dw.empty()) {
        // Each pair of output channels owns its weight rows; samples are summed in order.
        const index_t pairs = static_cast<index_t>((oc + 1) / 2);
#pragma omp parallel for schedule(static)
        for (index_t pi = 0; pi < pairs; ++pi) {
            const std::size_t o = 2 * static_cast<std::size_t>(pi);
            const bool two = o + 1 < oc;
            double* dw0 = dw.data() + o * kr;
            double* dw1 = two ? dw0 + kr : nullptr;
            for (std::size_t n = 0; n < g.batch; ++n) {
                const double* y0 = dy.data() + (n * oc + o) * p;
                const double* y1 = two ? y0 + p : y0;
                const double* col = cols.data() + n * kr * p;
                std::size_t r = 0;
                for (; r + 4 <= kr; r += 4) {
                    const double* c0 = col + r * p;
                    const double* c1 = c0 + p;
                    const double* c2 = c1 + p;
                    const double* c3 = c2 + p;
                    double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
                    double b0 = 0.0, b1 = 0.0, b2 = 0.0, b3 = 0.0;
#pragma omp simd reduction(+ : a0, a1, a2, a3, b0, b1, b2, b3)
                    for (std::size_t j = 0; j < p; ++j) {
                        const double d0 = y0[j], d1 = y1[j];
                        const double v0 = c0[j], v1 = c1[j], v2 = c2[j], v3 = c3[j];
                        a0 += d0 * v0;
                        a1 += d0 * v1;
                        a2 += d0 * v2;
                        a3 += d0 * v3;
                        b0 += d1 * v0;
                        b1 += d1 * v1;
                        b2 += d1 * v2;
                        b3 += d1 * v3;
                    }
                    dw0[r] += a0;
                    dw0[r + 1] += a1;
                    dw0[r + 2] += a2;
                    dw0[r + 3] += a3;
                    if (two) {
                        dw1[r] += b0;
                        dw1[r + 1] += b1;
                        dw1[r + 2] += b2;
                        dw1[r + 3] += b3;
                    }
                }
                for (; r < kr; ++r) {
                    dw0[r] += dot(y0, col + r * p, p);
                    if (two) dw1[r] += dot(y1, col + r * p, p);
                }
            }
        }
    }
    if (!dx.empty()) {
        const index_t batch = static_cast<index_t>(g.batch);
#pragma omp parallel
        {
            std::vector<double> dcol(kr * p);
#pragma omp for schedule(static)
            for (index_t n = 0; n < batch; ++n) {
                std::fill(dcol.begin(), dcol.end(), 0.0);
                const double* dyn = dy.data() + static_cast<std::size_t>(n) * oc * p;
                // dcol (kr x p) = w^T (kr x oc) * dy (oc x p)
                std::size_t r = 0;
                for (; r + 4 <= kr; r += 4) {
                    double* d0 = dcol.data() + r * p;
                    double* d1 = d0 + p;
                    double* d2 = d1 + p;
                    double* d3 = d2 + p;
                    for (std::size_t o = 0; o < oc; ++o) {
                        const double* wo = w.data() + o * kr + r;
                        const double s0 = wo[0], s1 = wo[1], s2 = wo[2], s3 = wo[3];
                        const double* dyo = dyn + o * p;
#pragma omp simd
                        for (std::size_t j = 0; j < p; ++j) {
                            const double d = dyo[j];
                            d0[j] += s0 * d;
                            d1[j] += s1 * d;
                            d2[j] += s2 * d;
                            d3[j] += s3 * d;
                        }
                    }
                }
                for (; r < kr; ++r) {
                    double* dr = dcol.data() + r * p;
                    for (std::size_t o = 0; o < oc; ++o) {
                        const double s = w[o * kr + r];
                        const double* dyo = dyn + o * p;
#pragma omp simd
                        for (std::size_t j = 0; j < p; ++j) dr[j] += s * dyo[j];
                    }
                }
                col2im_add(g, dcol.data(), dx.data() + static_cast<std::size_t>(n) * g.in_channels * p);
            }
        }
    }
}

void instance_norm_forward(std::size_t n, std::size_t c, std::size_t hw, std::span<const double> x,
                           std::span<const double> gamma, std::span<const double> beta, double eps,
                           std::span<double> y, std::span<double> xhat, std::span<double> inv_std) {
    const index_t instances = static_cast<index_t>(n * c);
    const double inv_m = 1.0 / static_cast<double>(hw);
#pragma omp parallel for schedule(static)
    for (index_t idx = 0; idx < instances; ++idx) {
        const std::size_t i = static_cast<std::size_t>(idx);
        const std::size_t ch = i % c;
        const double* xi = x.data() + i * hw;
        double mean = 0.0;
        for (std::size_t j = 0; j < hw; ++j) mean += xi[j];
        mean *= inv_m;
        double var = 0.0;
        for (std::size_t j = 0; j < hw; ++j) {
            const double d = xi[j] - mean;
            var += d * d;
        }
        var *= inv_m;
        const double inv = 1.0 / std::sqrt(var + eps);
        inv_std[i] = inv;
        double* xh = xhat.data() + i * hw;
        double* yi = y.data() + i * hw;
        const double gm = gamma[ch];
        const double bt = beta[ch];
        for (std::size_t j = 0; j < hw; ++j) {
            xh[j] = (xi[j] - mean) * inv;
            yi[j] = gm * xh[j] + bt;
        }
    }
}

void instance_norm_backward(std::size_t n, std::size_t c, std::size_t hw, std::span<const double> xhat,
                            std::span<const double> inv_std, std::span<const double> gamma,
                            std::span<const double> dy, std::span<double> dx, std::span<double> dgamma,
                            std::span<double> dbeta) {
    const index_t instances = static_cast<index_t>(n * c);
    const double m = static_cast<double>(hw);
    std::vector<double> sum_dy(n * c), sum_dy_xhat(n * c);
#pragma omp parallel for schedule(static)
    for (index_t idx = 0; idx < instances; ++idx) {
        const std::size_t i = static_cast<std::size_t>(idx);
        const double* dyi = dy.data() + i * hw;
        const double* xh = xhat.data() + i * hw;
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t j = 0; j < hw; ++j) {
            s1 += dyi[j];
            s2 += dyi[j] * xh[j];
        }
        sum_dy[i] = s1;
        sum_dy_xhat[i] = s2;
        if (!dx.empty()) {
            // dxhat = gamma * dy; dx = inv/m * (m*dxhat - sum(dxhat) - xhat*sum(dxhat*xhat))
            const double gm = gamma[i % c];
            const double scale = gm * inv_std[i] / m;
            double* dxi = dx.data() + i * hw;
            for (std::size_t j = 0; j < hw; ++j) dxi[j] += scale * (m * dyi[j] - s1 - xh[j] * s2);
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            if (!dgamma.empty()) dgamma[ch] += sum_dy_xhat[i * c + ch];
            if (!dbeta.empty()) dbeta[ch] += sum_dy[i * c + ch];
        }
    }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c) {
    const index_t rows = static_cast<index_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
    for (index_t i = 0; i < rows; ++i) {
        gemm_nn_serial(1, n, k, a.data() + static_cast<std::size_t>(i) * k, b.data(),
                       c.data() + static_cast<std::size_t>(i) * n);
    }
}

void gemm_tn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c) {
    const index_t rows = static_cast<index_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
    for (index_t i = 0; i < rows; ++i) {
        double* ci = c.data() + static_cast<std::size_t>(i) * n;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double s = a[kk * m + static_cast<std::size_t>(i)];
            const double* bk = b.data() + kk * n;
#pragma omp simd
            for (std::size_t j = 0; j < n; ++j) ci[j] += s * bk[j];
        }
    }
}

void gemm_nt(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c) {
    const index_t rows = static_cast<index_t>(m);
#pragma omp parallel for schedule(static) if (m * n * k > 32768)
    for (index_t i = 0; i < rows; ++i) {
        const double* ai = a.data() + static_cast<std::size_t>(i) * k;
        double* ci = c.data() + static_cast<std::size_t>(i) * n;
        for (std::size_t j = 0; j < n; ++j) ci[j] += dot(ai, b.data() + j * k, k);
    }
}

namespace reference {

namespace {

double pixel(const ConvGeometry& g, std::span<const double> x, std::size_t n, std::size_t c, index_t i, index_t j) {
    if (i < 0 || j < 0 || i >= static_cast<index_t>(g.height) || j >= static_cast<index_t>(g.width)) return 0.0;
    return x[((n * g.in_channels + c) * g.height + static_cast<std::size_t>(i)) * g.width + static_cast<std::size_t>(j)];
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                    std::span<double> y) {
    const index_t pad = static_cast<index_t>(g.pad());
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t i = 0; i < g.height; ++i)
                for (std::size_t j = 0; j < g.width; ++j) {
                    double s = 0.0;
                    for (std::size_t c = 0; c < g.in_channels; ++c)
                        for (std::size_t ki = 0; ki < g.ksize; ++ki)
                            for (std::size_t kj = 0; kj < g.ksize; ++kj)
                                s += w[((o * g.in_channels + c) * g.ksize + ki) * g.ksize + kj] *
                                     pixel(g, x, n, c, static_cast<index_t>(i + ki) - pad,
                                           static_cast<index_t>(j + kj) - pad);
                    y[((n * g.out_channels + o) * g.height + i) * g.width + j] = s;
                }
}

void conv2d_backward(const ConvGeometry& g, std::span<const double> x, std::span<const double> w,
                     std::span<const double> dy, std::span<double> dx, std::span<double> dw) {
    const index_t pad = static_cast<index_t>(g.pad());
    const index_t h = static_cast<index_t>(g.height);
    const index_t wd = static_cast<index_t>(g.width);
    for (std::size_t n = 0; n < g.batch; ++n)
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (index_t i = 0; i < h; ++i)
                for (index_t j = 0; j < wd; ++j) {
                    const double d = dy[((n * g.out_channels + o) * g.height + static_cast<std::size_t>(i)) * g.width +
                                        static_cast<std::size_t>(j)];
                    for (std::size_t c = 0; c < g.in_channels; ++c)
                        for (std::size_t ki = 0; ki < g.ksize; ++ki)
                            for (std::size_t kj = 0; kj < g.ksize; ++kj) {
                                const index_t si = i + static_cast<index_t>(ki) - pad;
                                const index_t sj = j + static_cast<index_t>(kj) - pad;
                                if (si < 0 || sj < 0 || si >= h || sj >= wd) continue;
                                const std::size_t widx = ((o * g.in_channels + c) * g.ksize + ki) * g.ksize + kj;
                                const std::size_t xidx = ((n * g.in_channels + c) * g.height + static_cast<std::size_t>(si)) *
                                                             g.width +
                                                         static_cast<std::size_t>(sj);
                                if (!dw.empty()) dw[widx] += d * x[xidx];
                                if (!dx.empty()) dx[xidx] += d * w[widx];
                            }
                }
}

void instance_norm_forward(std::size_t n, std::size_t c, std::size_t hw, std::span<const double> x,
                           std::span<const double> gamma, std::span<const double> beta, double eps,
                           std::span<double> y) {
    for (std::size_t i = 0; i < n * c; ++i) {
        double mean = 0.0;
        for (std::size_t j = 0; j < hw; ++j) mean += x[i * hw + j];
        mean /= static_cast<double>(hw);
        double var = 0.0;
        for (std::size_t j = 0; j < hw; ++j) var += (x[i * hw + j] - mean) * (x[i * hw + j] - mean);
        var /= static_cast<double>(hw);
        for (std::size_t j = 0; j < hw; ++j)
            y[i * hw + j] = gamma[i % c] * (x[i * hw + j] - mean) / std::sqrt(var + eps) + beta[i % c];
    }
}

void instance_norm_backward(std::size_t n, std::size_t c, std::size_t hw, std::span<const double> x,
                            std::span<const double> gamma, double eps, std::span<const double> dy,
                            std::span<double> dx, std::span<double> dgamma, std::span<double> dbeta) {
    // Chain rule written out term by term: y_j = g * (x_j - mu) * s + b, s = (var + eps)^-1/2.
    const double m = static_cast<double>(hw);
    for (std::size_t i = 0; i < n * c; ++i) {
        const std::size_t ch = i % c;
        double mean = 0.0;
        for (std::size_t j = 0; j < hw; ++j) mean += x[i * hw + j];
        mean /= m;
        double var = 0.0;
        for (std::size_t j = 0; j < hw; ++j) var += (x[i * hw + j] - mean) * (x[i * hw + j] - mean);
        var /= m;
        const double s = 1.0 / std::sqrt(var + eps);
        double d_var = 0.0, d_mean = 0.0;
        for (std::size_t j = 0; j < hw; ++j) {
            const double dxhat = dy[i * hw + j] * gamma[ch];
            d_var += dxhat * (x[i * hw + j] - mean) * -0.5 * s * s * s;
            d_mean += -dxhat * s;
            if (!dgamma.empty()) dgamma[ch] += dy[i * hw + j] * (x[i * hw + j] - mean) * s;
            if (!dbeta.empty()) dbeta[ch] += dy[i * hw + j];
        }
        if (dx.empty()) continue;
        double centered_sum = 0.0;
        for (std::size_t j = 0; j < hw; ++j) centered_sum += x[i * hw + j] - mean;
        d_mean += d_var * -2.0 * centered_sum / m;
        for (std::size_t j = 0; j < hw; ++j) {
            const double dxhat = dy[i * hw + j] * gamma[ch];
            dx[i * hw + j] += dxhat * s + d_var * 2.0 * (x[i * hw + j] - mean) / m + d_mean / m;
        }
    }
}

void gemm_nn(std::size_t m, std::size_t n, std::size_t k, std::span<const double> a, std::span<const double> b,
             std::span<double> c) {
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) s += a[i * k + kk] * b[kk * n + j];
            c[i * n + j] += s;
        }
}

}  // namespace reference

}  // namespace fstta::kernels
