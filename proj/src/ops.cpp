#include "fstta/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "fstta/errors.hpp"
#include "fstta/kernels.hpp"

namespace fstta {

namespace {

void require_same_shape(const char* op, const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
        throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

void require_rank(const char* op, const Var& x, std::size_t rank) {
    if (x.shape().size() != rank) {
        throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " + shape_str(x.shape()));
    }
}

Node& input(Node& self, std::size_t i) { return *self.inputs[i]; }

bool needs(Node& self, std::size_t i) { return self.inputs[i]->requires_grad; }

bool graph_wanted(std::initializer_list<const Var*> vars) {
    if (!grad_enabled()) return false;
    return std::any_of(vars.begin(), vars.end(), [](const Var* v) { return v->requires_grad(); });
}

}  // namespace

Var add(const Var& a, const Var& b) {
    require_same_shape("add", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.value()[i];
    return Var::make(std::move(out), {a, b}, [](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!needs(self, k)) continue;
            auto& g = input(self, k).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape("sub", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.value()[i];
    return Var::make(std::move(out), {a, b}, [](Node& self) {
        if (needs(self, 0)) {
            auto& g = input(self, 0).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (needs(self, 1)) {
            auto& g = input(self, 1).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape("mul", a, b);
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
    return Var::make(std::move(out), {a, b}, [](Node& self) {
        const Tensor& av = input(self, 0).value;
        const Tensor& bv = input(self, 1).value;
        if (needs(self, 0)) {
            auto& g = input(self, 0).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
        }
        if (needs(self, 1)) {
            auto& g = input(self, 1).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    for (auto& v : out.storage()) v *= s;
    return Var::make(std::move(out), {a}, [s](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * self.grad[i];
    });
}

Var relu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
    return Var::make(std::move(out), {x}, [](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        const Tensor& xv = input(self, 0).value;
        for (std::size_t i = 0; i < g.size(); ++i)
            if (xv[i] > 0.0) g[i] += self.grad[i];
    });
}

Var reshape(const Var& x, Shape shape) {
    return Var::make(x.value().reshaped(std::move(shape)), {x}, [](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Var sum(const Var& x) {
    double s = 0.0;
    for (double v : x.value().data()) s += v;
    return Var::make(Tensor::scalar(s), {x}, [](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        const double d = self.grad[0];
        for (auto& v : g.storage()) v += d;
    });
}

Var mean(const Var& x) {
    if (x.value().empty()) throw ShapeError("mean of an empty tensor");
    return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var weighted_mean(const Var& v, const Tensor& weights) {
    require_rank("weighted_mean", v, 1);
    if (weights.shape() != v.shape()) {
        throw ShapeError("weighted_mean: weights " + shape_str(weights.shape()) + " vs values " + shape_str(v.shape()));
    }
    double total = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
        total += weights[i];
        acc += weights[i] * v.value()[i];
    }
    if (total <= 0.0) throw NumericError("weighted_mean: weights sum to zero");
    return Var::make(Tensor::scalar(acc / total), {v}, [weights, total](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[0] * weights[i] / total;
    });
}

Var matmul(const Var& a, const Var& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k) {
        throw ShapeError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
    }
    Tensor out({m, n});
    kernels::gemm_nn(m, n, k, a.value().data(), b.value().data(), out.data());
    return Var::make(std::move(out), {a, b}, [m, n, k](Node& self) {
        if (needs(self, 0)) {
            // dA = dC * B^T
            kernels::gemm_nt(m, k, n, self.grad.data(), input(self, 1).value.data(),
                             input(self, 0).grad_buffer().data());
        }
        if (needs(self, 1)) {
            // dB = A^T * dC
            kernels::gemm_tn(k, n, m, input(self, 0).value.data(), self.grad.data(),
                             input(self, 1).grad_buffer().data());
        }
    });
}

Var add_bias(const Var& x, const Var& b) {
    require_rank("add_bias", x, 2);
    require_rank("add_bias", b, 1);
    const std::size_t rows = x.shape()[0], cols = x.shape()[1];
    if (b.shape()[0] != cols) {
        throw ShapeError("add_bias: " + shape_str(x.shape()) + " + " + shape_str(b.shape()));
    }
    Tensor out = x.value();
    for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] += b.value()[j];
    return Var::make(std::move(out), {x, b}, [rows, cols](Node& self) {
        if (needs(self, 0)) {
            auto& g = input(self, 0).grad_buffer();
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
        }
        if (needs(self, 1)) {
            auto& g = input(self, 1).grad_buffer();
            for (std::size_t i = 0; i < rows; ++i)
                for (std::size_t j = 0; j < cols; ++j) g[j] += self.grad[i * cols + j];
        }
    });
}

Var conv2d(const Var& x, const Var& w) {
    require_rank("conv2d", x, 4);
    require_rank("conv2d", w, 4);
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0) {
        throw ShapeError("conv2d: input " + shape_str(xs) + " incompatible with kernel " + shape_str(ws));
    }
    kernels::ConvGeometry g{xs[0], xs[1], ws[0], xs[2], xs[3], ws[2]};
    Tensor out({g.batch, g.out_channels, g.height, g.width});
    if (!graph_wanted({&x, &w})) {
        kernels::conv2d_forward(g, x.value().data(), w.value().data(), out.data());
        return Var(std::move(out));
    }
    std::vector<double> cols(g.col_size());
    kernels::conv2d_forward(g, x.value().data(), w.value().data(), out.data(), cols);
    return Var::make(std::move(out), {x, w}, [g, cols = std::move(cols)](Node& self) {
        std::span<double> dx, dw;
        if (needs(self, 0)) dx = input(self, 0).grad_buffer().data();
        if (needs(self, 1)) dw = input(self, 1).grad_buffer().data();
        kernels::conv2d_backward(g, cols, input(self, 1).value.data(), self.grad.data(), dx, dw);
    });
}

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    require_rank("instance_norm", x, 4);
    const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) {
        throw ShapeError("instance_norm: gamma/beta " + shape_str(gamma.shape()) + "/" + shape_str(beta.shape()) +
                         " for input " + shape_str(x.shape()));
    }
    if (hw == 0) throw ShapeError("instance_norm: empty spatial extent");
    Tensor out(x.shape());
    std::vector<double> xhat(x.value().size()), inv_std(n * c);
    kernels::instance_norm_forward(n, c, hw, x.value().data(), gamma.value().data(), beta.value().data(), eps,
                                   out.data(), xhat, inv_std);
    if (!graph_wanted({&x, &gamma, &beta})) return Var(std::move(out));
    return Var::make(std::move(out), {x, gamma, beta},
                     [n, c, hw, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                         std::span<double> dx, dg, db;
                         if (needs(self, 0)) dx = input(self, 0).grad_buffer().data();
                         if (needs(self, 1)) dg = input(self, 1).grad_buffer().data();
                         if (needs(self, 2)) db = input(self, 2).grad_buffer().data();
                         kernels::instance_norm_backward(n, c, hw, xhat, inv_std, input(self, 1).value.data(),
                                                         self.grad.data(), dx, dg, db);
                     });
}

Var instance_standardize(const Var& x, double eps) {
    require_rank("instance_standardize", x, 4);
    const std::size_t c = x.shape()[1];
    Var ones(Tensor({c}, 1.0));
    Var zeros(Tensor({c}, 0.0));
    return instance_norm(x, ones, zeros, eps);
}

Var instance_affine(const Var& x, const Var& scale_nc, const Var& shift_nc) {
    require_rank("instance_affine", x, 4);
    const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    if (scale_nc.shape() != Shape{n, c} || shift_nc.shape() != Shape{n, c}) {
        throw ShapeError("instance_affine: scale/shift " + shape_str(scale_nc.shape()) + "/" +
                         shape_str(shift_nc.shape()) + " for input " + shape_str(x.shape()));
    }
    Tensor out(x.shape());
    for (std::size_t i = 0; i < n * c; ++i)
        for (std::size_t j = 0; j < hw; ++j)
            out[i * hw + j] = scale_nc.value()[i] * x.value()[i * hw + j] + shift_nc.value()[i];
    return Var::make(std::move(out), {x, scale_nc, shift_nc}, [n, c, hw](Node& self) {
        const Tensor& xv = input(self, 0).value;
        const Tensor& sv = input(self, 1).value;
        for (std::size_t i = 0; i < n * c; ++i) {
            double s_dy = 0.0, s_dyx = 0.0;
            for (std::size_t j = 0; j < hw; ++j) {
                s_dy += self.grad[i * hw + j];
                s_dyx += self.grad[i * hw + j] * xv[i * hw + j];
            }
            if (needs(self, 0)) {
                auto& g = input(self, 0).grad_buffer();
                for (std::size_t j = 0; j < hw; ++j) g[i * hw + j] += sv[i] * self.grad[i * hw + j];
            }
            if (needs(self, 1)) input(self, 1).grad_buffer()[i] += s_dyx;
            if (needs(self, 2)) input(self, 2).grad_buffer()[i] += s_dy;
        }
    });
}

std::pair<Tensor, Tensor> channel_stats(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("channel_stats: expected N x C x H x W, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    if (hw == 0) throw ShapeError("channel_stats: empty spatial extent");
    Tensor mu({n, c}), sigma({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
        double m = 0.0;
        for (std::size_t j = 0; j < hw; ++j) m += x[i * hw + j];
        m /= static_cast<double>(hw);
        double var = 0.0;
        for (std::size_t j = 0; j < hw; ++j) var += (x[i * hw + j] - m) * (x[i * hw + j] - m);
        mu[i] = m;
        sigma[i] = std::sqrt(var / static_cast<double>(hw));
    }
    return {std::move(mu), std::move(sigma)};
}

ChannelStats channel_stats(const Var& x) {
    auto [mu_t, sigma_t] = channel_stats(x.value());
    const std::size_t nc = mu_t.size();
    const std::size_t hw = x.value().size() / std::max<std::size_t>(nc, 1);
    Var mu = Var::make(mu_t, {x}, [hw](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            for (std::size_t j = 0; j < hw; ++j) g[i * hw + j] += self.grad[i] * inv;
    });
    // d sigma / d x_j = (x_j - mu) / (hw * sigma); zero-variance instances get a zero subgradient.
    Var sigma = Var::make(sigma_t, {x}, [hw, mu_t](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        const Tensor& xv = input(self, 0).value;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double s = self.value[i];
            if (s <= 0.0) continue;
            const double coef = self.grad[i] / (static_cast<double>(hw) * s);
            for (std::size_t j = 0; j < hw; ++j) g[i * hw + j] += coef * (xv[i * hw + j] - mu_t[i]);
        }
    });
    return {std::move(mu), std::move(sigma)};
}

Var global_avg_pool(const Var& x) {
    require_rank("global_avg_pool", x, 4);
    const std::size_t n = x.shape()[0], c = x.shape()[1], hw = x.shape()[2] * x.shape()[3];
    Tensor out({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < hw; ++j) s += x.value()[i * hw + j];
        out[i] = s / static_cast<double>(hw);
    }
    return Var::make(std::move(out), {x}, [hw](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            for (std::size_t j = 0; j < hw; ++j) g[i * hw + j] += self.grad[i] * inv;
    });
}

Var gather_rows(const Var& v, std::span<const std::size_t> rows) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    Tensor out = v.value().gather_rows(idx);
    const std::size_t width = v.shape().empty() || v.shape()[0] == 0 ? 0 : v.value().size() / v.shape()[0];
    return Var::make(std::move(out), {v}, [idx = std::move(idx), width](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < width; ++j) g[idx[i] * width + j] += self.grad[i * width + j];
    });
}

Var lerp_rows(const Var& a, const Var& b, const Tensor& lambdas) {
    require_same_shape("lerp_rows", a, b);
    require_rank("lerp_rows", a, 2);
    const std::size_t n = a.shape()[0], width = a.shape()[1];
    if (lambdas.shape() != Shape{n}) {
        throw ShapeError("lerp_rows: lambdas " + shape_str(lambdas.shape()) + " for rows " + shape_str(a.shape()));
    }
    Tensor out(a.shape());
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < width; ++j)
            out[i * width + j] = lambdas[i] * a.value()[i * width + j] + (1.0 - lambdas[i]) * b.value()[i * width + j];
    return Var::make(std::move(out), {a, b}, [lambdas, n, width](Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            if (!needs(self, k)) continue;
            auto& g = input(self, k).grad_buffer();
            for (std::size_t i = 0; i < n; ++i) {
                const double w = k == 0 ? lambdas[i] : 1.0 - lambdas[i];
                for (std::size_t j = 0; j < width; ++j) g[i * width + j] += w * self.grad[i * width + j];
            }
        }
    });
}

Var detach(const Var& v) { return Var(v.value()); }

Tensor softmax_rows(const Tensor& logits) {
    if (logits.rank() != 2) throw ShapeError("softmax: expected N x C, got " + shape_str(logits.shape()));
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data().data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = std::exp(row[j] - mx) / z;
    }
    return out;
}

namespace {

Tensor log_softmax_rows(const Tensor& logits) {
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    Tensor out(logits.shape());
    for (std::size_t i = 0; i < n; ++i) {
        const double* row = logits.data().data() + i * c;
        const double mx = *std::max_element(row, row + c);
        double z = 0.0;
        for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
        const double lse = mx + std::log(z);
        for (std::size_t j = 0; j < c; ++j) out[i * c + j] = row[j] - lse;
    }
    return out;
}

}  // namespace

Var softmax(const Var& logits) {
    require_rank("softmax", logits, 2);
    Tensor p = softmax_rows(logits.value());
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    return Var::make(p, {logits}, [p, n, c](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += self.grad[i * c + j] * p[i * c + j];
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += p[i * c + j] * (self.grad[i * c + j] - dot);
        }
    });
}

Var log_softmax(const Var& logits) {
    require_rank("log_softmax", logits, 2);
    Tensor lp = log_softmax_rows(logits.value());
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    return Var::make(lp, {logits}, [lp, n, c](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            double total = 0.0;
            for (std::size_t j = 0; j < c; ++j) total += self.grad[i * c + j];
            for (std::size_t j = 0; j < c; ++j) g[i * c + j] += self.grad[i * c + j] - std::exp(lp[i * c + j]) * total;
        }
    });
}

Var cross_entropy(const Var& logits, std::span<const int> labels) {
    require_rank("cross_entropy", logits, 2);
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    if (labels.size() != n) {
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
    }
    for (int y : labels) {
        if (y < 0 || static_cast<std::size_t>(y) >= c) {
            throw ConfigError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
        }
    }
    Tensor lp = log_softmax_rows(logits.value());
    Tensor out({n});
    for (std::size_t i = 0; i < n; ++i) out[i] = -lp[i * c + static_cast<std::size_t>(labels[i])];
    std::vector<int> y(labels.begin(), labels.end());
    return Var::make(std::move(out), {logits}, [lp = std::move(lp), y = std::move(y), n, c](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        for (std::size_t i = 0; i < n; ++i) {
            const double d = self.grad[i];
            for (std::size_t j = 0; j < c; ++j) {
                const double onehot = static_cast<std::size_t>(y[i]) == j ? 1.0 : 0.0;
                g[i * c + j] += d * (std::exp(lp[i * c + j]) - onehot);
            }
        }
    });
}

Var softmax_entropy(const Var& logits) {
    require_rank("softmax_entropy", logits, 2);
    const std::size_t n = logits.shape()[0], c = logits.shape()[1];
    Tensor lp = log_softmax_rows(logits.value());
    Tensor out({n});
    for (std::size_t i = 0; i < n; ++i) {
        double h = 0.0;
        for (std::size_t j = 0; j < c; ++j) h -= std::exp(lp[i * c + j]) * lp[i * c + j];
        out[i] = h;
    }
    // dH/dz_k = -p_k (log p_k + H)
    return Var::make(out, {logits}, [lp = std::move(lp), h = out, n, c](Node& self) {
        auto& g = input(self, 0).grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                const double p = std::exp(lp[i * c + j]);
                g[i * c + j] += self.grad[i] * -p * (lp[i * c + j] + h[i]);
            }
    });
}

double entropy(std::span<const double> probs) {
    double h = 0.0;
    for (double p : probs)
        if (p > 0.0) h -= p * std::log(p);
    return h;
}

std::size_t argmax(std::span<const double> values) {
    if (values.empty()) throw ShapeError("argmax of an empty range");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

double cross_entropy(std::span<const double> probs, int label) {
    if (label < 0 || static_cast<std::size_t>(label) >= probs.size()) {
        throw ConfigError("cross_entropy: label " + std::to_string(label) + " outside [0, " +
                          std::to_string(probs.size()) + ")");
    }
    const double p = probs[static_cast<std::size_t>(label)];
    return p > 0.0 ? -std::log(p) : std::numeric_limits<double>::infinity();
}

CosineResult cosine_sim(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) {
        throw ShapeError("cosine_sim: lengths " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    }
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (na == 0.0 || nb == 0.0) return {0.0, true};
    const double v = dot / (std::sqrt(na) * std::sqrt(nb));
    return {std::clamp(v, -1.0, 1.0), false};
}

}  // namespace fstta
