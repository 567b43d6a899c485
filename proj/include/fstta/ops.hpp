#pragma once

#include <span>
#include <utility>

#include "fstta/autograd.hpp"

namespace fstta {

// ---- differentiable ops -----------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var relu(const Var& x);
Var reshape(const Var& x, Shape shape);
/// Mean of every element, as a scalar.
Var mean(const Var& x);
Var sum(const Var& x);
/// sum(w * v) / sum(w) for a vector v and fixed non-negative weights.
Var weighted_mean(const Var& v, const Tensor& weights);

/// (m x k) * (k x n)
Var matmul(const Var& a, const Var& b);
/// x (n x m) plus a row vector b (m) broadcast over rows.
Var add_bias(const Var& x, const Var& b);

/// x: N x C x H x W, w: C' x C x k x k (odd k), stride 1, zero "same" padding.
Var conv2d(const Var& x, const Var& w);

/// gamma * (x - mu) / sqrt(var + eps) + beta per (sample, channel); gamma, beta: C.
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps);
/// (x - mu) / sqrt(var + eps) per (sample, channel), no affine.
Var instance_standardize(const Var& x, double eps);
/// y[n,c,:] = scale[n,c] * x[n,c,:] + shift[n,c]
Var instance_affine(const Var& x, const Var& scale, const Var& shift);

struct ChannelStats {
    Var mu;     ///< N x C
    Var sigma;  ///< N x C, population standard deviation
};
/// Per (sample, channel) mean and population standard deviation over H x W.
ChannelStats channel_stats(const Var& x);

/// N x C x H x W -> N x C
Var global_avg_pool(const Var& x);

/// Rows of v in the given order.
Var gather_rows(const Var& v, std::span<const std::size_t> rows);
/// lambda[n] * a[n,:] + (1 - lambda[n]) * b[n,:]
Var lerp_rows(const Var& a, const Var& b, const Tensor& lambdas);
/// Same value, cut from the graph.
Var detach(const Var& v);

/// Row-wise softmax of N x C logits.
Var softmax(const Var& logits);
/// Row-wise log-softmax of N x C logits.
Var log_softmax(const Var& logits);
/// Per-row -log softmax(logits)[label]; fused for stability. Returns N values.
Var cross_entropy(const Var& logits, std::span<const int> labels);
/// Per-row Shannon entropy of softmax(logits). Returns N values.
Var softmax_entropy(const Var& logits);

// ---- value-level helpers ----------------------------------------------------

/// Row-wise softmax (max-subtracted) of an N x C tensor.
Tensor softmax_rows(const Tensor& logits);
/// -sum p log p with 0 log 0 = 0.
double entropy(std::span<const double> probs);
/// Index of the largest value; ties go to the lowest index.
std::size_t argmax(std::span<const double> values);
/// -log(probs[label]); throws ConfigError when label is out of range.
double cross_entropy(std::span<const double> probs, int label);

struct CosineResult {
    double value = 0.0;
    bool degenerate = false;  ///< an input had zero norm; value forced to 0
};
CosineResult cosine_sim(std::span<const double> a, std::span<const double> b);

/// Per (sample, channel) mean and population std of an N x C x H x W tensor.
std::pair<Tensor, Tensor> channel_stats(const Tensor& x);

}  // namespace fstta
