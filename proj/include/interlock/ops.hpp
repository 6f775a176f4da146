#pragma once

#include <vector>

#include "interlock/tape.hpp"

namespace interlock {

// Tape-building operators. All record a backward rule; shapes are validated
// at call time and violations raise ShapeError / ConfigError / DataError.

Value matmul(Tape& t, Value a, Value b);
// x[N x F] + bias[F], broadcast over rows.
Value add_bias(Tape& t, Value x, Value b);
// Elementwise sum of same-shaped tensors.
Value add(Tape& t, Value a, Value b);
Value scale(Tape& t, Value x, double c);
Value relu(Tape& t, Value x);

// Cross-correlation, input NCHW, weights [F x C x KH x KW].
Value conv2d(Tape& t, Value x, Value w, int pad, int stride);
Value maxpool2d(Tape& t, Value x, int kernel, int stride);
// NCHW -> [N x C] spatial mean.
Value global_avg_pool(Tape& t, Value x);
Value reshape(Tape& t, Value x, std::vector<int> shape);
Value flatten(Tape& t, Value x);  // [N x ...] -> [N x rest]

// Forward identity whose backward contributes exactly zero upstream.
Value stop_gradient(Tape& t, Value x);

// Running statistics owned by the caller (a BatchNorm layer). In train mode
// the batch statistics normalize and the running buffers are updated in
// place; in eval mode the running buffers normalize.
struct BatchNormStats {
    Tensor* running_mean = nullptr;
    Tensor* running_var = nullptr;
    double momentum = 0.1;
    double eps = 1e-5;
};
// x is [N x C] or [N x C x H x W]; gamma/beta are [C].
Value batchnorm(Tape& t, Value x, Value gamma, Value beta, const BatchNormStats& stats, bool training);

// Mean over the batch of -log softmax(logits)[target]. Numerically
// stabilized by row-max subtraction. Returns a scalar node.
Value softmax_cross_entropy(Tape& t, Value logits, const std::vector<int>& targets);

// Row-wise softmax without tape involvement (evaluation helper).
Tensor softmax_rows(const Tensor& logits);

}  // namespace interlock
