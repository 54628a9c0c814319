#pragma once

// Differentiable tensor ops on NCHW activations.

#include <cstdint>
#include <span>
#include <vector>

#include "xlearner/autograd.hpp"

namespace xl::ops {

using ag::Var;

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b);

// Sum of equally shaped terms, accumulated left to right.
template <class T>
Var<T> sum(std::span<const Var<T>> terms);

template <class T>
Var<T> scale(const Var<T>& x, T factor);

template <class T>
Var<T> relu(const Var<T>& x);

struct Conv2dArgs {
    std::size_t stride = 1;
    std::size_t padding = 0;
};

// x [B,Ci,H,W], weight [Co,Ci,k,k], bias [Co] or undefined.
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, Conv2dArgs args);

struct BatchNormArgs {
    bool training = true;
    double momentum = 0.1;
    double eps = 1e-5;
};

// Per-channel normalization. In training mode uses batch statistics and
// updates the running buffers (when non-null); otherwise uses the buffers.
template <class T>
Var<T> batch_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, Tensor<T>* running_mean,
                  Tensor<T>* running_var, BatchNormArgs args);

template <class T>
Var<T> max_pool2d(const Var<T>& x, std::size_t kernel, std::size_t stride, std::size_t padding);

// [B,C,H,W] -> [B,C]
template <class T>
Var<T> global_avg_pool(const Var<T>& x);

// x [B,In], weight [Out,In], bias [Out] or undefined.
template <class T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <class T>
Var<T> upsample_nearest2x(const Var<T>& x);

// Bilinear resize with half-pixel centers (align_corners = false).
template <class T>
Var<T> upsample_bilinear(const Var<T>& x, std::size_t out_h, std::size_t out_w);

// Mean softmax cross-entropy. logits [B,C], labels size B.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::span<const std::int32_t> labels);

// Mean per-pixel softmax cross-entropy. logits [B,C,H,W], labels size B*H*W.
template <class T>
Var<T> pixel_cross_entropy(const Var<T>& logits, std::span<const std::int32_t> labels);

// sum((a - b)^2) over all elements, as a scalar.
template <class T>
Var<T> sum_squared_diff(const Var<T>& a, const Var<T>& b);

// Sum of N scalars times `factor`.
template <class T>
Var<T> scalar_sum(std::span<const Var<T>> scalars, T factor = T(1));

}  // namespace xl::ops
