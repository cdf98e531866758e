#pragma once

#include <cstddef>
#include <vector>

#include "bdd/tensor.hpp"

namespace bdd {

// x[B,D_in] * W[D_in,D_out] + b[D_out]
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);

// max(0, x); the subgradient at exactly 0 is 0.
Tensor relu(const Tensor& x);

/// Temperature-scaled softmax along `axis` (negative counts from the end).
/// Evaluated as exp(z/tau - max(z/tau)) so large logits do not overflow.
Tensor softmax_tau(const Tensor& z, double tau, int axis = -1);

/// log softmax_tau via log-sum-exp.
Tensor log_softmax_tau(const Tensor& z, double tau, int axis = -1);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

// log(max(x, floor)); no gradient flows where the floor is active.
Tensor log_clamped(const Tensor& x, double floor);

// Sum of all entries, shape [1].
Tensor sum(const Tensor& x);

// Sum over the last axis: [..., C] -> [...].
Tensor sum_last(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);

// out.shape[i] = x.shape[axes[i]]
Tensor permute(const Tensor& x, const std::vector<std::size_t>& axes);

}  // namespace bdd
