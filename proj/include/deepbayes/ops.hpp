#pragma once

#include <vector>

#include "deepbayes/rng.hpp"
#include "deepbayes/tape.hpp"
#include "deepbayes/tensor.hpp"

namespace deepbayes {

// Variance floor for Gaussian heads: exp(log_var) is clamped to >= 1e-8
// before use so collapsing encoders cannot produce non-finite densities.
inline constexpr double kLogVarFloor = -18.420680743952367;  // ln(1e-8)

// ---- elementwise binary, numpy-style broadcasting (right-aligned) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor operator+(const Tensor& a, const Tensor& b);
Tensor operator-(const Tensor& a, const Tensor& b);
Tensor operator*(const Tensor& a, const Tensor& b);
Tensor operator/(const Tensor& a, const Tensor& b);
Tensor operator+(const Tensor& a, double b);
Tensor operator-(const Tensor& a, double b);
Tensor operator*(const Tensor& a, double b);
Tensor operator/(const Tensor& a, double b);
Tensor operator+(double a, const Tensor& b);
Tensor operator-(double a, const Tensor& b);
Tensor operator*(double a, const Tensor& b);
Tensor operator-(const Tensor& a);

// ---- elementwise unary ----
Tensor relu(const Tensor& t);
Tensor exp(const Tensor& t);
Tensor log(const Tensor& t);
Tensor tanh(const Tensor& t);
Tensor sqrt(const Tensor& t);
Tensor abs(const Tensor& t);
Tensor square(const Tensor& t);
// sign(0) = 0; propagates zero gradient everywhere.
Tensor sign(const Tensor& t);
// Clamp to [lo, hi]; gradient passes only strictly inside the interval.
Tensor clip(const Tensor& t, double lo, double hi);

// ---- linear algebra ----
// [n,k] @ [k,m] -> [n,m].
Tensor matmul(const Tensor& a, const Tensor& b);

// ---- reductions ----
Tensor sum(const Tensor& t);   // all elements -> scalar
Tensor mean(const Tensor& t);  // all elements -> scalar
// Reduce the last axis: shape [..., m] -> [...].
Tensor sum_last(const Tensor& t);
Tensor max_last(const Tensor& t);      // gradient routed to first argmax
Tensor log_sum_exp(const Tensor& t);   // max-shifted, overflow-safe
// Softmax over the last axis (shape preserved).
Tensor softmax(const Tensor& t);
Tensor log_softmax(const Tensor& t);

Tensor norm_l1(const Tensor& t);  // scalar, sum of |x|
Tensor norm_l2(const Tensor& t);  // scalar, sqrt of sum of squares

// ---- shape ops ----
Tensor reshape(const Tensor& t, std::vector<std::size_t> shape);
Tensor concat_last(const Tensor& a, const Tensor& b);
Tensor slice_last(const Tensor& t, std::size_t start, std::size_t len);
// k tensors of identical shape S -> shape S + [k].
Tensor stack_last(const std::vector<Tensor>& parts);

// ---- stochastic / statistical composites ----

// Row-wise diagonal-Gaussian log density with the full normalizing
// constant: sum_d [ -0.5 log 2pi - 0.5 lv_d - (x_d-mean_d)^2 / (2 exp(lv_d)) ]
// with lv = max(log_var, kLogVarFloor). Reduces the last axis.
Tensor gaussian_log_density(const Tensor& x, const Tensor& mean,
                            const Tensor& log_var);

// z = mean + exp(lv/2) * eps, eps ~ N(0, I) from rng; gradients flow to
// mean and log_var only.
Tensor reparameterize(const Tensor& mean, const Tensor& log_var,
                      RngStream& rng);

// ---- non-differentiable helpers ----
std::vector<std::size_t> argmax_last(const Tensor& t);  // first max on ties
Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes);
Tensor take_row(const Tensor& t, std::size_t row);  // [n,m] -> [m], constant

}  // namespace deepbayes
