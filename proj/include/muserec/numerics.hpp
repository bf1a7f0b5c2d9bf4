#ifndef MUSEREC_NUMERICS_HPP
#define MUSEREC_NUMERICS_HPP

#include <functional>

#include "muserec/param_store.hpp"
#include "muserec/tensor.hpp"

namespace muserec {

/// Numerically stable softmax of a rank-1 tensor (max subtraction).
/// Output is non-negative and sums to 1 within 1e-12.
Tensor softmax(const Tensor& v);

struct CrossEntropyResult {
  double loss;       // -log softmax(logits)[target]
  Tensor grad;       // softmax(logits) - onehot(target)
};

CrossEntropyResult cross_entropy_loss(const Tensor& logits, std::size_t target);

struct SvdResult {
  Tensor u;  // rows x rank
  Tensor s;  // rank, non-negative, descending
  Tensor v;  // cols x rank
};

/// Best rank-`rank` factorization of a rank-2 tensor in the Frobenius sense.
SvdResult truncated_svd(const Tensor& m, std::size_t rank);

struct PcaResult {
  Tensor projected;  // n x out_dim
  Tensor basis;      // d x out_dim, orthonormal columns
  Tensor mean;       // d
  Tensor variances;  // out_dim, descending
};

/// Mean-centers `rows` (n x d) and projects onto the top `out_dim`
/// principal directions. Component signs are canonicalized so the entry of
/// largest magnitude in each basis column is positive.
PcaResult pca_reduce(const Tensor& rows, std::size_t out_dim);

/// Scalar function of a ParamStore. When `with_grad` is true the function
/// must accumulate gradients into the store (after the caller zeroed them).
using ScalarFn = std::function<double(ParamStore&, bool with_grad)>;

/// Central-difference check of the analytic gradient of `f` over every
/// coordinate of every parameter. Returns the max relative error
/// |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
double grad_check(ParamStore& store, const ScalarFn& f, double eps);

}  // namespace muserec

#endif
