#include "muserec/numerics.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>

namespace muserec {

namespace {

Eigen::MatrixXd to_eigen(const Tensor& m) {
  Eigen::MatrixXd out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m.at(i, j);
  return out;
}

Tensor from_eigen(const Eigen::MatrixXd& m) {
  Tensor out = Tensor::matrix(m.rows(), m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.at(i, j) = m(i, j);
  return out;
}

}  // namespace

Tensor softmax(const Tensor& v) {
  if (v.rank() != 1 || v.numel() == 0) throw Error("softmax: expects a non-empty vector");
  require_finite(v, "softmax");
  double mx = v[0];
  for (double x : v.data) mx = std::max(mx, x);
  Tensor out = Tensor::vector(v.numel());
  double sum = 0.0;
  for (std::size_t i = 0; i < v.numel(); ++i) {
    out[i] = std::exp(v[i] - mx);
    sum += out[i];
  }
  for (double& x : out.data) x /= sum;
  return out;
}

CrossEntropyResult cross_entropy_loss(const Tensor& logits, std::size_t target) {
  if (logits.rank() != 1 || logits.numel() == 0)
    throw Error("cross_entropy: expects a non-empty vector");
  if (target >= logits.numel()) throw Error("cross_entropy: target out of range");
  Tensor probs = softmax(logits);
  // loss from log-sum-exp directly so a confident correct answer underflows
  // to 0 instead of log(0)
  double mx = logits[0];
  for (double x : logits.data) mx = std::max(mx, x);
  double lse = 0.0;
  for (double x : logits.data) lse += std::exp(x - mx);
  CrossEntropyResult r;
  r.loss = std::log(lse) + mx - logits[target];
  r.grad = probs;
  r.grad[target] -= 1.0;
  return r;
}

SvdResult truncated_svd(const Tensor& m, std::size_t rank) {
  if (m.rank() != 2) throw Error("truncated_svd: expects a matrix");
  if (rank == 0) throw Error("truncated_svd: rank must be positive");
  const std::size_t r = m.rows(), c = m.cols();
  if (rank > std::min(r, c)) throw Error("truncated_svd: rank exceeds min(rows, cols)");
  require_finite(m, "truncated_svd");

  Eigen::BDCSVD<Eigen::MatrixXd> svd(to_eigen(m), Eigen::ComputeThinU | Eigen::ComputeThinV);
  SvdResult out;
  out.u = Tensor::matrix(r, rank);
  out.s = Tensor::vector(rank);
  out.v = Tensor::matrix(c, rank);
  for (std::size_t k = 0; k < rank; ++k) {
    out.s[k] = svd.singularValues()(static_cast<Eigen::Index>(k));
    for (std::size_t i = 0; i < r; ++i) out.u.at(i, k) = svd.matrixU()(i, k);
    for (std::size_t j = 0; j < c; ++j) out.v.at(j, k) = svd.matrixV()(j, k);
  }
  return out;
}

PcaResult pca_reduce(const Tensor& rows, std::size_t out_dim) {
  if (rows.rank() != 2) throw Error("pca_reduce: expects a matrix");
  const std::size_t n = rows.rows(), d = rows.cols();
  if (out_dim > d) throw Error("pca_reduce: out_dim exceeds input dimension");
  if (out_dim == 0) throw Error("pca_reduce: out_dim must be positive");
  if (n < 2) throw Error("pca_reduce: needs at least two rows");
  require_finite(rows, "pca_reduce");

  PcaResult res;
  res.mean = Tensor::vector(d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) res.mean[j] += rows.at(i, j);
  for (double& v : res.mean.data) v /= static_cast<double>(n);

  Eigen::MatrixXd x(n, d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) x(i, j) = rows.at(i, j) - res.mean[j];

  Eigen::MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  if (eig.info() != Eigen::Success) throw Error("pca_reduce: eigendecomposition failed");

  // eigenvalues come back ascending; take the top out_dim in descending order
  res.basis = Tensor::matrix(d, out_dim);
  res.variances = Tensor::vector(out_dim);
  for (std::size_t k = 0; k < out_dim; ++k) {
    const Eigen::Index src = static_cast<Eigen::Index>(d - 1 - k);
    Eigen::VectorXd col = eig.eigenvectors().col(src);
    // canonical sign: entry of largest magnitude is positive
    Eigen::Index imax = 0;
    col.cwiseAbs().maxCoeff(&imax);
    if (col(imax) < 0) col = -col;
    for (std::size_t j = 0; j < d; ++j) res.basis.at(j, k) = col(static_cast<Eigen::Index>(j));
    res.variances[k] = std::max(0.0, eig.eigenvalues()(src));
  }

  Eigen::MatrixXd proj = x * to_eigen(res.basis);
  res.projected = from_eigen(proj);
  return res;
}

double grad_check(ParamStore& store, const ScalarFn& f, double eps) {
  store.zero_grads();
  const double base = f(store, true);
  if (!std::isfinite(base)) throw Error("grad_check: non-finite function value");

  // snapshot the analytic gradients before the perturbation sweep
  std::map<std::string, Tensor> analytic;
  for (const auto& name : store.names()) analytic.emplace(name, store.grad(name));

  double worst = 0.0;
  for (const auto& name : store.names()) {
    Tensor& p = store.param(name);
    const Tensor& g = analytic.at(name);
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double saved = p[i];
      p[i] = saved + eps;
      const double fp = f(store, false);
      p[i] = saved - eps;
      const double fm = f(store, false);
      p[i] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw Error("grad_check: non-finite function value at perturbed point");
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = g[i];
      const double rel = std::abs(a - numeric) / std::max(1e-8, std::abs(a) + std::abs(numeric));
      worst = std::max(worst, rel);
    }
  }
  return worst;
}

}  // namespace muserec
