#include "muserec/param_store.hpp"

#include <cmath>

namespace muserec {

Tensor& ParamStore::add(const std::string& name, Tensor value) {
  if (params_.count(name)) throw Error("param_store: duplicate parameter " + name);
  auto [it, ok] = params_.emplace(name, std::move(value));
  (void)ok;
  return it->second;
}

Tensor& ParamStore::param(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("param_store: unknown parameter " + name);
  return it->second;
}

const Tensor& ParamStore::param(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw Error("param_store: unknown parameter " + name);
  return it->second;
}

Tensor& ParamStore::grad(const std::string& name) {
  auto it = grads_.find(name);
  if (it == grads_.end()) {
    const Tensor& p = param(name);
    it = grads_.emplace(name, Tensor::zeros(p.shape)).first;
  }
  return it->second;
}

void ParamStore::zero_grads() {
  for (auto& [name, g] : grads_) g.fill(0.0);
}

void ParamStore::adam_step(double lr, const AdamConfig& cfg) {
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [name, p] : params_) {
    auto git = grads_.find(name);
    if (git == grads_.end())
      throw Error("adam_step: no gradient for parameter " + name);
    Tensor& g = git->second;
    if (!g.same_shape(p))
      throw Error("adam_step: gradient shape mismatch for " + name);
    Tensor& m = m_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    Tensor& v = v_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
    for (std::size_t i = 0; i < p.numel(); ++i) {
      const double gi = g[i];
      if (!std::isfinite(gi))
        throw Error("adam_step: non-finite gradient in " + name);
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * gi;
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + cfg.epsilon);
      if (!std::isfinite(p[i]))
        throw Error("adam_step: non-finite parameter in " + name);
    }
  }
}

std::vector<std::string> ParamStore::names() const {
  std::vector<std::string> out;
  out.reserve(params_.size());
  for (const auto& [name, p] : params_) out.push_back(name);
  return out;
}

std::size_t ParamStore::total_values() const {
  std::size_t n = 0;
  for (const auto& [name, p] : params_) n += p.numel();
  return n;
}

}  // namespace muserec
