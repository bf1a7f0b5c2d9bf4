#ifndef MUSEREC_PARAM_STORE_HPP
#define MUSEREC_PARAM_STORE_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "muserec/tensor.hpp"

namespace muserec {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Named trainable tensors, their gradient accumulators and Adam state.
/// Ordered map so iteration order (and therefore every update sweep and
/// checkpoint layout) is deterministic.
class ParamStore {
 public:
  Tensor& add(const std::string& name, Tensor value);

  bool has(const std::string& name) const { return params_.count(name) != 0; }
  Tensor& param(const std::string& name);
  const Tensor& param(const std::string& name) const;

  /// Gradient accumulator for `name`, created zero-filled on first use.
  Tensor& grad(const std::string& name);
  bool has_grad(const std::string& name) const { return grads_.count(name) != 0; }

  void zero_grads();

  /// One Adam update over every parameter. Throws if a parameter has no
  /// gradient accumulator or a non-finite value shows up in the sweep.
  void adam_step(double lr, const AdamConfig& cfg = {});

  std::uint64_t step_count() const { return step_; }

  const std::map<std::string, Tensor>& params() const { return params_; }
  std::vector<std::string> names() const;

  std::size_t total_values() const;

 private:
  std::map<std::string, Tensor> params_;
  std::map<std::string, Tensor> grads_;
  std::map<std::string, Tensor> m_;  // first moments
  std::map<std::string, Tensor> v_;  // second moments
  std::uint64_t step_ = 0;
};

}  // namespace muserec

#endif
