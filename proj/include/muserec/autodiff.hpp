#ifndef MUSEREC_AUTODIFF_HPP
#define MUSEREC_AUTODIFF_HPP

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "muserec/param_store.hpp"
#include "muserec/tensor.hpp"

namespace muserec {

/// Non-owning handle to a parameter tensor and its gradient accumulator.
struct ParamRef {
  const Tensor* value = nullptr;
  Tensor* grad = nullptr;
};

/// Makes a ParamRef for `name`, creating the gradient accumulator if needed.
ParamRef param_ref(ParamStore& store, const std::string& name);

using VarId = std::int32_t;

/// Minimal reverse-mode tape over vectors and scalars. Matrices only enter
/// as parameters (ParamRef), never as intermediates, which keeps the node
/// set small. Nodes are recorded in topological order; backward() walks
/// them once in reverse. Parameter gradients accumulate straight into the
/// ParamStore tensors the refs point at.
class Tape {
 public:
  /// Constant leaf (inputs, dropout masks, frozen noise). No gradient flows
  /// out of it.
  VarId input(Tensor value);

  VarId zeros(std::size_t n) { return input(Tensor::vector(n)); }

  /// Row `r` of a parameter matrix; the embedding-lookup primitive.
  VarId row(ParamRef table, std::size_t r);

  /// W * x
  VarId matvec(ParamRef w, VarId x);
  /// W * x + b
  VarId affine(ParamRef w, VarId x, ParamRef b);
  /// W * x + U * h + b  (the GRU gate pre-activation)
  VarId affine2(ParamRef w, VarId x, ParamRef u, VarId h, ParamRef b);
  /// dot(v, x) as a rank-1 tensor of size 1
  VarId dot_param(ParamRef v, VarId x);

  VarId add(VarId a, VarId b);
  VarId hadamard(VarId a, VarId b);
  VarId one_minus(VarId a);
  VarId scale(VarId a, double c);
  VarId sigmoid(VarId a);
  VarId tanh(VarId a);
  VarId exp(VarId a);
  VarId leaky_relu(VarId a, double slope);
  /// Elementwise clamp; zero subgradient outside [lo, hi].
  VarId clamp(VarId a, double lo, double hi);

  VarId concat(std::span<const VarId> parts);
  /// Packs scalar vars (size-1 tensors) into one vector.
  VarId stack_scalars(std::span<const VarId> scalars);
  VarId softmax(VarId scores);
  /// sum_i weights[i] * vectors[i]; weights is a vector var.
  VarId weighted_sum(VarId weights, std::span<const VarId> vectors);

  /// -log softmax(logits)[target], fused with its softmax-minus-onehot
  /// backward rule.
  VarId cross_entropy(VarId logits, std::size_t target);
  /// mean((a - target)^2) over all entries
  VarId mse_to_const(VarId a, Tensor target);
  /// 0.5 * sum(mu^2 + exp(logvar) - logvar - 1)
  VarId kl_to_standard_normal(VarId mu, VarId logvar);
  VarId mean_scalars(std::span<const VarId> scalars);

  const Tensor& value(VarId id) const { return nodes_[id].value; }
  const Tensor& grad(VarId id) const { return nodes_[id].grad; }

  /// Seeds d(root)/d(root) = 1 and accumulates gradients into every node
  /// and every ParamRef the tape touched. `root` must be scalar.
  void backward(VarId root);

  std::size_t size() const { return nodes_.size(); }
  void clear();

 private:
  enum class Op : std::uint8_t {
    kInput, kRow, kMatVec, kAffine, kAffine2, kDotParam,
    kAdd, kHadamard, kOneMinus, kScale, kSigmoid, kTanh, kExp,
    kLeakyRelu, kClamp, kConcat, kStack, kSoftmax, kWeightedSum,
    kCrossEntropy, kMseToConst, kKl, kMeanScalars,
  };

  struct Node {
    Op op;
    std::array<VarId, 2> args{-1, -1};
    std::uint32_t extra_begin = 0, extra_count = 0;  // indices into extra_args_
    std::array<ParamRef, 3> prefs{};
    std::size_t aux_index = 0;  // row index / cross-entropy target
    double aux_a = 0.0, aux_b = 0.0;
    Tensor value;
    Tensor grad;
    Tensor aux_tensor;  // softmax probs, mse target, ...
  };

  VarId push(Node n);
  void backward_node(Node& n);
  Tensor& grad_buf(VarId id);

  std::vector<Node> nodes_;
  std::vector<VarId> extra_args_;
};

}  // namespace muserec

#endif
