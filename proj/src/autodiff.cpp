#include "muserec/autodiff.hpp"

#include <cmath>

namespace muserec {

ParamRef param_ref(ParamStore& store, const std::string& name) {
  return ParamRef{&store.param(name), &store.grad(name)};
}

VarId Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<VarId>(nodes_.size() - 1);
}

Tensor& Tape::grad_buf(VarId id) {
  Node& n = nodes_[id];
  if (n.grad.numel() == 0) n.grad = Tensor::zeros(n.value.shape);
  return n.grad;
}

VarId Tape::input(Tensor value) {
  Node n;
  n.op = Op::kInput;
  n.value = std::move(value);
  return push(std::move(n));
}

VarId Tape::row(ParamRef table, std::size_t r) {
  if (table.value->rank() != 2 || r >= table.value->rows())
    throw Error("tape.row: index out of range");
  Node n;
  n.op = Op::kRow;
  n.prefs[0] = table;
  n.aux_index = r;
  const std::size_t d = table.value->cols();
  n.value = Tensor::vector(d);
  const double* src = table.value->row_ptr(r);
  std::copy(src, src + d, n.value.data.begin());
  return push(std::move(n));
}

VarId Tape::matvec(ParamRef w, VarId x) {
  const Tensor& xv = nodes_[x].value;
  if (w.value->rank() != 2 || w.value->cols() != xv.numel())
    throw Error("tape.matvec: shape mismatch");
  Node n;
  n.op = Op::kMatVec;
  n.prefs[0] = w;
  n.args[0] = x;
  const std::size_t r = w.value->rows(), c = w.value->cols();
  n.value = Tensor::vector(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* wy = w.value->row_ptr(i);
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += wy[j] * xv[j];
    n.value[i] = acc;
  }
  return push(std::move(n));
}

VarId Tape::affine(ParamRef w, VarId x, ParamRef b) {
  VarId y = matvec(w, x);
  Node& n = nodes_[y];
  if (b.value->numel() != n.value.numel()) throw Error("tape.affine: bias shape mismatch");
  n.op = Op::kAffine;
  n.prefs[1] = b;
  for (std::size_t i = 0; i < n.value.numel(); ++i) n.value[i] += (*b.value)[i];
  return y;
}

VarId Tape::affine2(ParamRef w, VarId x, ParamRef u, VarId h, ParamRef b) {
  const Tensor& xv = nodes_[x].value;
  const Tensor& hv = nodes_[h].value;
  const std::size_t r = w.value->rows();
  if (w.value->cols() != xv.numel() || u.value->cols() != hv.numel() ||
      u.value->rows() != r || b.value->numel() != r)
    throw Error("tape.affine2: shape mismatch");
  Node n;
  n.op = Op::kAffine2;
  n.prefs[0] = w;
  n.prefs[1] = u;
  n.prefs[2] = b;
  n.args[0] = x;
  n.args[1] = h;
  n.value = Tensor::vector(r);
  for (std::size_t i = 0; i < r; ++i) {
    const double* wy = w.value->row_ptr(i);
    const double* uy = u.value->row_ptr(i);
    double acc = (*b.value)[i];
    for (std::size_t j = 0; j < xv.numel(); ++j) acc += wy[j] * xv[j];
    for (std::size_t j = 0; j < hv.numel(); ++j) acc += uy[j] * hv[j];
    n.value[i] = acc;
  }
  return push(std::move(n));
}

VarId Tape::dot_param(ParamRef v, VarId x) {
  const Tensor& xv = nodes_[x].value;
  if (v.value->numel() != xv.numel()) throw Error("tape.dot_param: shape mismatch");
  Node n;
  n.op = Op::kDotParam;
  n.prefs[0] = v;
  n.args[0] = x;
  double acc = 0.0;
  for (std::size_t i = 0; i < xv.numel(); ++i) acc += (*v.value)[i] * xv[i];
  n.value = Tensor({1}, {acc});
  return push(std::move(n));
}

VarId Tape::add(VarId a, VarId b) {
  const Tensor& av = nodes_[a].value;
  const Tensor& bv = nodes_[b].value;
  if (av.numel() != bv.numel()) throw Error("tape.add: shape mismatch");
  Node n;
  n.op = Op::kAdd;
  n.args = {a, b};
  n.value = av;
  for (std::size_t i = 0; i < bv.numel(); ++i) n.value[i] += bv[i];
  return push(std::move(n));
}

VarId Tape::hadamard(VarId a, VarId b) {
  const Tensor& av = nodes_[a].value;
  const Tensor& bv = nodes_[b].value;
  if (av.numel() != bv.numel()) throw Error("tape.hadamard: shape mismatch");
  Node n;
  n.op = Op::kHadamard;
  n.args = {a, b};
  n.value = av;
  for (std::size_t i = 0; i < bv.numel(); ++i) n.value[i] *= bv[i];
  return push(std::move(n));
}

VarId Tape::one_minus(VarId a) {
  Node n;
  n.op = Op::kOneMinus;
  n.args[0] = a;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = 1.0 - v;
  return push(std::move(n));
}

VarId Tape::scale(VarId a, double c) {
  Node n;
  n.op = Op::kScale;
  n.args[0] = a;
  n.aux_a = c;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v *= c;
  return push(std::move(n));
}

VarId Tape::sigmoid(VarId a) {
  Node n;
  n.op = Op::kSigmoid;
  n.args[0] = a;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = 1.0 / (1.0 + std::exp(-v));
  return push(std::move(n));
}

VarId Tape::tanh(VarId a) {
  Node n;
  n.op = Op::kTanh;
  n.args[0] = a;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = std::tanh(v);
  return push(std::move(n));
}

VarId Tape::exp(VarId a) {
  Node n;
  n.op = Op::kExp;
  n.args[0] = a;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = std::exp(v);
  return push(std::move(n));
}

VarId Tape::leaky_relu(VarId a, double slope) {
  Node n;
  n.op = Op::kLeakyRelu;
  n.args[0] = a;
  n.aux_a = slope;
  n.value = nodes_[a].value;
  for (double& v : n.value.data)
    if (v < 0) v *= slope;
  return push(std::move(n));
}

VarId Tape::clamp(VarId a, double lo, double hi) {
  Node n;
  n.op = Op::kClamp;
  n.args[0] = a;
  n.aux_a = lo;
  n.aux_b = hi;
  n.value = nodes_[a].value;
  for (double& v : n.value.data) v = std::min(hi, std::max(lo, v));
  return push(std::move(n));
}

VarId Tape::concat(std::span<const VarId> parts) {
  if (parts.empty()) throw Error("tape.concat: empty part list");
  Node n;
  n.op = Op::kConcat;
  n.extra_begin = static_cast<std::uint32_t>(extra_args_.size());
  n.extra_count = static_cast<std::uint32_t>(parts.size());
  std::size_t total = 0;
  for (VarId p : parts) {
    extra_args_.push_back(p);
    total += nodes_[p].value.numel();
  }
  n.value = Tensor::vector(total);
  std::size_t off = 0;
  for (VarId p : parts) {
    const Tensor& pv = nodes_[p].value;
    std::copy(pv.data.begin(), pv.data.end(), n.value.data.begin() + off);
    off += pv.numel();
  }
  return push(std::move(n));
}

VarId Tape::stack_scalars(std::span<const VarId> scalars) {
  if (scalars.empty()) throw Error("tape.stack: empty scalar list");
  Node n;
  n.op = Op::kStack;
  n.extra_begin = static_cast<std::uint32_t>(extra_args_.size());
  n.extra_count = static_cast<std::uint32_t>(scalars.size());
  n.value = Tensor::vector(scalars.size());
  for (std::size_t i = 0; i < scalars.size(); ++i) {
    extra_args_.push_back(scalars[i]);
    n.value[i] = nodes_[scalars[i]].value[0];
  }
  return push(std::move(n));
}

VarId Tape::softmax(VarId scores) {
  const Tensor& sv = nodes_[scores].value;
  if (sv.numel() == 0) throw Error("tape.softmax: empty input");
  Node n;
  n.op = Op::kSoftmax;
  n.args[0] = scores;
  double mx = sv[0];
  for (double v : sv.data) mx = std::max(mx, v);
  n.value = Tensor::vector(sv.numel());
  double sum = 0.0;
  for (std::size_t i = 0; i < sv.numel(); ++i) {
    n.value[i] = std::exp(sv[i] - mx);
    sum += n.value[i];
  }
  for (double& v : n.value.data) v /= sum;
  return push(std::move(n));
}

VarId Tape::weighted_sum(VarId weights, std::span<const VarId> vectors) {
  const Tensor& wv = nodes_[weights].value;
  if (wv.numel() != vectors.size()) throw Error("tape.weighted_sum: length mismatch");
  if (vectors.empty()) throw Error("tape.weighted_sum: empty sequence");
  const std::size_t d = nodes_[vectors[0]].value.numel();
  Node n;
  n.op = Op::kWeightedSum;
  n.args[0] = weights;
  n.extra_begin = static_cast<std::uint32_t>(extra_args_.size());
  n.extra_count = static_cast<std::uint32_t>(vectors.size());
  n.value = Tensor::vector(d);
  for (std::size_t i = 0; i < vectors.size(); ++i) {
    const Tensor& xv = nodes_[vectors[i]].value;
    if (xv.numel() != d) throw Error("tape.weighted_sum: vector dim mismatch");
    extra_args_.push_back(vectors[i]);
    const double w = wv[i];
    for (std::size_t j = 0; j < d; ++j) n.value[j] += w * xv[j];
  }
  return push(std::move(n));
}

VarId Tape::cross_entropy(VarId logits, std::size_t target) {
  const Tensor& lv = nodes_[logits].value;
  if (target >= lv.numel()) throw Error("tape.cross_entropy: target out of range");
  Node n;
  n.op = Op::kCrossEntropy;
  n.args[0] = logits;
  n.aux_index = target;
  double mx = lv[0];
  for (double v : lv.data) mx = std::max(mx, v);
  double sum = 0.0;
  n.aux_tensor = Tensor::vector(lv.numel());
  for (std::size_t i = 0; i < lv.numel(); ++i) {
    n.aux_tensor[i] = std::exp(lv[i] - mx);
    sum += n.aux_tensor[i];
  }
  for (double& v : n.aux_tensor.data) v /= sum;
  n.value = Tensor({1}, {std::log(sum) + mx - lv[target]});
  return push(std::move(n));
}

VarId Tape::mse_to_const(VarId a, Tensor target) {
  const Tensor& av = nodes_[a].value;
  if (av.numel() != target.numel()) throw Error("tape.mse: shape mismatch");
  Node n;
  n.op = Op::kMseToConst;
  n.args[0] = a;
  double acc = 0.0;
  for (std::size_t i = 0; i < av.numel(); ++i) {
    const double d = av[i] - target[i];
    acc += d * d;
  }
  n.value = Tensor({1}, {acc / static_cast<double>(av.numel())});
  n.aux_tensor = std::move(target);
  return push(std::move(n));
}

VarId Tape::kl_to_standard_normal(VarId mu, VarId logvar) {
  const Tensor& mv = nodes_[mu].value;
  const Tensor& lv = nodes_[logvar].value;
  if (mv.numel() != lv.numel()) throw Error("tape.kl: shape mismatch");
  Node n;
  n.op = Op::kKl;
  n.args = {mu, logvar};
  double acc = 0.0;
  for (std::size_t i = 0; i < mv.numel(); ++i)
    acc += mv[i] * mv[i] + std::exp(lv[i]) - lv[i] - 1.0;
  n.value = Tensor({1}, {0.5 * acc});
  return push(std::move(n));
}

VarId Tape::mean_scalars(std::span<const VarId> scalars) {
  if (scalars.empty()) throw Error("tape.mean: empty scalar list");
  Node n;
  n.op = Op::kMeanScalars;
  n.extra_begin = static_cast<std::uint32_t>(extra_args_.size());
  n.extra_count = static_cast<std::uint32_t>(scalars.size());
  double acc = 0.0;
  for (VarId s : scalars) {
    extra_args_.push_back(s);
    acc += nodes_[s].value[0];
  }
  n.value = Tensor({1}, {acc / static_cast<double>(scalars.size())});
  return push(std::move(n));
}

void Tape::backward(VarId root) {
  if (root < 0 || root >= static_cast<VarId>(nodes_.size()))
    throw Error("tape.backward: bad root");
  if (nodes_[root].value.numel() != 1)
    throw Error("tape.backward: root must be scalar");
  grad_buf(root)[0] = 1.0;
  for (VarId id = root; id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.numel() == 0) continue;  // nothing flowed into this node
    backward_node(n);
  }
}

void Tape::backward_node(Node& n) {
  const Tensor& g = n.grad;
  switch (n.op) {
    case Op::kInput:
      break;
    case Op::kRow: {
      double* dst = n.prefs[0].grad->row_ptr(n.aux_index);
      for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
      break;
    }
    case Op::kMatVec:
    case Op::kAffine: {
      const Tensor& xv = nodes_[n.args[0]].value;
      Tensor& xg = grad_buf(n.args[0]);
      const Tensor& w = *n.prefs[0].value;
      Tensor& wg = *n.prefs[0].grad;
      for (std::size_t i = 0; i < w.rows(); ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        const double* wy = w.row_ptr(i);
        double* wgy = wg.row_ptr(i);
        for (std::size_t j = 0; j < w.cols(); ++j) {
          xg[j] += gi * wy[j];
          wgy[j] += gi * xv[j];
        }
      }
      if (n.op == Op::kAffine) {
        Tensor& bg = *n.prefs[1].grad;
        for (std::size_t i = 0; i < g.numel(); ++i) bg[i] += g[i];
      }
      break;
    }
    case Op::kAffine2: {
      const Tensor& xv = nodes_[n.args[0]].value;
      const Tensor& hv = nodes_[n.args[1]].value;
      Tensor& xg = grad_buf(n.args[0]);
      Tensor& hg = grad_buf(n.args[1]);
      const Tensor& w = *n.prefs[0].value;
      const Tensor& u = *n.prefs[1].value;
      Tensor& wg = *n.prefs[0].grad;
      Tensor& ug = *n.prefs[1].grad;
      Tensor& bg = *n.prefs[2].grad;
      for (std::size_t i = 0; i < w.rows(); ++i) {
        const double gi = g[i];
        if (gi == 0.0) continue;
        bg[i] += gi;
        const double* wy = w.row_ptr(i);
        double* wgy = wg.row_ptr(i);
        for (std::size_t j = 0; j < xv.numel(); ++j) {
          xg[j] += gi * wy[j];
          wgy[j] += gi * xv[j];
        }
        const double* uy = u.row_ptr(i);
        double* ugy = ug.row_ptr(i);
        for (std::size_t j = 0; j < hv.numel(); ++j) {
          hg[j] += gi * uy[j];
          ugy[j] += gi * hv[j];
        }
      }
      break;
    }
    case Op::kDotParam: {
      const double g0 = g[0];
      const Tensor& xv = nodes_[n.args[0]].value;
      Tensor& xg = grad_buf(n.args[0]);
      const Tensor& v = *n.prefs[0].value;
      Tensor& vg = *n.prefs[0].grad;
      for (std::size_t i = 0; i < xv.numel(); ++i) {
        xg[i] += g0 * v[i];
        vg[i] += g0 * xv[i];
      }
      break;
    }
    case Op::kAdd: {
      Tensor& ag = grad_buf(n.args[0]);
      Tensor& bg = grad_buf(n.args[1]);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ag[i] += g[i];
        bg[i] += g[i];
      }
      break;
    }
    case Op::kHadamard: {
      const Tensor& av = nodes_[n.args[0]].value;
      const Tensor& bv = nodes_[n.args[1]].value;
      Tensor& ag = grad_buf(n.args[0]);
      Tensor& bg = grad_buf(n.args[1]);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        ag[i] += g[i] * bv[i];
        bg[i] += g[i] * av[i];
      }
      break;
    }
    case Op::kOneMinus: {
      Tensor& ag = grad_buf(n.args[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) ag[i] -= g[i];
      break;
    }
    case Op::kScale: {
      Tensor& ag = grad_buf(n.args[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) ag[i] += n.aux_a * g[i];
      break;
    }
    case Op::kSigmoid: {
      Tensor& ag = grad_buf(n.args[0]);
      for (std::size_t i = 0; i < g.numel(); ++i)
        ag[i] += g[i] * n.value[i] * (1.0 - n.value[i]);
      break;
    }
    case Op::kTanh: {
      Tensor& ag = grad_buf(n.args[0]);
      for (std::size_t i = 0; i < g.numel(); ++i)
        ag[i] += g[i] * (1.0 - n.value[i] * n.value[i]);
      break;
    }
    case Op::kExp: {
      Tensor& ag = grad_buf(n.args[0]);
      for (std::size_t i = 0; i < g.numel(); ++i) ag[i] += g[i] * n.value[i];
      break;
    }
    case Op::kLeakyRelu: {
      const Tensor& xv = nodes_[n.args[0]].value;
      Tensor& ag = grad_buf(n.args[0]);
      for (std::size_t i = 0; i < g.numel(); ++i)
        ag[i] += g[i] * (xv[i] < 0 ? n.aux_a : 1.0);
      break;
    }
    case Op::kClamp: {
      const Tensor& xv = nodes_[n.args[0]].value;
      Tensor& ag = grad_buf(n.args[0]);
      for (std::size_t i = 0; i < g.numel(); ++i)
        if (xv[i] >= n.aux_a && xv[i] <= n.aux_b) ag[i] += g[i];
      break;
    }
    case Op::kConcat: {
      std::size_t off = 0;
      for (std::uint32_t k = 0; k < n.extra_count; ++k) {
        VarId p = extra_args_[n.extra_begin + k];
        Tensor& pg = grad_buf(p);
        for (std::size_t i = 0; i < pg.numel(); ++i) pg[i] += g[off + i];
        off += pg.numel();
      }
      break;
    }
    case Op::kStack: {
      for (std::uint32_t k = 0; k < n.extra_count; ++k)
        grad_buf(extra_args_[n.extra_begin + k])[0] += g[k];
      break;
    }
    case Op::kSoftmax: {
      Tensor& ag = grad_buf(n.args[0]);
      double dot = 0.0;
      for (std::size_t i = 0; i < g.numel(); ++i) dot += g[i] * n.value[i];
      for (std::size_t i = 0; i < g.numel(); ++i)
        ag[i] += n.value[i] * (g[i] - dot);
      break;
    }
    case Op::kWeightedSum: {
      const Tensor& wv = nodes_[n.args[0]].value;
      Tensor& wg = grad_buf(n.args[0]);
      for (std::uint32_t k = 0; k < n.extra_count; ++k) {
        VarId p = extra_args_[n.extra_begin + k];
        const Tensor& xv = nodes_[p].value;
        Tensor& xg = grad_buf(p);
        double acc = 0.0;
        for (std::size_t j = 0; j < g.numel(); ++j) {
          acc += g[j] * xv[j];
          xg[j] += wv[k] * g[j];
        }
        wg[k] += acc;
      }
      break;
    }
    case Op::kCrossEntropy: {
      const double g0 = g[0];
      Tensor& lg = grad_buf(n.args[0]);
      for (std::size_t i = 0; i < lg.numel(); ++i) lg[i] += g0 * n.aux_tensor[i];
      lg[n.aux_index] -= g0;
      break;
    }
    case Op::kMseToConst: {
      const double g0 = g[0];
      const Tensor& av = nodes_[n.args[0]].value;
      Tensor& ag = grad_buf(n.args[0]);
      const double scale = 2.0 / static_cast<double>(av.numel());
      for (std::size_t i = 0; i < av.numel(); ++i)
        ag[i] += g0 * scale * (av[i] - n.aux_tensor[i]);
      break;
    }
    case Op::kKl: {
      const double g0 = g[0];
      const Tensor& mv = nodes_[n.args[0]].value;
      const Tensor& lv = nodes_[n.args[1]].value;
      Tensor& mg = grad_buf(n.args[0]);
      Tensor& lg = grad_buf(n.args[1]);
      for (std::size_t i = 0; i < mv.numel(); ++i) {
        mg[i] += g0 * mv[i];
        lg[i] += g0 * 0.5 * (std::exp(lv[i]) - 1.0);
      }
      break;
    }
    case Op::kMeanScalars: {
      const double share = g[0] / static_cast<double>(n.extra_count);
      for (std::uint32_t k = 0; k < n.extra_count; ++k)
        grad_buf(extra_args_[n.extra_begin + k])[0] += share;
      break;
    }
  }
}

void Tape::clear() {
  nodes_.clear();
  extra_args_.clear();
}

}  // namespace muserec
