#include <cmath>
#include <vector>

#include "doctest.h"
#include "muserec/autodiff.hpp"
#include "muserec/numerics.hpp"
#include "muserec/rng.hpp"

using namespace muserec;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, SeededRng& rng, double scale = 1.0) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = scale * rng.normal();
  return t;
}

}  // namespace

TEST_CASE("tape forward values") {
  ParamStore store;
  store.add("W", Tensor({2, 3}, {1, 2, 3, 4, 5, 6}));
  store.add("b", Tensor({2}, {10, 20}));

  Tape tape;
  VarId x = tape.input(Tensor({3}, {1, 0, -1}));
  VarId y = tape.affine(param_ref(store, "W"), x, param_ref(store, "b"));
  CHECK(tape.value(y)[0] == doctest::Approx(1 - 3 + 10));
  CHECK(tape.value(y)[1] == doctest::Approx(4 - 6 + 20));

  VarId r = tape.row(param_ref(store, "W"), 1);
  CHECK(tape.value(r)[0] == 4);
  CHECK(tape.value(r)[2] == 6);

  VarId sm = tape.softmax(tape.input(Tensor({2}, {0.0, 0.0})));
  CHECK(tape.value(sm)[0] == doctest::Approx(0.5));
}

TEST_CASE("tape gradients match central differences, op by op") {
  // one composite expression touching every op the models use
  SeededRng rng(99);
  ParamStore store;
  store.add("W", random_tensor({4, 3}, rng, 0.5));
  store.add("U", random_tensor({4, 4}, rng, 0.5));
  store.add("b", random_tensor({4}, rng, 0.5));
  store.add("v", random_tensor({4}, rng, 0.5));
  store.add("E", random_tensor({5, 3}, rng, 0.5));

  const Tensor x_in = random_tensor({3}, rng, 1.0);
  const Tensor mask({4}, {1.25, 0.0, 1.25, 1.25});
  const Tensor target = random_tensor({4}, rng, 1.0);

  auto f = [&](ParamStore& s, bool with_grad) {
    Tape tape;
    VarId e0 = tape.row(param_ref(s, "E"), 0);
    VarId e2 = tape.row(param_ref(s, "E"), 2);
    VarId x = tape.input(x_in);
    VarId pre = tape.affine2(param_ref(s, "W"), x, param_ref(s, "U"),
                             tape.affine(param_ref(s, "W"), e0, param_ref(s, "b")),
                             param_ref(s, "b"));
    VarId z = tape.sigmoid(pre);
    VarId h = tape.hadamard(tape.one_minus(z), tape.tanh(pre));
    VarId hd = tape.hadamard(h, tape.input(mask));
    VarId lr = tape.leaky_relu(tape.scale(hd, 1.7), 0.01);
    VarId cl = tape.clamp(lr, -0.9, 0.9);

    VarId s0 = tape.dot_param(param_ref(s, "v"), cl);
    VarId s1 = tape.dot_param(param_ref(s, "v"), z);
    std::vector<VarId> scores{s0, s1};
    VarId alpha = tape.softmax(tape.stack_scalars(scores));
    std::vector<VarId> seq{cl, z};
    VarId ctx = tape.weighted_sum(alpha, seq);

    std::vector<VarId> parts{ctx, e2};
    VarId cat = tape.concat(parts);
    VarId logits = tape.matvec(param_ref(s, "W2"), cat);
    VarId ce = tape.cross_entropy(logits, 1);
    VarId mse = tape.mse_to_const(tape.exp(tape.scale(ctx, 0.3)), target);
    VarId kl = tape.kl_to_standard_normal(ctx, z);
    std::vector<VarId> losses{ce, mse, kl};
    VarId loss = tape.mean_scalars(losses);
    if (with_grad) tape.backward(loss);
    return tape.value(loss)[0];
  };
  store.add("W2", random_tensor({6, 7}, rng, 0.4));

  CHECK(grad_check(store, f, 1e-5) <= 1e-6);
}

TEST_CASE("two-layer network cross entropy gradient check") {
  SeededRng rng(4242);
  ParamStore store;
  store.add("W1", random_tensor({8, 5}, rng, 0.6));
  store.add("b1", random_tensor({8}, rng, 0.1));
  store.add("W2", random_tensor({4, 8}, rng, 0.6));
  store.add("b2", random_tensor({4}, rng, 0.1));
  const Tensor x_in = random_tensor({5}, rng, 1.0);

  auto f = [&](ParamStore& s, bool with_grad) {
    Tape tape;
    VarId x = tape.input(x_in);
    VarId h = tape.tanh(tape.affine(param_ref(s, "W1"), x, param_ref(s, "b1")));
    VarId logits = tape.affine(param_ref(s, "W2"), h, param_ref(s, "b2"));
    VarId loss = tape.cross_entropy(logits, 2);
    if (with_grad) tape.backward(loss);
    return tape.value(loss)[0];
  };
  CHECK(grad_check(store, f, 1e-5) <= 1e-4);
}

TEST_CASE("gradients accumulate across repeated uses of one parameter") {
  ParamStore store;
  store.add("E", Tensor({2, 2}, {1, 2, 3, 4}));
  Tape tape;
  auto e = param_ref(store, "E");
  VarId sum = tape.add(tape.row(e, 0), tape.row(e, 0));  // 2 * row 0
  VarId loss = tape.mse_to_const(sum, Tensor::vector(2));
  tape.backward(loss);
  // d/dE[0][j] of mean((2 E0j)^2) accumulates once per row lookup
  CHECK(store.grad("E").at(0, 0) == doctest::Approx(4.0));
  CHECK(store.grad("E").at(0, 1) == doctest::Approx(8.0));
  CHECK(store.grad("E").at(1, 0) == 0.0);
}

TEST_CASE("tape shape errors") {
  ParamStore store;
  store.add("W", Tensor::matrix(2, 3));
  Tape tape;
  VarId bad = tape.input(Tensor({2}, {1, 1}));
  CHECK_THROWS_AS(tape.matvec(param_ref(store, "W"), bad), Error);
  CHECK_THROWS_AS(tape.row(param_ref(store, "W"), 2), Error);
  VarId scores = tape.input(Tensor({3}, {1, 2, 3}));
  std::vector<VarId> two{bad, bad};
  CHECK_THROWS_AS(tape.weighted_sum(scores, two), Error);
}
