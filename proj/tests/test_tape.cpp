// Copyright 2026 The touchrag Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "testutil.hpp"
#include "touchrag/core.hpp"
#include "touchrag/optim.hpp"
#include "touchrag/tape.hpp"
#include "touchrag/tensor.hpp"

using namespace touchrag;
using num::ParamStore;
using num::Tape;
using num::Tensor;
using num::Var;

namespace {

// Random values bounded away from zero, so relu and friends are checked
// strictly inside a differentiable region (FD straddles x by +-h).
Tensor random_nonzero(size_t rows, size_t cols, Rng& rng) {
  Tensor t(rows, cols);
  for (size_t i = 0; i < t.numel(); ++i) {
    double m = rng.uniform(0.1, 1.0);
    t.data()[i] = (rng.below(2) == 0) ? m : -m;
  }
  return t;
}

// Finite-difference check of one op. `build` maps (tape, x-node) to a
// scalar loss node; the same builder is reused to re-evaluate the loss at
// perturbed inputs, so the analytic pullback under test never leaks into
// the reference value.
using Builder = std::function<Var(Tape&, Var)>;

double input_grad_error(const Tensor& x0, const Builder& build) {
  Tape tape;
  Var x = tape.input(x0);
  Var loss = build(tape, x);
  tape.backward(loss);
  Tensor analytic = tape.grad(x);

  auto loss_of = [&](const Tensor& xt) {
    Tape t;
    Var v = t.input(xt);
    return build(t, v).value().scalar_value();
  };
  return testutil::fd_input_check(x0, loss_of, analytic);
}

// Contracts an arbitrary-shaped node down to a scalar with fixed weights,
// so every output component influences the loss with a distinct factor.
Var weighted_sum(Tape& tape, Var y, const Tensor& w) {
  return num::sum_all(num::mul(y, tape.input(w)));
}

constexpr double kTol = 1e-5;

}  // namespace

TEST_CASE("gradients of elementwise and linear ops match finite differences") {
  Rng rng(0xabc1);
  Tensor x0 = random_nonzero(3, 4, rng);
  Tensor w = testutil::random_tensor(3, 4, rng);
  Tensor other = testutil::random_tensor(3, 4, rng);

  auto lift = [&](std::function<Var(Tape&, Var)> op) -> Builder {
    return [&, op](Tape& t, Var x) { return weighted_sum(t, op(t, x), w); };
  };

  CHECK(input_grad_error(x0, lift([&](Tape& t, Var x) {
          return num::add(x, t.input(other));
        })) < kTol);
  CHECK(input_grad_error(x0, lift([&](Tape& t, Var x) {
          return num::sub(t.input(other), x);
        })) < kTol);
  CHECK(input_grad_error(x0, lift([&](Tape& t, Var x) {
          return num::mul(x, t.input(other));
        })) < kTol);
  CHECK(input_grad_error(x0, lift([](Tape&, Var x) {
          return num::scale(x, -2.5);
        })) < kTol);
  CHECK(input_grad_error(x0, lift([](Tape&, Var x) {
          return num::affine(x, 3.0, -1.0);
        })) < kTol);
  CHECK(input_grad_error(x0, lift([](Tape&, Var x) {
          return num::relu(x);
        })) < kTol);
}

TEST_CASE("gradient of x*x through shared-node mul is 2x paths summed") {
  // loss = 0.5 * sum(x.x): the analytic gradient is exactly x, including
  // bitwise, because the pullback adds 0.5*x twice.
  Rng rng(7);
  Tensor x0 = testutil::random_tensor(2, 3, rng);
  Tape tape;
  Var x = tape.input(x0);
  Var loss = num::scale(num::sum_all(num::mul(x, x)), 0.5);
  tape.backward(loss);
  const Tensor& g = tape.grad(x);
  for (size_t i = 0; i < x0.numel(); ++i) CHECK(g.data()[i] == x0.data()[i]);
}

TEST_CASE("gradient of sum over all entries is exactly ones") {
  Tape tape;
  Var x = tape.input(Tensor(4, 5, 2.25));
  tape.backward(num::sum_all(x));
  const Tensor& g = tape.grad(x);
  for (size_t i = 0; i < g.numel(); ++i) CHECK(g.data()[i] == 1.0);
}

TEST_CASE("matmul gradients match finite differences on both operands") {
  Rng rng(0xabc2);
  Tensor a0 = testutil::random_tensor(3, 4, rng);
  Tensor b0 = testutil::random_tensor(4, 2, rng);
  Tensor w = testutil::random_tensor(3, 2, rng);

  CHECK(input_grad_error(a0, [&](Tape& t, Var x) {
          return weighted_sum(t, num::matmul(x, t.input(b0)), w);
        }) < kTol);
  CHECK(input_grad_error(b0, [&](Tape& t, Var x) {
          return weighted_sum(t, num::matmul(t.input(a0), x), w);
        }) < kTol);
}

TEST_CASE("structural op gradients match finite differences") {
  Rng rng(0xabc3);
  Tensor x0 = testutil::random_tensor(3, 6, rng);

  SUBCASE("transpose") {
    Tensor w = testutil::random_tensor(6, 3, rng);
    CHECK(input_grad_error(x0, [&](Tape& t, Var x) {
            return weighted_sum(t, num::transpose(x), w);
          }) < kTol);
  }
  SUBCASE("slice_cols") {
    Tensor w = testutil::random_tensor(3, 2, rng);
    CHECK(input_grad_error(x0, [&](Tape& t, Var x) {
            return weighted_sum(t, num::slice_cols(x, 2, 4), w);
          }) < kTol);
  }
  SUBCASE("concat_cols") {
    Tensor other = testutil::random_tensor(3, 2, rng);
    Tensor w = testutil::random_tensor(3, 8, rng);
    CHECK(input_grad_error(x0, [&](Tape& t, Var x) {
            std::vector<Var> parts{x, t.input(other)};
            return weighted_sum(t, num::concat_cols(parts), w);
          }) < kTol);
  }
  SUBCASE("concat_rows") {
    Tensor other = testutil::random_tensor(2, 6, rng);
    Tensor w = testutil::random_tensor(5, 6, rng);
    CHECK(input_grad_error(x0, [&](Tape& t, Var x) {
            std::vector<Var> parts{x, t.input(other)};
            return weighted_sum(t, num::concat_rows(parts), w);
          }) < kTol);
  }
  SUBCASE("add_rowvec, gradient of the broadcast row") {
    Tensor row0 = testutil::random_tensor(1, 6, rng);
    Tensor w = testutil::random_tensor(3, 6, rng);
    CHECK(input_grad_error(row0, [&](Tape& t, Var r) {
            return weighted_sum(t, num::add_rowvec(t.input(x0), r), w);
          }) < kTol);
  }
  SUBCASE("diag") {
    Tensor sq = testutil::random_tensor(4, 4, rng);
    Tensor w = testutil::random_tensor(4, 1, rng);
    CHECK(input_grad_error(sq, [&](Tape& t, Var x) {
            return weighted_sum(t, num::diag(x), w);
          }) < kTol);
  }
}

TEST_CASE("reduction and normalization gradients match finite differences") {
  Rng rng(0xabc4);
  Tensor x0 = testutil::random_tensor(3, 5, rng, -2.0, 2.0);

  SUBCASE("softmax_rows") {
    Tensor w = testutil::random_tensor(3, 5, rng);
    CHECK(input_grad_error(x0, [&](Tape& t, Var x) {
            return weighted_sum(t, num::softmax_rows(x), w);
          }) < kTol);
  }
  SUBCASE("logsumexp_rows") {
    Tensor w = testutil::random_tensor(3, 1, rng);
    CHECK(input_grad_error(x0, [&](Tape& t, Var x) {
            return weighted_sum(t, num::logsumexp_rows(x), w);
          }) < kTol);
  }
  SUBCASE("sum_rows") {
    Tensor w = testutil::random_tensor(3, 1, rng);
    CHECK(input_grad_error(x0, [&](Tape& t, Var x) {
            return weighted_sum(t, num::sum_rows(x), w);
          }) < kTol);
  }
  SUBCASE("mean_all") {
    CHECK(input_grad_error(x0, [](Tape&, Var x) {
            return num::mean_all(x);
          }) < kTol);
  }
  SUBCASE("rownormalize at generic points") {
    Tensor w = testutil::random_tensor(3, 5, rng);
    CHECK(input_grad_error(x0, [&](Tape& t, Var x) {
            return weighted_sum(t, num::rownormalize(x), w);
          }) < kTol);
  }
}

TEST_CASE("rownormalize forward: unit rows, and zero rows stay finite") {
  Rng rng(0xabc5);
  Tensor x0 = testutil::random_tensor(4, 6, rng);
  Tape tape;
  Var y = num::rownormalize(tape.input(x0));
  for (size_t i = 0; i < 4; ++i) {
    double n = 0.0;
    for (size_t j = 0; j < 6; ++j) n += y.value().at(i, j) * y.value().at(i, j);
    CHECK(std::abs(std::sqrt(n) - 1.0) < 1e-12);
  }

  // An all-zero row is the state the query network emits on its first
  // batch. Forward must yield zeros and backward finite numbers, not NaN.
  Tensor z(2, 3, 0.0);
  z.at(1, 0) = 1.0;
  Tape t2;
  Var xv = t2.input(z);
  Var yv = num::rownormalize(xv);
  CHECK(yv.value().at(0, 0) == 0.0);
  CHECK(yv.value().at(0, 1) == 0.0);
  CHECK(yv.value().at(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
  t2.backward(num::sum_all(yv));
  for (size_t i = 0; i < 6; ++i) CHECK(std::isfinite(t2.grad(xv).data()[i]));
}

TEST_CASE("logsumexp_rows survives huge logits") {
  Tape tape;
  Var x = tape.input(Tensor::from(1, 2, {1000.0, 0.0}));
  Var y = num::logsumexp_rows(x);
  CHECK(y.value().at(0, 0) == doctest::Approx(1000.0).epsilon(1e-12));
}

TEST_CASE("bce_with_logits value matches the direct stable formula") {
  Tensor logits = Tensor::from(1, 3, {0.0, 2.0, -3.0});
  Tensor targets = Tensor::from(1, 3, {0.5, 1.0, 0.0});
  Tape tape;
  Var z = tape.input(logits);
  Var loss = num::bce_with_logits(z, targets);

  long double want = 0.0L;
  for (size_t i = 0; i < 3; ++i) {
    long double zi = logits.data()[i], ti = targets.data()[i];
    want += std::max(zi, 0.0L) - zi * ti + log1pl(expl(-fabsl(zi)));
  }
  want /= 3.0L;
  CHECK(loss.value().scalar_value() ==
        doctest::Approx(static_cast<double>(want)).epsilon(1e-12));

  // Gradient against finite differences too.
  Rng rng(5);
  Tensor z0 = testutil::random_tensor(2, 4, rng, -3.0, 3.0);
  Tensor t0 = testutil::random_tensor(2, 4, rng, 0.0, 1.0);
  CHECK(input_grad_error(z0, [&](Tape& t, Var x) {
          return num::bce_with_logits(x, t0);
        }) < kTol);

  Tensor bad_t = Tensor::from(1, 1, {1.5});
  Tape t3;
  CHECK_THROWS_AS(num::bce_with_logits(t3.input(Tensor(1, 1, 0.0)), bad_t),
                  ConfigError);
}

TEST_CASE("parameter leaves are memoized per tape and accumulate into store") {
  ParamStore store;
  store.add("w", Tensor(2, 2, 3.0));

  Tape tape;
  Var a = tape.param(store, "w");
  Var b = tape.param(store, "w");
  CHECK(a.id == b.id);  // one node, used twice

  // loss = sum(w) + sum(w): each element's gradient is 2.
  Var loss = num::add(num::sum_all(a), num::sum_all(b));
  tape.backward(loss);
  for (size_t i = 0; i < 4; ++i) CHECK(store.grad("w").data()[i] == 2.0);

  // Gradients accumulate across backward calls until zeroed.
  Tape tape2;
  tape2.backward(num::sum_all(tape2.param(store, "w")));
  for (size_t i = 0; i < 4; ++i) CHECK(store.grad("w").data()[i] == 3.0);
  store.zero_grad();
  for (size_t i = 0; i < 4; ++i) CHECK(store.grad("w").data()[i] == 0.0);
}

TEST_CASE("frozen parameters receive no store gradient") {
  ParamStore store;
  store.add("w", Tensor(1, 3, 1.0));
  Tape tape;
  Var w = tape.param(store, "w", /*trainable=*/false);
  tape.backward(num::sum_all(w));
  for (size_t i = 0; i < 3; ++i) CHECK(store.grad("w").data()[i] == 0.0);
  // But the node itself still has a gradient, for downstream ops.
  CHECK(tape.grad(w).data()[0] == 1.0);

  // One tape may not see the same parameter as both frozen and trainable.
  CHECK_THROWS_AS(tape.param(store, "w", /*trainable=*/true), ConfigError);
}

TEST_CASE("tape misuse is rejected with typed errors") {
  Tape tape;
  CHECK_THROWS_AS(tape.backward(Var{}), StateError);

  Var x = tape.input(Tensor(2, 2, 1.0));
  CHECK_THROWS_AS(tape.backward(x), DimensionError);  // non-scalar loss
  CHECK_THROWS_AS(tape.grad(x), StateError);          // before any backward

  Tape other;
  Var y = other.input(Tensor(2, 2, 1.0));
  CHECK_THROWS_AS(num::add(x, y), ConfigError);  // cross-tape mix

  CHECK_THROWS_AS(num::add(x, tape.input(Tensor(2, 3, 0.0))), DimensionError);
  CHECK_THROWS_AS(num::slice_cols(x, 1, 1), DimensionError);
  CHECK_THROWS_AS(num::slice_cols(x, 0, 3), DimensionError);
  CHECK_THROWS_AS(num::diag(tape.input(Tensor(2, 3, 0.0))), DimensionError);
  std::vector<Var> empty;
  CHECK_THROWS_AS(num::concat_cols(empty), ConfigError);
}

TEST_CASE("backward is bitwise deterministic") {
  auto run = [](std::vector<double>& out) {
    Rng rng(0xdead);
    Tensor a0 = testutil::random_tensor(4, 4, rng);
    Tensor b0 = testutil::random_tensor(4, 4, rng);
    Tape tape;
    Var a = tape.input(a0);
    Var b = tape.input(b0);
    Var y = num::softmax_rows(num::matmul(a, num::rownormalize(b)));
    tape.backward(num::mean_all(num::relu(y)));
    const Tensor& ga = tape.grad(a);
    const Tensor& gb = tape.grad(b);
    out.assign(ga.data(), ga.data() + ga.numel());
    out.insert(out.end(), gb.data(), gb.data() + gb.numel());
  };
  std::vector<double> first, second;
  run(first);
  run(second);
  REQUIRE(first.size() == second.size());
  for (size_t i = 0; i < first.size(); ++i) CHECK(first[i] == second[i]);
}
