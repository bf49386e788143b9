#include <cmath>
#include <vector>

#include "advdial/tensor.hpp"
#include "doctest.h"

using namespace advdial;

TEST_CASE("softmax basic values") {
  auto t = softmax(Tensor::from({2}, {1.0, 1.0}));
  CHECK(t.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(t.at(1) == doctest::Approx(0.5).epsilon(1e-12));

  auto u = softmax(Tensor::from({2}, {0.0, std::log(3.0)}));
  CHECK(u.at(0) == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(u.at(1) == doctest::Approx(0.75).epsilon(1e-12));

  // large magnitudes must not overflow
  auto v = softmax(Tensor::from({2}, {1000.0, 1000.0}));
  CHECK(v.at(0) == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(std::isfinite(v.at(1)));
}

TEST_CASE("softmax rejects empty input") {
  CHECK_THROWS_WITH_AS(softmax(Tensor()), "EmptyLogits", Error);
}

TEST_CASE("softmax sums to one and is shift invariant") {
  Rng rng(7);
  for (int s = 0; s < 50; ++s) {
    std::size_t n = 1 + rng.uniform_index(8);
    auto logits = Tensor::uniform({n}, rng, -30.0, 30.0);
    auto p = softmax(logits);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      CHECK(p.at(i) >= 0.0);
      total += p.at(i);
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));

    std::vector<double> shifted = logits.values();
    for (double& x : shifted) x += 123.25;
    auto q = softmax(Tensor::from({n}, shifted));
    for (std::size_t i = 0; i < n; ++i)
      CHECK(std::abs(p.at(i) - q.at(i)) <= 1e-9);
  }
}

TEST_CASE("sequence_nll frozen values") {
  // uniform rows over V=4, T=3: loss = 3 ln 4
  auto probs = Tensor::full({3, 4}, 0.25);
  auto loss = sequence_nll(probs, {0, 3, 1});
  CHECK(loss.item() == doctest::Approx(4.1588830833596715).epsilon(1e-12));

  // one-hot rows on the targets: loss = 0
  auto hot = Tensor::from({2, 3}, {0.0, 1.0, 0.0, 0.0, 0.0, 1.0});
  CHECK(sequence_nll(hot, {1, 2}).item() == doctest::Approx(0.0));

  // rows [0.5, 0.25, 0.25] with targets [1, 2]: -ln 0.25 - ln 0.25 = 2 ln 4
  auto rows = Tensor::from({2, 3}, {0.5, 0.25, 0.25, 0.5, 0.25, 0.25});
  CHECK(sequence_nll(rows, {1, 2}).item() ==
        doctest::Approx(2.772588722239781).epsilon(1e-12));
}

TEST_CASE("sequence_nll rejects out-of-vocab targets") {
  auto probs = Tensor::full({2, 4}, 0.25);
  CHECK_THROWS_WITH_AS(sequence_nll(probs, {0, 4}), "TokenOutOfVocab", Error);
  CHECK_THROWS_WITH_AS(sequence_nll(probs, {-1, 0}), "TokenOutOfVocab", Error);
}

TEST_CASE("backward on a product") {
  auto x = Tensor::scalar(2.0, true);
  auto y = Tensor::scalar(3.0, true);
  auto loss = mul(x, y);
  backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(3.0));
  CHECK(y.grad()[0] == doctest::Approx(2.0));
}

TEST_CASE("backward leaves non-ancestors untouched") {
  auto x = Tensor::scalar(2.0, true);
  auto y = Tensor::scalar(3.0, true);
  auto unused = Tensor::scalar(5.0, true);
  backward(mul(x, y));
  CHECK(!unused.has_grad());
}

TEST_CASE("backward requires scalar loss") {
  auto v = Tensor::from({2}, {1.0, 2.0}, true);
  CHECK_THROWS_WITH_AS(backward(v), "NonScalarLoss", Error);
}

TEST_CASE("backward is deterministic") {
  auto run = [] {
    Rng rng(99);
    auto w = Tensor::uniform({4, 3}, rng, -1.0, 1.0, true);
    auto x = Tensor::uniform({3}, rng, -1.0, 1.0, true);
    auto loss = sum(tanh(matvec(w, x)));
    backward(loss);
    std::vector<double> grads = w.grad();
    grads.insert(grads.end(), x.grad().begin(), x.grad().end());
    return grads;
  };
  auto a = run();
  auto b = run();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("softmax + NLL composite matches finite differences") {
  Rng rng(3);
  auto logits = Tensor::uniform({5}, rng, -2.0, 2.0, true);
  auto fn = [&] {
    std::vector<Tensor> rows{softmax(logits), softmax(mul_scalar(logits, 0.5))};
    return sequence_nll(stack_rows(rows), {2, 4});
  };
  double err = finite_difference_check(fn, {logits}, 1e-4);
  CHECK(err <= 1e-5);
}

TEST_CASE("finite_difference_check on a linear function is exact") {
  auto p = Tensor::from({3}, {0.3, -0.7, 1.1}, true);
  auto fn = [&] { return sum(p); };
  CHECK(finite_difference_check(fn, {p}, 1e-4) <= 1e-12);
}

TEST_CASE("finite_difference_check rejects bad epsilon") {
  auto p = Tensor::scalar(1.0, true);
  auto fn = [&] { return sum(p); };
  CHECK_THROWS_WITH_AS(finite_difference_check(fn, {p}, 0.0), "InvalidEpsilon", Error);
}

TEST_CASE("finite_difference_check detects non-determinism") {
  auto p = Tensor::scalar(1.0, true);
  int calls = 0;
  auto fn = [&] {
    ++calls;
    return Tensor::scalar(static_cast<double>(calls));
  };
  CHECK_THROWS_WITH_AS(finite_difference_check(fn, {p}, 1e-4),
                       "NonDeterministicFunction", Error);
}

// Gradient check for every differentiable op on randomized small tensors.
TEST_CASE("all ops pass gradient checks over 100 seeds") {
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    std::size_t n = 2 + rng.uniform_index(4);
    auto a = Tensor::uniform({n}, rng, -1.5, 1.5, true);
    auto b = Tensor::uniform({n}, rng, -1.5, 1.5, true);
    auto w = Tensor::uniform({3, n}, rng, -1.0, 1.0, true);
    std::vector<Tensor> params{a, b, w};
    auto fn = [&] {
      auto h = tanh(matvec(w, a));
      auto s = sigmoid(add(a, b));
      auto m = mul(s, sub(a, mul_scalar(b, 0.7)));
      auto c = concat(h, m);
      auto p = softmax(c);
      auto picked = pick(p, seed % c.size());
      auto e = exp(mul_scalar(mean(m), 0.3));
      auto l = log(add_scalar(mul(s, s), 1.0));
      auto ws = weighted_sum({a, b, m}, softmax(stack_scalars({dot(a, b), sum(l), picked})));
      return add(mean(ws), mul_scalar(e, 0.25));
    };
    double err = finite_difference_check(fn, params, 1e-4);
    CHECK_MESSAGE(err <= 1e-4, "seed ", seed, " err ", err);
  }
}

TEST_CASE("gradient clipping scales to the requested norm") {
  auto p = Tensor::from({2}, {0.0, 0.0}, true);
  auto q = Tensor::from({1}, {0.0}, true);
  backward(mul_scalar(sum(concat(mul_scalar(p, 3.0), mul_scalar(q, 4.0))), 1.0));
  // grads: p = [3,3], q = [4] -> norm sqrt(9+9+16)
  double norm = clip_gradients({p, q}, 1.0);
  CHECK(norm == doctest::Approx(std::sqrt(34.0)));
  CHECK(global_grad_norm({p, q}) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sgd_step applies gradients and zero_grads clears them") {
  auto p = Tensor::from({2}, {1.0, 2.0}, true);
  backward(sum(mul_scalar(p, 2.0)));
  sgd_step({p}, 0.5);
  CHECK(p.at(0) == doctest::Approx(0.0));
  CHECK(p.at(1) == doctest::Approx(1.0));
  zero_grads({p});
  CHECK(!p.has_grad());
}
