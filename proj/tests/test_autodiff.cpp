#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "hdgt/autodiff.hpp"
#include "hdgt/errors.hpp"
#include "hdgt/rng.hpp"
#include "hdgt/tensor.hpp"

using namespace hdgt;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

using LossFn = std::function<Tensor(const std::vector<Tensor>&)>;

// Runs reverse-mode once, then checks every leaf against central differences.
// Returns the worst relative error across all leaves.
double gradcheck(const LossFn& f, std::vector<Tensor> leaves) {
  std::vector<Tensor> ad;
  {
    TapeScope scope;
    for (Tensor& l : leaves) l.requires_grad = true;
    Tensor loss = f(leaves);
    REQUIRE(loss.size() == 1);
    GradientMap gm = scope.tape().backward(loss);
    for (const Tensor& l : leaves) ad.push_back(gm.at(l));
  }
  for (Tensor& l : leaves) {
    l.requires_grad = false;
    l.node = -1;
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    Tensor fd = finite_diff_grad(
        [&](const Tensor& probe) {
          std::vector<Tensor> args = leaves;
          args[i] = probe;
          return f(args).data[0];
        },
        leaves[i]);
    worst = std::max(worst, max_relative_error(ad[i], fd));
  }
  return worst;
}

}  // namespace

TEST_CASE("loss = sum(x) propagates all-ones gradient") {
  Rng rng(1);
  Tensor x = random_tensor({3, 4}, rng);
  x.requires_grad = true;
  TapeScope scope;
  Tensor loss = sum(x);
  GradientMap gm = scope.tape().backward(loss);
  Tensor g = gm.at(x);
  for (double v : g.data) CHECK(v == 1.0);
}

TEST_CASE("loss = sum(x*x)/2 gives gradient x, with duplicate-operand accumulation") {
  Rng rng(2);
  Tensor x = random_tensor({2, 5}, rng);
  x.requires_grad = true;
  TapeScope scope;
  Tensor loss = scale(sum(mul(x, x)), 0.5);
  GradientMap gm = scope.tape().backward(loss);
  Tensor g = gm.at(x);
  for (std::size_t i = 0; i < x.size(); ++i)
    CHECK(g.data[i] == doctest::Approx(x.data[i]).epsilon(1e-14));
}

TEST_CASE("backward rejects non-scalar losses and off-tape losses") {
  Tensor x({2, 2}, {1, 2, 3, 4});
  x.requires_grad = true;
  TapeScope scope;
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(scope.tape().backward(y), UsageError);
  Tensor stray = Tensor::scalar(1.0);
  CHECK_THROWS_AS(scope.tape().backward(stray), UsageError);
}

TEST_CASE("untouched requires_grad tensors receive zero gradient") {
  Tensor x({3}, {1, 2, 3});
  Tensor z({4}, {1, 1, 1, 1});
  x.requires_grad = true;
  z.requires_grad = true;
  TapeScope scope;
  Tensor loss = sum(x);
  GradientMap gm = scope.tape().backward(loss);
  CHECK(gm.contains(x));
  CHECK(!gm.contains(z));
  Tensor gz = gm.at(z);
  REQUIRE(gz.shape == z.shape);
  for (double v : gz.data) CHECK(v == 0.0);
}

TEST_CASE("ops stay off the tape when no scope is active") {
  Tensor x({2}, {1, 2});
  x.requires_grad = true;
  Tensor y = scale(x, 3.0);
  CHECK(y.node == -1);
}

TEST_CASE("finite_diff_grad of sum is all ones") {
  Rng rng(3);
  Tensor x = random_tensor({7}, rng);
  Tensor g = finite_diff_grad([](const Tensor& t) { return hdgt::sum(t).data[0]; }, x);
  for (double v : g.data) CHECK(std::abs(v - 1.0) < 1e-9);
}

TEST_CASE("finite_diff_grad of x^2 at 3 is 6") {
  Tensor x({1}, {3.0});
  Tensor g = finite_diff_grad(
      [](const Tensor& t) { return t.data[0] * t.data[0]; }, x);
  CHECK(std::abs(g.data[0] - 6.0) < 1e-6);
}

TEST_CASE("finite_diff_grad matches analytic softmax cross-entropy gradient") {
  Rng rng(4);
  Tensor logits = random_tensor({1, 6}, rng, -2.0, 2.0);
  const std::size_t target = 2;
  auto nll = [&](const Tensor& t) {
    Tensor p = softmax_rows(t);
    return -std::log(p(0, target));
  };
  Tensor fd = finite_diff_grad(nll, logits);
  Tensor p = softmax_rows(logits);
  Tensor analytic = p;
  analytic(0, target) -= 1.0;
  CHECK(max_relative_error(fd, analytic, 1e-6) < 1e-6);
}

TEST_CASE("every differentiable op matches finite differences over 5 seeds") {
  for (std::uint64_t seed : {10ull, 11ull, 12ull, 13ull, 14ull}) {
    Rng rng(seed);
    CAPTURE(seed);
    {
      Tensor a = random_tensor({3, 4}, rng), b = random_tensor({3, 4}, rng);
      CHECK(gradcheck([](const std::vector<Tensor>& v) { return sum(add(v[0], v[1])); },
                      {a, b}) < 1e-4);
      CHECK(gradcheck([](const std::vector<Tensor>& v) { return sum(sub(v[0], v[1])); },
                      {a, b}) < 1e-4);
      CHECK(gradcheck([](const std::vector<Tensor>& v) { return sum(mul(v[0], v[1])); },
                      {a, b}) < 1e-4);
      CHECK(gradcheck([](const std::vector<Tensor>& v) { return mean(scale(v[0], -1.7)); },
                      {a}) < 1e-4);
      CHECK(gradcheck([](const std::vector<Tensor>& v) { return mse(v[0], v[1]); }, {a, b}) <
            1e-4);
    }
    {
      Tensor x = random_tensor({4, 3}, rng);
      Tensor b = random_tensor({3}, rng);
      CHECK(gradcheck([](const std::vector<Tensor>& v) { return sum(add_bias(v[0], v[1])); },
                      {x, b}) < 1e-4);
    }
    {
      // Keep pre-activations away from the relu kink so central differences
      // stay two-sided.
      Tensor x = random_tensor({4, 4}, rng);
      for (double& v : x.data) v += (v >= 0 ? 0.2 : -0.2);
      CHECK(gradcheck(
                [](const std::vector<Tensor>& v) { return sum(mul(relu(v[0]), v[0])); },
                {x}) < 1e-4);
    }
    {
      Tensor a = random_tensor({3, 5}, rng), b = random_tensor({5, 2}, rng);
      CHECK(gradcheck(
                [](const std::vector<Tensor>& v) { return sum(matmul(v[0], v[1])); },
                {a, b}) < 1e-4);
      CHECK(gradcheck(
                [](const std::vector<Tensor>& v) {
                  return sum(mul(matmul(v[0], v[1]), matmul(v[0], v[1])));
                },
                {a, b}) < 1e-4);
      CHECK(gradcheck(
                [](const std::vector<Tensor>& v) {
                  return sum(matmul(transpose(v[1]), transpose(v[0])));
                },
                {a, b}) < 1e-4);
    }
    {
      Tensor x = random_tensor({2, 6}, rng);
      CHECK(gradcheck(
                [](const std::vector<Tensor>& v) {
                  return sum(mul(reshape(v[0], {3, 4}), reshape(v[0], {3, 4})));
                },
                {x}) < 1e-4);
      CHECK(gradcheck(
                [](const std::vector<Tensor>& v) {
                  Tensor g = gather_rows(v[0], {1, 0, 1});
                  return sum(mul(g, g));
                },
                {x}) < 1e-4);
    }
    {
      Tensor a = random_tensor({2, 3}, rng), b = random_tensor({2, 4}, rng);
      Tensor w = random_tensor({2, 7}, rng);
      CHECK(gradcheck(
                [w](const std::vector<Tensor>& v) {
                  return sum(mul(concat_last(v[0], v[1]), w));
                },
                {a, b}) < 1e-4);
    }
    {
      Tensor x = random_tensor({3, 5}, rng, -2.0, 2.0);
      Tensor probe = random_tensor({3, 5}, rng);
      CHECK(gradcheck(
                [probe](const std::vector<Tensor>& v) {
                  return sum(mul(softmax_rows(v[0]), probe));
                },
                {x}) < 1e-4);
    }
    {
      Tensor x = random_tensor({3, 6}, rng, -2.0, 2.0);
      Tensor gain = random_tensor({6}, rng, 0.5, 1.5);
      Tensor bias = random_tensor({6}, rng, -0.5, 0.5);
      Tensor probe = random_tensor({3, 6}, rng);
      CHECK(gradcheck(
                [probe](const std::vector<Tensor>& v) {
                  return sum(mul(layernorm(v[0], v[1], v[2]), probe));
                },
                {x, gain, bias}) < 1e-4);
    }
    {
      Tensor x = random_tensor({5, 5, 2}, rng);
      Tensor k = random_tensor({3, 3, 2, 3}, rng);
      Tensor probe = random_tensor({5, 5, 3}, rng);
      CHECK(gradcheck(
                [probe](const std::vector<Tensor>& v) {
                  return sum(mul(conv2d(v[0], v[1], 1, 1), probe));
                },
                {x, k}) < 1e-4);
    }
    {
      Tensor x = random_tensor({3, 3, 2}, rng);
      Tensor probe = random_tensor({6, 6, 2}, rng);
      CHECK(gradcheck(
                [probe](const std::vector<Tensor>& v) {
                  return sum(mul(bilinear_upsample(v[0], 2), probe));
                },
                {x}) < 1e-4);
    }
  }
}

TEST_CASE("composed conv2d -> relu -> matmul -> mse matches finite differences") {
  for (std::uint64_t seed : {20ull, 21ull, 22ull, 23ull, 24ull}) {
    Rng rng(seed);
    CAPTURE(seed);
    Tensor x = random_tensor({4, 4, 2}, rng);
    Tensor k = random_tensor({3, 3, 2, 3}, rng);
    Tensor w = random_tensor({3, 2}, rng);
    Tensor target = random_tensor({16, 2}, rng);
    auto loss = [target](const std::vector<Tensor>& v) {
      Tensor y = conv2d(v[0], v[1], 1, 1);          // [4,4,3]
      Tensor flat = reshape(relu(y), {16, 3});      // tokens x channels
      Tensor out = matmul(flat, v[2]);              // [16,2]
      return mse(out, target);
    };
    CHECK(gradcheck(loss, {x, k, w}) < 1e-4);
  }
}

TEST_CASE("nested tape scopes restore the previous tape") {
  CHECK(active_tape() == nullptr);
  {
    TapeScope outer;
    GradTape* first = active_tape();
    CHECK(first == &outer.tape());
    {
      TapeScope inner;
      CHECK(active_tape() == &inner.tape());
      CHECK(active_tape() != first);
    }
    CHECK(active_tape() == first);
  }
  CHECK(active_tape() == nullptr);
}
