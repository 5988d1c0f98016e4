#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "ssc/tensor.hpp"

using namespace ssc;

TEST_SUITE("tensor") {

TEST_CASE("construction and views") {
  Tensor t({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t[4] == 5.0);
  CHECK_THROWS_AS(Tensor({2, 2}, {1, 2, 3}), Error);
  CHECK_THROWS_AS(t.item(), Error);
  CHECK(Tensor::scalar(3.5).item() == 3.5);

  Tensor d = t.detach();
  d.mutable_values()[0] = 9.0;
  CHECK(t[0] == 9.0);  // shared storage
  Tensor c = t.clone();
  c.mutable_values()[0] = -1.0;
  CHECK(t[0] == 9.0);
}

TEST_CASE("conv2d examples") {
  // uniform region under a high-pass kernel
  Tensor ones = Tensor::full({1, 1, 3, 3}, 1.0);
  Kernel lap(Tensor({1, 1, 3, 3}, {-1, -1, -1, -1, 8, -1, -1, -1, -1}));
  const Tensor out = conv2d(ones, lap, 1, 0);
  CHECK(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out[0] == 0.0);

  // ramp with a stride-2 averaging kernel against the loop oracle
  std::vector<double> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[i] = i;
  Tensor x({1, 1, 4, 4}, ramp);
  Kernel avg(Tensor::full({1, 1, 2, 2}, 0.25));
  const Tensor y = conv2d(x, avg, 2, 0);
  Shape oshape;
  const auto expect = oracle::conv2d(x, avg.weights(), 2, 0, &oshape);
  REQUIRE(y.shape() == oshape);
  for (std::size_t i = 0; i < expect.size(); ++i) CHECK(y[i] == doctest::Approx(expect[i]));
  CHECK(y[0] == doctest::Approx(2.5));  // (0+1+4+5)/4

  // identity kernel
  std::mt19937_64 rng(3);
  Tensor r = oracle::random_tensor({2, 1, 5, 4}, rng);
  const Tensor ri = conv2d(r, Kernel(Tensor({1, 1, 1, 1}, {1.0})), 1, 0);
  for (std::size_t i = 0; i < r.numel(); ++i) CHECK(ri[i] == r[i]);
}

TEST_CASE("conv2d errors") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  try {
    conv2d(x, Kernel(Tensor::zeros({1, 2, 5, 5})), 1, 0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DegenerateOutput);
  }
  try {
    conv2d(x, Kernel(Tensor::zeros({1, 3, 2, 2})), 1, 0);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
}

TEST_CASE("conv2d matches the loop oracle on random shapes") {
  std::mt19937_64 rng(11);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = pick(1, 2), c = pick(1, 3), h = pick(3, 8), w = pick(3, 8);
    const std::size_t k = pick(1, std::min(h, w)), stride = pick(1, 3), pad = pick(0, 2);
    Tensor x = oracle::random_tensor({n, c, h, w}, rng);
    Tensor kw = oracle::random_tensor({pick(1, 3), c, k, k}, rng);
    const Tensor y = conv2d(x, Kernel(kw), stride, pad);
    Shape s;
    const auto expect = oracle::conv2d(x, kw, stride, pad, &s);
    REQUIRE(y.shape() == s);
    for (std::size_t i = 0; i < expect.size(); ++i) CHECK(std::fabs(y[i] - expect[i]) <= 1e-10);
  }
}

TEST_CASE("sigmoid examples") {
  const Tensor s = sigmoid(Tensor({3}, {0.0, 40.0, -40.0}));
  CHECK(s[0] == 0.5);
  CHECK(std::fabs(s[1] - 1.0) <= 1e-12);
  CHECK(std::fabs(s[2]) <= 1e-12);
  // symmetric around zero
  const Tensor p = sigmoid(Tensor({1}, {1.7}));
  const Tensor m = sigmoid(Tensor({1}, {-1.7}));
  CHECK(p[0] + m[0] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("dense examples") {
  Tensor x({1, 2}, {1, 1});
  const Tensor y = dense(x, Tensor({2, 1}, {2, 3}), Tensor({1}, {1}));
  CHECK(y.shape() == Shape{1, 1});
  CHECK(y[0] == 6.0);

  Tensor eye({2, 2}, {1, 0, 0, 1});
  Tensor in({3, 2}, {1, 2, 3, 4, 5, 6});
  const Tensor same = dense(in, eye, Tensor::zeros({2}));
  for (std::size_t i = 0; i < 6; ++i) CHECK(same[i] == in[i]);

  const Tensor bias_rows = dense(Tensor::zeros({2, 2}), eye, Tensor({2}, {0.5, -2}));
  CHECK(bias_rows[0] == 0.5);
  CHECK(bias_rows[3] == -2.0);
  CHECK_THROWS_AS(dense(in, Tensor::zeros({3, 2}), Tensor::zeros({2})), Error);
}

TEST_CASE("softmax cross-entropy examples") {
  std::vector<int> label{3};
  const Tensor uniform = softmax_cross_entropy(Tensor::zeros({1, 10}), label);
  CHECK(uniform.item() == doctest::Approx(std::log(10.0)).epsilon(1e-12));

  std::vector<double> margin(10, 0.0);
  margin[3] = 40.0;
  CHECK(softmax_cross_entropy(Tensor({1, 10}, margin), label).item() < 1e-15);

  std::vector<int> two{2};
  const double ref = oracle::cross_entropy({1, 2, 3}, 2);
  CHECK(softmax_cross_entropy(Tensor({1, 3}, {1, 2, 3}), two).item() ==
        doctest::Approx(ref).epsilon(1e-14));

  std::vector<int> bad{5};
  CHECK_THROWS_AS(softmax_cross_entropy(Tensor::zeros({1, 3}), bad), Error);
}

TEST_CASE("backward examples") {
  Tensor x({3}, {1, 2, 3}, true);
  backward(sum(x));
  for (double g : x.grad()) CHECK(g == 1.0);

  Tensor y({3}, {1, 2, 3}, true);
  backward(sum(square(y)));
  CHECK(y.grad()[0] == 2.0);
  CHECK(y.grad()[1] == 4.0);
  CHECK(y.grad()[2] == 6.0);

  CHECK_THROWS_AS(backward(y), Error);  // not a scalar
}

TEST_CASE("leaf gradients accumulate, intermediate ones reset") {
  Tensor x({2}, {1, 3}, true);
  const Tensor sq = square(x);
  backward(pick(sq, 0));
  backward(pick(sq, 1));
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 6.0);
  x.zero_grad();
  CHECK_FALSE(x.has_grad());
}

TEST_CASE("elementwise_mul examples") {
  Tensor a = Tensor::full({1, 3, 2, 2}, 2.0);
  const Tensor half = elementwise_mul(a, Tensor::full({1, 1, 2, 2}, 0.5));
  for (double v : half.values()) CHECK(v == 1.0);
  const Tensor same = elementwise_mul(a, Tensor::full({1, 3, 2, 2}, 1.0));
  for (double v : same.values()) CHECK(v == 2.0);
  const Tensor zero = elementwise_mul(a, Tensor::zeros({1, 3, 2, 2}));
  for (double v : zero.values()) CHECK(v == 0.0);
  CHECK_THROWS_AS(elementwise_mul(a, Tensor::zeros({1, 2, 2, 2})), Error);
}

TEST_CASE("pad_replicate repeats borders") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  const Tensor p = pad_replicate(x, 1);
  CHECK(p.shape() == Shape{1, 1, 4, 4});
  const double expect[] = {1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4};
  for (int i = 0; i < 16; ++i) CHECK(p[i] == expect[i]);
}

TEST_CASE("helpers") {
  const Tensor s = sign(Tensor({3}, {-0.2, 0.0, 5.0}));
  CHECK(s[0] == -1.0);
  CHECK(s[1] == 0.0);
  CHECK(s[2] == 1.0);
  const auto am = argmax_rows(Tensor({2, 3}, {1, 3, 3, 0, 0, 0}));
  CHECK(am[0] == 1);
  CHECK(am[1] == 0);
  const Tensor sm = softmax(Tensor({1, 3}, {1000, 1000, 1000}));
  for (double v : sm.values()) CHECK(v == doctest::Approx(1.0 / 3));
}

TEST_CASE("gradients match central differences") {
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    const auto outcome = gradcheck::run_case(seed);
    INFO(outcome.description);
    CHECK(outcome.worst <= gradcheck::kTolerance);
  }
}

TEST_CASE("relu and abs gradients") {
  Tensor x({4}, {-1.0, 0.0, 0.5, 2.0}, true);
  backward(sum(add(relu(x), abs(x))));
  CHECK(x.grad()[0] == -1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 2.0);
  CHECK(x.grad()[3] == 2.0);
}

}  // TEST_SUITE
