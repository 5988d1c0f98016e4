#include <doctest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "ssc/attacks.hpp"
#include "ssc/metrics.hpp"

using namespace ssc;

namespace {

// Two classes over x in [0,1]^2: class 1 iff x0 + x1 > 1.
Model line_classifier() {
  return build_linear({1, 1, 2}, Tensor({2, 2}, {0, 1, 0, 1}), Tensor({2}, {0, -1}));
}

class CountingOracle final : public LabelOracle {
 public:
  explicit CountingOracle(LabelOracle& inner) : inner_(inner) {}
  int label(const Tensor& x) override {
    ++calls;
    return inner_.label(x);
  }
  std::size_t calls = 0;

 private:
  LabelOracle& inner_;
};

class ConstantOracle final : public LabelOracle {
 public:
  explicit ConstantOracle(int l) : l_(l) {}
  int label(const Tensor&) override { return l_; }

 private:
  int l_;
};

AttackSpec spec_of(AttackFamily f) {
  AttackSpec s;
  s.family = f;
  return s;
}

// Small trained CNN on the synthetic two-class set.
struct Toy {
  LabeledDataset data = synthetic_blob_stripes(64, 28, 11);
  Model model = build_custom_cnn(data.sample_shape(), 2, std::nullopt, 11);
  Toy() {
    TrainConfig cfg;
    cfg.epochs = 3;
    cfg.batch_size = 16;
    cfg.seed = 11;
    train(model, data, cfg);
  }
};

const Toy& toy() {
  static const Toy t;
  return t;
}

}  // namespace

TEST_SUITE("attacks") {

TEST_CASE("one-pixel logistic FGSM step") {
  // logits [0, x]: binary logistic with weight 1 and bias 0
  const Model m = build_linear({1, 1, 1}, Tensor({1, 2}, {0, 1}), Tensor({2}, {0, 0}));
  AttackSpec s = spec_of(AttackFamily::Fgsm);
  s.epsilon = 0.3;
  const auto r = fgsm(m, Tensor({1, 1, 1, 1}, {0.5}), 0, s);
  CHECK(r.x_adv[0] == doctest::Approx(0.8).epsilon(1e-15));
  CHECK(r.success);  // x = 0.8 favours class 1
  CHECK(r.l2_norm == doctest::Approx(0.09));

  // closed-form gradient of the cross-entropy: sigmoid(x) for label 0
  const int label[] = {0};
  const Tensor g = input_gradient(m, Tensor({1, 1, 1, 1}, {0.5}), label);
  CHECK(g[0] == doctest::Approx(1.0 / (1.0 + std::exp(-0.5))).epsilon(1e-12));
}

TEST_CASE("FGSM invariants") {
  const Toy& t = toy();
  const Tensor x = slice_batch(t.data.images, 0, 20);
  const std::span<const int> labels(t.data.labels.data(), 20);
  const auto clean = predict_labels(t.model, x);

  AttackSpec zero = spec_of(AttackFamily::Fgsm);
  zero.epsilon = 0.0;
  const auto same = fgsm_batch(t.model, x, labels, zero);
  for (std::size_t i = 0; i < same.size(); ++i) {
    for (std::size_t j = 0; j < same[i].x_adv.numel(); ++j) {
      CHECK(same[i].x_adv[j] == x[i * 784 + j]);
    }
    CHECK(same[i].success == (clean[i] != labels[i]));
    CHECK(same[i].l2_norm == 0.0);
  }

  for (double eps : {0.05, 0.1, 0.3}) {
    AttackSpec s = spec_of(AttackFamily::Fgsm);
    s.epsilon = eps;
    const auto res = fgsm_batch(t.model, x, labels, s);
    for (std::size_t i = 0; i < res.size(); ++i) {
      for (std::size_t j = 0; j < 784; ++j) {
        const double v = res[i].x_adv[j];
        CHECK(v >= 0.0);
        CHECK(v <= 1.0);
        CHECK(std::fabs(v - x[i * 784 + j]) <= eps + 1e-15);
      }
    }
    // a batch attack equals attacking each sample on its own
    const std::size_t one[] = {3};
    const auto single = fgsm(t.model, gather_batch(x, one), labels[3], s);
    CHECK(std::equal(single.x_adv.values().begin(), single.x_adv.values().end(),
                     res[3].x_adv.values().begin()));
  }

  AttackSpec bad = spec_of(AttackFamily::Fgsm);
  bad.epsilon = 1.5;
  CHECK_THROWS_AS(fgsm_batch(t.model, x, labels, bad), Error);
  AttackSpec black = spec_of(AttackFamily::Fgsm);
  black.threat = ThreatModel::BlackBox;
  CHECK_THROWS_AS(fgsm_batch(t.model, x, labels, black), Error);
}

TEST_CASE("substitute and black-box transfer") {
  const Toy& t = toy();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 11;
  const Model sub = make_substitute(t.data, cfg);
  CHECK_FALSE(sub.ssc_config().has_value());
  const auto ps = sub.parameters(), pt = t.model.parameters();
  bool differs = false;
  for (std::size_t j = 0; j < ps[0].numel(); ++j) differs |= ps[0][j] != pt[0][j];
  CHECK(differs);

  AttackSpec s = spec_of(AttackFamily::Fgsm);
  s.threat = ThreatModel::BlackBox;
  s.epsilon = 0.0;
  const auto res = fgsm_batch(t.model, t.data.images, t.data.labels, s, &sub);
  CHECK(attack_success_rate(res) == doctest::Approx(1.0 - accuracy(t.model, t.data)));
}

TEST_CASE("logit Jacobian of a linear model is its weight matrix") {
  std::mt19937_64 rng(3);
  const Tensor w = oracle::random_tensor({4, 3}, rng);
  const Model m = build_linear({1, 2, 2}, w, oracle::random_tensor({3}, rng));
  const Tensor jac = logit_jacobian(m, oracle::random_tensor({1, 1, 2, 2}, rng, 0, 1));
  REQUIRE(jac.shape() == Shape{3, 4});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < 4; ++p) CHECK(jac[c * 4 + p] == doctest::Approx(w[p * 3 + c]));
}

TEST_CASE("input gradient through the selective layer matches central differences") {
  std::mt19937_64 rng(17);
  SscConfig ssc;
  ssc.steepness_k = 3.0;
  ssc.threshold_tk = 0.2;
  const Model m = build_linear({1, 6, 6}, oracle::random_tensor({36, 3}, rng),
                               oracle::random_tensor({3}, rng), ssc);
  Tensor x = oracle::random_tensor({2, 1, 6, 6}, rng, 0, 1);
  const int labels[] = {0, 2};
  const Tensor g = input_gradient(m, x, labels);
  const auto numeric = oracle::numeric_gradient(
      x, [&] { return 2.0 * softmax_cross_entropy(m.forward(x), labels).item(); }, 1e-3);
  CHECK(oracle::relative_error(g.values(), numeric) <= 1e-4);
}

TEST_CASE("JSMA saliency") {
  const double col[] = {0.5, -1.0, 2.0};
  // raise pixel: -J[y] + max_{c != y} J[c]
  CHECK(jsma_saliency(col, 0, +1) == doctest::Approx(-0.5 + 2.0));
  // lower pixel: J[y] + max_{c != y} (-J[c])
  CHECK(jsma_saliency(col, 0, -1) == doctest::Approx(0.5 + 1.0));
  CHECK(jsma_saliency(col, 2, +1) == doctest::Approx(-2.0 + 0.5));
}

TEST_CASE("JSMA first pixel matches the exhaustive saliency oracle") {
  std::mt19937_64 rng(41);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t d = 4, k = (trial % 2) ? 3 : 2;
    const Tensor w = oracle::random_tensor({d, k}, rng);
    const Tensor b = oracle::random_tensor({k}, rng, -0.1, 0.1);
    const Model m = build_linear({1, 2, 2}, w, b);
    Tensor x = oracle::random_tensor({1, 1, 2, 2}, rng, 0, 1);
    if (trial % 4 == 0) x.mutable_values()[1] = 1.0;  // saturated pixel
    const int label = predict_labels(m, x)[0];

    const auto best = oracle::jsma_first_move(w, k, x, label);
    AttackSpec s = spec_of(AttackFamily::Jsma);
    s.gamma = 0.25;  // exactly one pixel may change
    s.theta = 0.3;
    const auto r = jsma(m, x, label, s);
    CHECK(r.modified_pixels <= 1);
    for (std::size_t p = 0; p < d; ++p) {
      const double expect =
          p == best.pixel ? std::clamp(x[p] + best.direction * 0.3, 0.0, 1.0) : x[p];
      CHECK(r.x_adv[p] == expect);
    }
  }
}

TEST_CASE("JSMA budget") {
  const Toy& t = toy();
  const std::size_t one[] = {0};
  const Tensor x = gather_batch(t.data.images, one);
  const int label = t.data.labels[0];
  AttackSpec none = spec_of(AttackFamily::Jsma);
  none.gamma = 1.0 / 1000.0;  // floor(gamma * 784) = 0
  if (predict_labels(t.model, x)[0] == label) {
    const auto r = jsma(t.model, x, label, none);
    CHECK_FALSE(r.success);
    CHECK(r.modified_pixels == 0);
    CHECK(std::equal(r.x_adv.values().begin(), r.x_adv.values().end(), x.values().begin()));
  }
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t idx[] = {i};
    const Tensor xi = gather_batch(t.data.images, idx);
    AttackSpec s = spec_of(AttackFamily::Jsma);
    s.gamma = 0.02;
    const auto r = jsma(t.model, xi, t.data.labels[i], s);
    std::size_t changed = 0;
    for (std::size_t j = 0; j < 784; ++j) changed += r.x_adv[j] != xi[j];
    CHECK(changed <= r.modified_pixels);
    CHECK(static_cast<double>(r.modified_pixels) / 784.0 <= s.gamma);
  }
}

TEST_CASE("boundary attack on a line reaches the analytic distance") {
  const Model m = line_classifier();
  ModelLabelOracle inner(m);
  const Tensor x({1, 1, 1, 2}, {0.2, 0.3});
  REQUIRE(inner.label(x) == 0);
  // squared distance from x to the line x0 + x1 = 1
  const double analytic = std::pow(1.0 - 0.5, 2) / 2.0;
  for (std::uint64_t seed : {1, 2, 3}) {
    CountingOracle oracle(inner);
    AttackSpec s = spec_of(AttackFamily::Boundary);
    s.max_queries = 5000;
    s.seed = seed;
    const auto r = boundary_attack(oracle, x, 0, s);
    CHECK(r.success);
    CHECK(oracle.calls == r.queries_used);
    CHECK(r.queries_used <= 5000);
    CHECK(r.l2_norm == doctest::Approx(analytic).epsilon(0.10));
    CHECK(inner.label(r.x_adv) == 1);
    REQUIRE_FALSE(r.accepted_l2.empty());
    for (std::size_t i = 1; i < r.accepted_l2.size(); ++i) {
      CHECK(r.accepted_l2[i] <= r.accepted_l2[i - 1]);
    }
    CHECK(r.l2_norm <= r.accepted_l2.front());
    CHECK(r.l2_norm == r.accepted_l2.back());
  }
}

TEST_CASE("boundary attack budget and failures") {
  const Model m = line_classifier();
  ModelLabelOracle inner(m);
  const Tensor x({1, 1, 1, 2}, {0.2, 0.3});
  for (std::size_t budget : {1, 2, 7, 100}) {
    CountingOracle oracle(inner);
    AttackSpec s = spec_of(AttackFamily::Boundary);
    s.max_queries = budget;
    s.seed = 5;
    try {
      const auto r = boundary_attack(oracle, x, 0, s);
      CHECK(r.queries_used <= budget);
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InitializationFailure);
    }
    CHECK(oracle.calls <= budget);
  }

  ConstantOracle never(0);
  CountingOracle counted(never);
  try {
    boundary_attack(counted, x, 0, spec_of(AttackFamily::Boundary));
    FAIL("expected an initialization failure");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InitializationFailure);
  }
  CHECK(counted.calls == kBoundaryInitDraws);

  // a single pixel still terminates
  const Model one = build_linear({1, 1, 1}, Tensor({1, 2}, {0, 1}), Tensor({2}, {0, -0.5}));
  ModelLabelOracle o1(one);
  AttackSpec s = spec_of(AttackFamily::Boundary);
  s.max_queries = 300;
  const auto r = boundary_attack(o1, Tensor({1, 1, 1, 1}, {0.1}), 0, s);
  CHECK(r.queries_used <= 300);
  CHECK(r.l2_norm == doctest::Approx(0.16).epsilon(0.05));
}

TEST_CASE("attack option parsing") {
  CHECK(parse_attack_family("fgsm") == AttackFamily::Fgsm);
  CHECK(parse_attack_family("jsma") == AttackFamily::Jsma);
  CHECK(parse_attack_family("boundary") == AttackFamily::Boundary);
  CHECK(parse_threat_model("blackbox") == ThreatModel::BlackBox);
  CHECK_THROWS_AS(parse_attack_family("cw"), Error);
  AttackSpec s;
  s.gamma = 0.0;
  CHECK_THROWS_AS(s.validate(), Error);
  s = AttackSpec{};
  s.max_queries = 0;
  CHECK_THROWS_AS(s.validate(), Error);
}

}  // TEST_SUITE
