#include "ssc/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>


namespace ssc {

namespace {

constexpr std::size_t kGradientChunk = 100;

void require_single(const Tensor& x, const char* op) {
  if (x.rank() != 4 || x.dim(0) != 1) {
    throw Error(ErrorKind::ShapeMismatch,
                std::string(op) + ": expected one input [1,C,H,W], got " + shape_str(x.shape()));
  }
}

const Model& gradient_source(const Model& target, const AttackSpec& spec, const Model* substitute) {
  if (spec.threat == ThreatModel::WhiteBox) return target;
  if (substitute == nullptr) {
    throw Error(ErrorKind::InvalidArgument, "black-box attack needs a substitute model");
  }
  return *substitute;
}

double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

}  // namespace

const char* to_string(AttackFamily family) noexcept {
  switch (family) {
    case AttackFamily::Fgsm: return "fgsm";
    case AttackFamily::Jsma: return "jsma";
    case AttackFamily::Boundary: return "boundary";
  }
  return "unknown";
}

const char* to_string(ThreatModel threat) noexcept {
  return threat == ThreatModel::WhiteBox ? "whitebox" : "blackbox";
}

AttackFamily parse_attack_family(std::string_view text) {
  if (text == "fgsm") return AttackFamily::Fgsm;
  if (text == "jsma") return AttackFamily::Jsma;
  if (text == "boundary") return AttackFamily::Boundary;
  throw Error(ErrorKind::Config, "unknown attack '" + std::string(text) + "'");
}

ThreatModel parse_threat_model(std::string_view text) {
  if (text == "whitebox") return ThreatModel::WhiteBox;
  if (text == "blackbox") return ThreatModel::BlackBox;
  throw Error(ErrorKind::Config, "unknown threat model '" + std::string(text) + "'");
}

void AttackSpec::validate() const {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "attack: epsilon must lie in [0,1]");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "attack: gamma must lie in (0,1]");
  }
  if (!(theta > 0.0) || !std::isfinite(theta)) {
    throw Error(ErrorKind::InvalidArgument, "attack: theta must be positive");
  }
  if (max_queries < 1) throw Error(ErrorKind::InvalidArgument, "attack: max_queries must be >= 1");
}

Tensor input_gradient(const Model& model, const Tensor& x, std::span<const int> labels) {
  if (x.rank() != 4 || x.dim(0) != labels.size()) {
    throw Error(ErrorKind::ShapeMismatch, "input_gradient: batch and labels disagree");
  }
  const std::size_t n = x.dim(0);
  std::vector<double> grad;
  grad.reserve(x.numel());
  for (std::size_t begin = 0; begin < n; begin += kGradientChunk) {
    const std::size_t end = std::min(n, begin + kGradientChunk);
    Tensor xb = slice_batch(x.detach(), begin, end);
    xb.set_requires_grad(true);
    const Tensor loss = softmax_cross_entropy(model.forward(xb), labels.subspan(begin, end - begin));
    // the mean over the chunk is undone so each row is its own sample's gradient
    backward(scalar_mul(loss, static_cast<double>(end - begin)));
    const Tensor g = xb.grad_tensor();
    for (double v : g.values()) {
      if (!std::isfinite(v)) throw Error(ErrorKind::NonFinite, "input gradient is not finite");
    }
    grad.insert(grad.end(), g.values().begin(), g.values().end());
  }
  return Tensor(x.shape(), std::move(grad));
}

Tensor logit_jacobian(const Model& model, const Tensor& x) {
  require_single(x, "logit_jacobian");
  Tensor xl = x.clone();
  xl.set_requires_grad(true);
  const Tensor logits = model.forward(xl);
  const std::size_t k = logits.dim(1), d = x.numel();
  std::vector<double> jac;
  jac.reserve(k * d);
  for (std::size_t c = 0; c < k; ++c) {
    xl.zero_grad();
    backward(pick(logits, c));
    const Tensor g = xl.grad_tensor();
    jac.insert(jac.end(), g.values().begin(), g.values().end());
  }
  return Tensor(Shape{k, d}, std::move(jac));
}

std::vector<AdversarialResult> fgsm_batch(const Model& target, const Tensor& x,
                                          std::span<const int> labels, const AttackSpec& spec,
                                          const Model* substitute) {
  spec.validate();
  const Model& source = gradient_source(target, spec, substitute);
  const Tensor step = sign(input_gradient(source, x, labels));
  std::vector<double> adv(x.values().begin(), x.values().end());
  for (std::size_t i = 0; i < adv.size(); ++i) {
    adv[i] = std::clamp(adv[i] + spec.epsilon * step[i], 0.0, 1.0);
  }
  const Tensor x_adv(x.shape(), std::move(adv));
  const auto predicted = predict_labels(target, x_adv);

  const std::size_t n = x.dim(0);
  const std::size_t row = n == 0 ? 0 : x.numel() / n;
  std::vector<AdversarialResult> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t idx[] = {i};
    auto& r = out[i];
    r.x_adv = gather_batch(x_adv, idx);
    r.success = predicted[i] != labels[i];
    r.queries_used = 0;
    r.l2_norm = squared_distance(x.values().subspan(i * row, row), r.x_adv.values());
    for (std::size_t j = 0; j < row; ++j) r.modified_pixels += r.x_adv[j] != x[i * row + j];
  }
  return out;
}

AdversarialResult fgsm(const Model& target, const Tensor& x, int label, const AttackSpec& spec,
                       const Model* substitute) {
  require_single(x, "fgsm");
  const int labels[] = {label};
  return fgsm_batch(target, x, labels, spec, substitute).front();
}

double jsma_saliency(std::span<const double> column, int label, int direction) {
  const double dir = direction > 0 ? 1.0 : -1.0;
  double best_other = -std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < column.size(); ++c) {
    if (static_cast<int>(c) != label) best_other = std::max(best_other, dir * column[c]);
  }
  return -dir * column[static_cast<std::size_t>(label)] + best_other;
}

AdversarialResult jsma(const Model& target, const Tensor& x, int label, const AttackSpec& spec,
                       const Model* substitute) {
  spec.validate();
  require_single(x, "jsma");
  const Model& source = gradient_source(target, spec, substitute);
  const std::size_t d = x.numel();
  const auto budget = static_cast<std::size_t>(std::floor(spec.gamma * static_cast<double>(d)));

  std::vector<double> adv(x.values().begin(), x.values().end());
  std::vector<bool> modified(d, false);
  std::size_t changes = 0;
  auto current = [&] { return Tensor(x.shape(), adv); };
  bool fooled = predict_labels(target, current())[0] != label;

  while (!fooled && changes < budget) {
    const Tensor jac = logit_jacobian(source, current());
    const std::size_t k = jac.dim(0);
    std::vector<double> column(k);
    double best = 0.0;
    std::size_t best_pixel = d;
    int best_dir = 0;
    for (std::size_t p = 0; p < d; ++p) {
      if (modified[p]) continue;
      for (std::size_t c = 0; c < k; ++c) column[c] = jac[c * d + p];
      for (int dir : {+1, -1}) {
        // saturated pixels cannot move further in this direction
        if ((dir > 0 && adv[p] >= 1.0) || (dir < 0 && adv[p] <= 0.0)) continue;
        const double s = jsma_saliency(column, label, dir);
        if (s > best) {
          best = s;
          best_pixel = p;
          best_dir = dir;
        }
      }
    }
    if (best_pixel == d) break;
    adv[best_pixel] = std::clamp(adv[best_pixel] + best_dir * spec.theta, 0.0, 1.0);
    modified[best_pixel] = true;
    ++changes;
    fooled = predict_labels(target, current())[0] != label;
  }

  AdversarialResult r;
  r.x_adv = current();
  r.success = fooled;
  r.l2_norm = squared_distance(x.values(), r.x_adv.values());
  r.modified_pixels = changes;
  return r;
}

int ModelLabelOracle::label(const Tensor& x) {
  require_single(x, "label oracle");
  return predict_labels(model_, x)[0];
}

AdversarialResult boundary_attack(LabelOracle& oracle, const Tensor& x, int label,
                                  const AttackSpec& spec) {
  spec.validate();
  require_single(x, "boundary_attack");
  const std::size_t d = x.numel();
  const auto clean = x.values();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::size_t queries = 0;
  auto adversarial = [&](const std::vector<double>& v) {
    ++queries;
    return oracle.label(Tensor(x.shape(), v)) != label;
  };

  std::vector<double> adv(d);
  bool found = false;
  for (std::size_t draw = 0; draw < kBoundaryInitDraws && queries < spec.max_queries; ++draw) {
    for (double& v : adv) v = uniform(rng);
    if (adversarial(adv)) {
      found = true;
      break;
    }
  }
  if (!found) {
    throw Error(ErrorKind::InitializationFailure,
                "boundary_attack: no misclassified starting point after " + std::to_string(queries) +
                    " draws");
  }

  double l2 = squared_distance(clean, adv);
  AdversarialResult r;
  r.accepted_l2.push_back(l2);

  double orth_step = 0.1, inward_step = 0.1;
  std::size_t orth_trials = 0, orth_hits = 0, inward_trials = 0, inward_hits = 0;
  auto adapt = [](double& step, std::size_t& trials, std::size_t& hits, double hi) {
    if (trials < 10) return;
    const double rate = static_cast<double>(hits) / static_cast<double>(trials);
    if (rate > 0.75) step = std::min(hi, step * 1.5);
    if (rate < 0.25) step = std::max(1e-9, step * 0.5);
    trials = hits = 0;
  };

  std::vector<double> towards(d), pert(d), cand(d);
  while (queries < spec.max_queries && l2 > 0.0) {
    const double dist = std::sqrt(l2);
    for (std::size_t i = 0; i < d; ++i) towards[i] = clean[i] - adv[i];

    // random direction orthogonal to the line back to the clean input
    double along = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      pert[i] = normal(rng);
      along += pert[i] * towards[i];
    }
    double pnorm = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      pert[i] -= along / l2 * towards[i];
      pnorm += pert[i] * pert[i];
    }
    pnorm = std::sqrt(pnorm);

    bool orth_ok = true;
    if (pnorm > 0.0) {
      // step along the sphere of radius dist around the clean input
      double cnorm = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        cand[i] = adv[i] + pert[i] * (orth_step * dist / pnorm);
        cnorm += (clean[i] - cand[i]) * (clean[i] - cand[i]);
      }
      cnorm = std::sqrt(cnorm);
      for (std::size_t i = 0; i < d; ++i) {
        cand[i] = std::clamp(clean[i] - (clean[i] - cand[i]) * (dist / cnorm), 0.0, 1.0);
      }
      orth_ok = adversarial(cand);
      ++orth_trials;
      orth_hits += orth_ok;
    } else {
      cand = adv;  // a single pixel leaves no orthogonal direction
    }
    if (orth_ok && queries < spec.max_queries) {
      for (std::size_t i = 0; i < d; ++i) cand[i] += inward_step * (clean[i] - cand[i]);
      const bool inward_ok = adversarial(cand);
      ++inward_trials;
      inward_hits += inward_ok;
      if (inward_ok) {
        const double next = squared_distance(clean, cand);
        if (next <= l2) {
          adv = cand;
          l2 = next;
          r.accepted_l2.push_back(l2);
        }
      }
    }
    adapt(orth_step, orth_trials, orth_hits, 2.0);
    adapt(inward_step, inward_trials, inward_hits, 0.9);
  }

  r.x_adv = Tensor(x.shape(), adv);
  r.success = true;
  r.queries_used = queries;
  r.l2_norm = l2;
  for (std::size_t i = 0; i < d; ++i) r.modified_pixels += adv[i] != clean[i];
  return r;
}

Model make_substitute(const LabeledDataset& data, const TrainConfig& cfg) {
  TrainConfig sub = cfg;
  sub.seed = cfg.seed + kSubstituteSeedOffset;
  Model model = build_custom_cnn(data.sample_shape(), data.class_count, std::nullopt, sub.seed);
  train(model, data, sub);
  return model;
}

}  // namespace ssc
