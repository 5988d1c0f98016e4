// Acceptance runner: one PASS/FAIL line per criterion with its wall time.
// Exit status is nonzero when any selected criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "oracles.hpp"
#include "ssc/attacks.hpp"
#include "ssc/data_io.hpp"
#include "ssc/experiment.hpp"
#include "ssc/metrics.hpp"

using namespace ssc;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  std::string name;
  double limit_s;
  std::function<Verdict()> run;
};

std::string num(double v, int digits = 4) {
  std::ostringstream os;
  os.precision(digits);
  os << v;
  return os.str();
}

const std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

// Everything trained at the MNIST desk defaults, shared between criteria.
class Lab {
 public:
  explicit Lab(fs::path work) : work_(std::move(work)) {}

  Experiment& mnist() {
    if (!exp_) {
      ExperimentConfig cfg;
      cfg.set("data_dir", (fs::path(SSCLAB_SOURCE_DIR) / "data" / "mnist5k").string());
      cfg.set("out", (work_ / "mnist").string());
      exp_ = std::make_unique<Experiment>(cfg);
    }
    return *exp_;
  }
  const Model& plain(std::uint64_t seed) { return mnist().model(std::nullopt, seed); }
  const Model& selective(std::uint64_t seed, double tk = 0.11) {
    return mnist().model(mnist().defense_config(DefenseMode::Selective, "sobel_pair", tk), seed);
  }
  const fs::path& work() const { return work_; }

 private:
  fs::path work_;
  std::unique_ptr<Experiment> exp_;
};

AttackSpec fgsm_spec(double eps, ThreatModel threat = ThreatModel::WhiteBox) {
  AttackSpec s;
  s.family = AttackFamily::Fgsm;
  s.epsilon = eps;
  s.threat = threat;
  return s;
}

// ---- 1 ---------------------------------------------------------------------

Verdict gradients() {
  double worst = 0.0;
  std::string where;
  int failures = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto o = gradcheck::run_case(seed);
    if (o.worst > worst) {
      worst = o.worst;
      where = o.description;
    }
    failures += !(o.worst <= gradcheck::kTolerance);
  }
  return {failures == 0, "20 cases, worst relative error " + num(worst) + " (" + where + ")"};
}

// ---- 2 ---------------------------------------------------------------------

Verdict convolution() {
  std::mt19937_64 rng(2024);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  double worst = 0.0;
  bool shapes_ok = true;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = pick(1, 2), c = pick(1, 3), h = pick(1, 8), w = pick(1, 8);
    const std::size_t pad = pick(0, 2);
    const std::size_t kh = pick(1, std::min<std::size_t>(h + 2 * pad, 5));
    const std::size_t stride = pick(1, 3);
    const Tensor x = oracle::random_tensor({n, c, h, w}, rng);
    const Tensor kw = oracle::random_tensor({pick(1, 3), c, kh, std::min(kh, w + 2 * pad)}, rng);
    const Tensor y = conv2d(x, Kernel(kw), stride, pad);
    Shape s;
    const auto expect = oracle::conv2d(x, kw, stride, pad, &s);
    shapes_ok &= y.shape() == s;
    for (std::size_t i = 0; i < expect.size() && i < y.numel(); ++i)
      worst = std::max(worst, std::fabs(y[i] - expect[i]));
  }
  return {shapes_ok && worst <= 1e-10, "100 cases, max |diff| " + num(worst)};
}

// ---- 3 ---------------------------------------------------------------------

Verdict ssc_semantics() {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t nonzero = 0, constant_cases = 0;
  for (const auto& f : filter_bank()) {
    if (f.id == "identity") continue;  // not a high-pass filter
    for (std::size_t c : {1, 3}) {
      for (int trial = 0; trial < 20; ++trial) {
        const double gray = trial == 0 ? 0.0 : trial == 1 ? 1.0 : u(rng);
        const std::size_t h = 1 + static_cast<std::size_t>(u(rng) * 9);
        const std::size_t w = 1 + static_cast<std::size_t>(u(rng) * 9);
        SscConfig cfg;
        cfg.filter_id = f.id;
        cfg.threshold_tk = trial < 5 ? std::pow(10.0, -trial - 1.0) : std::max(1e-12, u(rng));
        cfg.steepness_k = 1.0 + 2000.0 * u(rng);
        const Tensor out = ssc_forward(Tensor::full({2, c, h, w}, gray), cfg);
        for (double v : out.values()) nonzero += v != 0.0;
        ++constant_cases;
      }
    }
  }

  std::size_t not_half = 0;
  for (int trial = 0; trial < 200; ++trial) {
    SscConfig cfg;
    cfg.threshold_tk = trial == 0 ? 0.11 : u(rng);
    cfg.steepness_k = trial == 0 ? 1000.0 : 1.0 + 5000.0 * u(rng);
    if (cfg.threshold_tk == 0.0) continue;
    const auto s = select_edges(EdgeMap{Tensor::full({1, 1, 3, 3}, cfg.threshold_tk)}, cfg);
    for (double v : s.values.values()) not_half += v != 0.5;
  }

  std::size_t violations = 0;
  for (int trial = 0; trial < 100; ++trial) {
    SscConfig cfg;
    cfg.threshold_tk = u(rng);
    cfg.steepness_k = 1.0 + 2000.0 * u(rng);
    std::vector<double> lo(64), hi(64);
    for (std::size_t i = 0; i < 64; ++i) {
      lo[i] = u(rng) < 0.2 ? 0.0 : u(rng);
      hi[i] = std::min(1.0, lo[i] + (u(rng) < 0.3 ? 0.0 : 0.5 * u(rng)));
    }
    const auto a = select_edges(EdgeMap{Tensor({1, 1, 8, 8}, lo)}, cfg);
    const auto b = select_edges(EdgeMap{Tensor({1, 1, 8, 8}, hi)}, cfg);
    for (std::size_t i = 0; i < 64; ++i) violations += a.values[i] > b.values[i];
  }
  return {nonzero == 0 && not_half == 0 && violations == 0,
          std::to_string(constant_cases) + " constant images, " + std::to_string(nonzero) +
              " nonzero outputs; " + std::to_string(not_half) + " gates != 0.5 at E=t_k; " +
              std::to_string(violations) + " monotonicity violations"};
}

// ---- 4 ---------------------------------------------------------------------

Verdict fgsm_invariants(Lab& lab) {
  const Model& m = lab.plain(1);
  const auto& data = lab.mnist().eval_data();
  const std::size_t d = data.images.numel() / data.size();
  bool identity = true, bounded = true, monotone = true;
  double prev = -1.0;
  std::string rates;
  for (double eps : {0.0, 0.1, 0.2, 0.3}) {
    const auto res = fgsm_batch(m, data.images, data.labels, fgsm_spec(eps));
    for (std::size_t i = 0; i < res.size(); ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double x = data.images[i * d + j], v = res[i].x_adv[j];
        if (eps == 0.0) identity &= v == x;
        // one rounding of x + eps may overshoot by an ulp
        bounded &= std::fabs(v - x) <= eps + 1e-15 && v >= 0.0 && v <= 1.0;
      }
    }
    const double rate = attack_success_rate(res);
    monotone &= rate >= prev;
    prev = rate;
    rates += (rates.empty() ? "" : " ") + num(rate);
  }
  return {identity && bounded && monotone,
          std::string("identity ") + (identity ? "ok" : "broken") + ", linf " +
              (bounded ? "ok" : "exceeded") + ", success over eps {0,.1,.2,.3}: " + rates};
}

// ---- 5 ---------------------------------------------------------------------

Verdict robustness_trend(Lab& lab) {
  int hits = 0;
  std::string detail;
  for (std::uint64_t seed : kSeeds) {
    const EvalReport p = lab.mnist().evaluate(lab.plain(seed), fgsm_spec(0.3), nullptr);
    const EvalReport s = lab.mnist().evaluate(lab.selective(seed), fgsm_spec(0.3), nullptr);
    const double gain = s.perturbed_accuracy - p.perturbed_accuracy;
    const double drop = p.clean_accuracy - s.clean_accuracy;
    const bool ok = gain >= 0.10 && drop <= 0.10;
    hits += ok;
    detail += " s" + std::to_string(seed) + "[pert " + num(p.perturbed_accuracy, 3) + "->" +
              num(s.perturbed_accuracy, 3) + ", clean " + num(p.clean_accuracy, 3) + "->" +
              num(s.clean_accuracy, 3) + (ok ? "]" : " miss]");
  }
  return {hits >= 4, std::to_string(hits) + "/5 seeds:" + detail};
}

// ---- 6 ---------------------------------------------------------------------

Verdict transfer_ordering(Lab& lab) {
  int hits = 0;
  std::string detail;
  double min_sub = 1.0;
  for (std::uint64_t seed : kSeeds) {
    const Model& target = lab.plain(seed);
    const Model& sub = lab.mnist().substitute(seed);
    min_sub = std::min(min_sub, accuracy(sub, lab.mnist().eval_data()));
    const EvalReport wb = lab.mnist().evaluate(target, fgsm_spec(0.3), nullptr);
    const EvalReport bb = lab.mnist().evaluate(target, fgsm_spec(0.3, ThreatModel::BlackBox), &sub);
    const bool ok = bb.attack_success_rate <= wb.attack_success_rate;
    hits += ok;
    detail += " s" + std::to_string(seed) + "[bb " + num(bb.attack_success_rate, 3) + " wb " +
              num(wb.attack_success_rate, 3) + (ok ? "]" : " miss]");
  }
  return {hits >= 4, std::to_string(hits) + "/5 seeds:" + detail +
                         "; lowest substitute clean accuracy " + num(min_sub, 3)};
}

// ---- 7 ---------------------------------------------------------------------

Verdict jsma_invariants(Lab& lab) {
  const Model& m = lab.plain(1);
  const auto& data = lab.mnist().eval_data();
  const std::size_t d = data.images.numel() / data.size();
  AttackSpec spec;
  spec.family = AttackFamily::Jsma;
  std::size_t over_budget = 0, attacked = 0, flipped = 0;
  for (std::size_t i = 0; i < 10; ++i) {
    const std::size_t one[] = {i};
    const Tensor x = gather_batch(data.images, one);
    const auto r = jsma(m, x, data.labels[i], spec);
    std::size_t changed = 0;
    for (std::size_t j = 0; j < d; ++j) changed += r.x_adv[j] != x[j];
    over_budget += static_cast<double>(std::max(changed, r.modified_pixels)) >
                   spec.gamma * static_cast<double>(d);
    flipped += r.success;
    ++attacked;
  }

  std::mt19937_64 rng(7);
  std::size_t mismatches = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 2 + static_cast<std::size_t>(trial % 2);
    const Tensor w = oracle::random_tensor({4, k}, rng);
    const Tensor b = oracle::random_tensor({k}, rng, -0.1, 0.1);
    const Model lin = build_linear({1, 2, 2}, w, b);
    Tensor x = oracle::random_tensor({1, 1, 2, 2}, rng, 0, 1);
    if (trial % 5 == 0) x.mutable_values()[trial % 4] = trial % 2 ? 1.0 : 0.0;
    const int label = predict_labels(lin, x)[0];
    const auto move = oracle::jsma_first_move(w, k, x, label);
    AttackSpec s;
    s.family = AttackFamily::Jsma;
    s.gamma = 0.25;  // one pixel
    s.theta = 0.3;
    const auto r = jsma(lin, x, label, s);
    for (std::size_t p = 0; p < 4; ++p) {
      const double expect =
          p == move.pixel ? std::clamp(x[p] + move.direction * s.theta, 0.0, 1.0) : x[p];
      mismatches += r.x_adv[p] != expect;
    }
  }
  return {over_budget == 0 && mismatches == 0,
          std::to_string(over_budget) + "/" + std::to_string(attacked) +
              " MNIST samples over budget (" + std::to_string(flipped) + " flipped); " +
              std::to_string(mismatches) + " pixel mismatches vs exhaustive saliency on 50 linear models"};
}

// ---- 8 ---------------------------------------------------------------------

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

bool non_increasing(const std::vector<double>& trace) {
  for (std::size_t i = 1; i < trace.size(); ++i)
    if (trace[i] > trace[i - 1]) return false;
  return !trace.empty();
}

Verdict boundary_invariants(Lab& lab) {
  // class 1 iff x0 + x1 > 1; squared distance from (0.2, 0.3) is 0.125
  const Model line = build_linear({1, 1, 2}, Tensor({2, 2}, {0, 1, 0, 1}), Tensor({2}, {0, -1}));
  ModelLabelOracle inner(line);
  const Tensor x({1, 1, 1, 2}, {0.2, 0.3});
  const double analytic = 0.125;
  bool counted = true, traces = true, close = true;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    CountingOracle oracle(inner);
    AttackSpec s;
    s.family = AttackFamily::Boundary;
    s.max_queries = 5000;
    s.seed = seed;
    const auto r = boundary_attack(oracle, x, 0, s);
    counted &= oracle.calls == r.queries_used && r.queries_used <= 5000;
    traces &= non_increasing(r.accepted_l2) && r.l2_norm == r.accepted_l2.back();
    const double rel = std::fabs(r.l2_norm - analytic) / analytic;
    worst = std::max(worst, rel);
    close &= r.success && rel <= 0.10;
  }

  // traces on real digits
  const Model& m = lab.plain(1);
  ModelLabelOracle digits(m);
  const auto& data = lab.mnist().eval_data();
  for (std::size_t i = 0; i < 3; ++i) {
    const std::size_t one[] = {i};
    CountingOracle oracle(digits);
    AttackSpec s;
    s.family = AttackFamily::Boundary;
    s.max_queries = 1000;
    s.seed = 100 + i;
    try {
      const auto r = boundary_attack(oracle, gather_batch(data.images, one), data.labels[i], s);
      counted &= oracle.calls == r.queries_used && r.queries_used <= 1000;
      traces &= non_increasing(r.accepted_l2);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::InitializationFailure) throw;
      counted &= oracle.calls <= 1000;
    }
  }
  return {counted && traces && close,
          std::string("query counter ") + (counted ? "matches" : "MISMATCH") + ", traces " +
              (traces ? "non-increasing" : "INCREASE") + ", worst line-distance error " +
              num(100.0 * worst, 3) + "%"};
}

// ---- 9 ---------------------------------------------------------------------

Verdict boundary_trend(Lab& lab) {
  const auto cmp = run_boundary_comparison(lab.mnist(), 10);
  write_text(lab.work() / "boundary_compare.csv", boundary_csv(cmp));
  const std::size_t ok = cmp.rows.size() - cmp.init_failures;
  return {ok > 0 && cmp.ratio >= 1.5,
          "mean l2 undefended " + num(cmp.mean_undefended) + ", defended " +
              num(cmp.mean_defended) + ", ratio " + num(cmp.ratio) + " over " +
              std::to_string(ok) + " images (" + std::to_string(cmp.init_failures) +
              " init failures)"};
}

// ---- 10 --------------------------------------------------------------------

Verdict threshold_shape(Lab& lab) {
  const std::vector<double> tks{0.0, 0.11, 0.2, 0.4};
  const auto rows = run_threshold_sweep(lab.mnist(), tks);
  write_text(lab.work() / "threshold_sweep.csv", sweep_csv(rows));
  bool clean_ok = true;
  double running_min = rows.front().clean_accuracy;
  std::string detail;
  for (const auto& r : rows) {
    clean_ok &= r.clean_accuracy <= running_min + 0.02;
    running_min = std::min(running_min, r.clean_accuracy);
    detail += " tk" + num(r.tk, 2) + "[clean " + num(r.clean_accuracy, 3) + " pert " +
              num(r.perturbed_accuracy, 3) + "]";
  }
  const bool pert_ok = rows[1].perturbed_accuracy > rows[0].perturbed_accuracy;
  const double plain_clean = accuracy(lab.plain(lab.mnist().config().seed), lab.mnist().eval_data());
  return {clean_ok && pert_ok, detail + "; mask-free clean " + num(plain_clean, 3)};
}

// ---- 11 --------------------------------------------------------------------

std::vector<std::uint8_t> file_bytes(const fs::path& p) {
  const std::string s = read_text(p);
  return {s.begin(), s.end()};
}

Verdict determinism(Lab& lab) {
  struct Run {
    std::vector<std::uint8_t> model, batch;
    std::string csv;
  };
  auto once = [&](const std::string& tag) {
    const fs::path dir = lab.work() / ("determinism_" + tag);
    fs::remove_all(dir);
    ExperimentConfig cfg;
    cfg.set("data_dir", (fs::path(SSCLAB_SOURCE_DIR) / "data" / "mnist5k").string());
    cfg.set("train_size", "300");
    cfg.set("eval_size", "100");
    cfg.set("epochs", "2");
    cfg.set("out", dir.string());
    Experiment exp(cfg);
    const Model& m = exp.model(exp.defense_config(DefenseMode::Selective, "sobel_pair", 0.11), 1);
    save_model(m, dir / "model.sscm");
    const AttackRun run = exp.attack(m, fgsm_spec(0.3), nullptr);
    std::vector<Tensor> advs;
    for (const auto& r : run.results) advs.push_back(r.x_adv);
    ImageBatch batch{stack(advs), {}};
    for (std::size_t id : run.ids) batch.labels.push_back(exp.eval_data().labels[id]);
    save_batch(dir / "adversarial.sscb", batch);
    write_text(dir / "report.csv", report_to_csv(run.report));
    return Run{file_bytes(dir / "model.sscm"), file_bytes(dir / "adversarial.sscb"),
               read_text(dir / "report.csv")};
  };
  const Run a = once("a"), b = once("b");
  const bool same = a.model == b.model && a.batch == b.batch && a.csv == b.csv;

  const fs::path dir = lab.work() / "determinism_a";
  const Model loaded = load_model(dir / "model.sscm");
  const bool model_rt = serialize_model(loaded) == a.model;
  const ImageBatch batch = load_batch(dir / "adversarial.sscb");
  const bool batch_rt = encode_batch(batch) == a.batch;
  return {same && model_rt && batch_rt,
          std::string("repeat runs ") + (same ? "byte-identical" : "DIFFER") + ", model round-trip " +
              (model_rt ? "exact" : "DIFFERS") + ", batch round-trip " + (batch_rt ? "exact" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ssclab acceptance suite"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  bool keep = false;
  app.add_option("--work", work, "scratch directory for trained models and outputs");
  app.add_option("--only", only, "criterion numbers to run");
  app.add_flag("--keep", keep, "reuse models cached in the scratch directory");
  CLI11_PARSE(app, argc, argv);

  if (!keep) fs::remove_all(work);
  fs::create_directories(work);
  Lab lab{fs::path(work)};

  const std::vector<Criterion> criteria{
      {1, "gradient correctness", 60, gradients},
      {2, "convolution oracle", 10, convolution},
      {3, "SSC semantics", 10, ssc_semantics},
      {4, "FGSM invariants", 300, [&] { return fgsm_invariants(lab); }},
      {5, "robustness trend", 900, [&] { return robustness_trend(lab); }},
      {6, "black-box vs white-box", 600, [&] { return transfer_ordering(lab); }},
      {7, "JSMA invariants", 120, [&] { return jsma_invariants(lab); }},
      {8, "boundary attack", 120, [&] { return boundary_invariants(lab); }},
      {9, "boundary-norm trend", 1200, [&] { return boundary_trend(lab); }},
      {10, "threshold sweep shape", 1200, [&] { return threshold_shape(lab); }},
      {11, "determinism and persistence", 120, [&] { return determinism(lab); }},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_time = secs < c.limit_s;
    const bool pass = v.pass && in_time;
    failed += !pass;
    std::printf("%s %2d %-28s %8.1fs (limit %.0fs%s)  %s\n", pass ? "PASS" : "FAIL", c.id,
                c.name.c_str(), secs, c.limit_s, in_time ? "" : ", exceeded", v.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
