#include "ssc/metrics.hpp"

#include <json.hpp>

#include <charconv>
#include <cstdio>
#include <sstream>

namespace ssc {

namespace {

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

void require_unit_interval(double v, const char* field) {
  if (!(v >= 0.0 && v <= 1.0)) {
    throw Error(ErrorKind::OutOfRange, std::string("report: ") + field + " outside [0,1]");
  }
}

}  // namespace

double l2_perturbation_norm(const Tensor& clean, const Tensor& adv) {
  if (clean.shape() != adv.shape()) {
    throw Error(ErrorKind::ShapeMismatch, "l2_perturbation_norm: " + shape_str(clean.shape()) +
                                              " vs " + shape_str(adv.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < clean.numel(); ++i) {
    const double diff = clean[i] - adv[i];
    total += diff * diff;
  }
  return total;
}

double attack_success_rate(std::span<const AdversarialResult> results) {
  if (results.empty()) throw Error(ErrorKind::Empty, "attack_success_rate: no results");
  std::size_t hits = 0;
  for (const auto& r : results) hits += r.success;
  return static_cast<double>(hits) / static_cast<double>(results.size());
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  if (predicted.size() != truth.size()) {
    throw Error(ErrorKind::ShapeMismatch, "accuracy: prediction/label count mismatch");
  }
  if (truth.empty()) throw Error(ErrorKind::Empty, "accuracy: empty dataset");
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) ok += predicted[i] == truth[i];
  return static_cast<double>(ok) / static_cast<double>(truth.size());
}

double accuracy(const Model& model, const LabeledDataset& data) {
  if (data.size() == 0) throw Error(ErrorKind::Empty, "accuracy: empty dataset");
  return accuracy(predict_labels(model, data.images), data.labels);
}

const char* to_string(AttemptPolicy policy) noexcept {
  return policy == AttemptPolicy::AllSamples ? "all_samples" : "clean_correct_only";
}

AttemptPolicy parse_attempt_policy(const std::string& text) {
  if (text == "all_samples") return AttemptPolicy::AllSamples;
  if (text == "clean_correct_only") return AttemptPolicy::CleanCorrectOnly;
  throw Error(ErrorKind::Config, "unknown attempt policy '" + text + "'");
}

EvalReport compile_report(double clean_accuracy, double perturbed_accuracy,
                          std::span<const AdversarialResult> results,
                          std::span<const std::size_t> ids, AttemptPolicy policy) {
  if (results.empty()) throw Error(ErrorKind::Empty, "compile_report: no attack results");
  if (!ids.empty() && ids.size() != results.size()) {
    throw Error(ErrorKind::ShapeMismatch, "compile_report: " + std::to_string(ids.size()) +
                                              " ids for " + std::to_string(results.size()) +
                                              " results");
  }
  require_unit_interval(clean_accuracy, "clean_accuracy");
  require_unit_interval(perturbed_accuracy, "perturbed_accuracy");
  EvalReport report;
  report.clean_accuracy = clean_accuracy;
  report.perturbed_accuracy = perturbed_accuracy;
  report.attack_success_rate = attack_success_rate(results);
  report.policy = policy;
  double l2_total = 0.0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    report.per_sample.push_back({ids.empty() ? i : ids[i], results[i].success, results[i].l2_norm});
    l2_total += results[i].l2_norm;
  }
  report.mean_l2_norm = l2_total / static_cast<double>(results.size());
  return report;
}

std::string report_to_csv(const EvalReport& report) {
  std::ostringstream os;
  os << "row,id,success,l2_norm_squared,clean_accuracy,perturbed_accuracy,attack_success_rate,"
        "attempt_policy\n";
  for (const auto& s : report.per_sample) {
    os << "sample," << s.id << ',' << (s.success ? 1 : 0) << ',' << fmt(s.l2_norm) << ",,,,\n";
  }
  os << "summary,," << report.per_sample.size() << ',' << fmt(report.mean_l2_norm) << ','
     << fmt(report.clean_accuracy) << ',' << fmt(report.perturbed_accuracy) << ','
     << fmt(report.attack_success_rate) << ',' << to_string(report.policy) << '\n';
  return os.str();
}

std::string report_to_json(const EvalReport& report) {
  nlohmann::ordered_json j;
  j["clean_accuracy"] = report.clean_accuracy;
  j["perturbed_accuracy"] = report.perturbed_accuracy;
  j["attack_success_rate"] = report.attack_success_rate;
  j["mean_l2_norm_squared"] = report.mean_l2_norm;
  j["attempt_policy"] = to_string(report.policy);
  auto& samples = j["per_sample"] = nlohmann::ordered_json::array();
  for (const auto& s : report.per_sample) {
    samples.push_back({{"id", s.id}, {"success", s.success}, {"l2_norm_squared", s.l2_norm}});
  }
  return j.dump(2) + "\n";
}

EvalReport report_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    EvalReport r;
    r.clean_accuracy = j.at("clean_accuracy").get<double>();
    r.perturbed_accuracy = j.at("perturbed_accuracy").get<double>();
    r.attack_success_rate = j.at("attack_success_rate").get<double>();
    r.mean_l2_norm = j.at("mean_l2_norm_squared").get<double>();
    r.policy = parse_attempt_policy(j.at("attempt_policy").get<std::string>());
    for (const auto& s : j.at("per_sample")) {
      r.per_sample.push_back({s.at("id").get<std::size_t>(), s.at("success").get<bool>(),
                              s.at("l2_norm_squared").get<double>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::Corrupt, std::string("report: ") + e.what());
  }
}

}  // namespace ssc
