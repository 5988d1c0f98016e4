#pragma once

#include <span>
#include <string>
#include <vector>

#include "ssc/attacks.hpp"
#include "ssc/data_io.hpp"
#include "ssc/model.hpp"

namespace ssc {

/// Sum over all pixels of (clean - adv)^2. Note this is the squared
/// Euclidean distance, kept under the customary "L2 norm" name.
double l2_perturbation_norm(const Tensor& clean, const Tensor& adv);

/// successes / attempts; throws on an empty list.
double attack_success_rate(std::span<const AdversarialResult> results);

/// Fraction of samples whose predicted label equals the true one.
double accuracy(const Model& model, const LabeledDataset& data);
double accuracy(std::span<const int> predicted, std::span<const int> truth);

enum class AttemptPolicy {
  AllSamples,         // FGSM: every evaluation sample is attacked
  CleanCorrectOnly,   // JSMA / boundary: only samples classified correctly when clean
};

const char* to_string(AttemptPolicy policy) noexcept;
AttemptPolicy parse_attempt_policy(const std::string& text);

struct SampleRecord {
  std::size_t id = 0;
  bool success = false;
  double l2_norm = 0.0;

  bool operator==(const SampleRecord&) const = default;
};

struct EvalReport {
  double clean_accuracy = 0.0;
  double perturbed_accuracy = 0.0;
  double attack_success_rate = 0.0;
  double mean_l2_norm = 0.0;
  AttemptPolicy policy = AttemptPolicy::AllSamples;
  std::vector<SampleRecord> per_sample;

  bool operator==(const EvalReport&) const = default;
};

/// Aggregates attack results. ids default to 0..n-1; when given they must
/// match results in length.
EvalReport compile_report(double clean_accuracy, double perturbed_accuracy,
                          std::span<const AdversarialResult> results,
                          std::span<const std::size_t> ids = {},
                          AttemptPolicy policy = AttemptPolicy::AllSamples);

/// One row per sample followed by a summary row.
std::string report_to_csv(const EvalReport& report);
std::string report_to_json(const EvalReport& report);
EvalReport report_from_json(const std::string& text);

}  // namespace ssc
