#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ssc/attacks.hpp"
#include "ssc/data_io.hpp"
#include "ssc/metrics.hpp"
#include "ssc/model.hpp"

namespace ssc {

enum class DefenseMode { None, Conventional, Selective };

const char* to_string(DefenseMode mode) noexcept;
DefenseMode parse_defense_mode(std::string_view text);

/// Everything an experiment run depends on. Serialized as flat
/// `key = value` text; see ExperimentConfig::to_text() for the key list.
struct ExperimentConfig {
  std::string dataset = "mnist";  // mnist | cifar10 | synthetic
  std::filesystem::path data_dir = "data/mnist5k";
  std::size_t train_size = 2000;  // 5000 for cifar10 unless set
  std::size_t eval_size = 500;
  std::uint64_t subset_seed = 0;
  std::uint64_t seed = 1;

  DefenseMode defense = DefenseMode::Selective;
  SscConfig ssc;
  TrainConfig train{10, 64, 0.01, 0, Optimizer::Sgd, 0.9};

  AttackSpec attack{AttackFamily::Fgsm, 0.3, 1.0, 0.145, 5000, ThreatModel::WhiteBox, 0};
  // Keys set explicitly keep their value when `dataset` changes afterwards.
  bool epsilon_explicit = false;
  bool train_size_explicit = false;
  bool data_dir_explicit = false;
  std::size_t attack_samples = 100;  // JSMA / boundary window; FGSM attacks every sample

  std::vector<std::string> filters{"sobel_pair", "laplacian8"};
  std::vector<AttackFamily> matrix_attacks{AttackFamily::Fgsm, AttackFamily::Jsma};
  std::vector<double> tk_values{0.0, 0.11, 0.2, 0.4};
  std::vector<double> epsilon_values{0.0, 0.1, 0.2, 0.3};
  std::size_t boundary_images = 10;

  std::filesystem::path out_dir = "out";
  std::filesystem::path cache_dir;  // empty: <out_dir>/cache

  /// Applies one `key = value` assignment; throws ErrorKind::Config on unknown keys.
  void set(const std::string& key, const std::string& value);
  void validate() const;
  std::string to_text() const;
  /// FGSM budget: the explicit epsilon, else 0.3 for MNIST-like data and 0.1 for CIFAR-10.
  double resolved_epsilon() const;
  std::filesystem::path resolved_cache_dir() const;
};

ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);

/// 64-bit FNV-1a of a string, as 16 hex digits.
std::string content_hash(const std::string& text);

struct AttackRun {
  std::vector<AdversarialResult> results;
  std::vector<std::size_t> ids;  // evaluation indices of the attempted samples
  EvalReport report;
};

/// Holds the datasets of one configuration and a model cache keyed by the
/// content hash of (data, model, training) settings. Cached models are also
/// persisted under the cache directory.
class Experiment {
 public:
  explicit Experiment(ExperimentConfig cfg);

  const ExperimentConfig& config() const { return cfg_; }
  const LabeledDataset& train_data() const { return train_; }
  const LabeledDataset& eval_data() const { return eval_; }

  std::optional<SscConfig> defense_config(DefenseMode mode, const std::string& filter_id,
                                          double tk) const;
  /// Hash identifying a trained target model.
  std::string model_key(const std::optional<SscConfig>& defense, std::uint64_t seed) const;

  /// Target CNN trained on the clean training subset.
  const Model& model(const std::optional<SscConfig>& defense, std::uint64_t seed);
  /// Undefended custom CNN trained under seed + kSubstituteSeedOffset.
  const Model& substitute(std::uint64_t seed);

  /// Attacks the evaluation subset: FGSM every sample, JSMA and boundary the
  /// clean-correct samples among the first attack_samples (misclassified ones
  /// count as wrong in the perturbed accuracy).
  AttackRun attack(const Model& target, const AttackSpec& spec, const Model* substitute) const;
  EvalReport evaluate(const Model& target, const AttackSpec& spec, const Model* substitute) const {
    return attack(target, spec, substitute).report;
  }

 private:
  const Model& cached(const std::string& key, const std::function<Model()>& make);

  ExperimentConfig cfg_;
  LabeledDataset train_;
  LabeledDataset eval_;
  std::map<std::string, Model> models_;
};

/// Train / evaluation pools for a configuration, before subsetting.
std::pair<LabeledDataset, LabeledDataset> load_dataset_pools(const ExperimentConfig& cfg);

struct MatrixRow {
  std::string filter;
  DefenseMode mode = DefenseMode::None;
  ThreatModel threat = ThreatModel::WhiteBox;
  AttackFamily attack = AttackFamily::Fgsm;
  double epsilon = 0.0;
  EvalReport report;
  std::string config_hash;
};

struct SweepRow {
  double tk = 0.0;
  double clean_accuracy = 0.0;
  double perturbed_accuracy = 0.0;
};

struct EpsilonRow {
  double epsilon = 0.0;
  double undefended_accuracy = 0.0;
  double defended_accuracy = 0.0;
};

struct BoundaryRow {
  std::size_t image = 0;
  int label = 0;
  bool ok = false;  // both attacks initialised
  double l2_undefended = 0.0;
  double l2_defended = 0.0;
  std::size_t queries_undefended = 0;
  std::size_t queries_defended = 0;
};

struct BoundaryComparison {
  std::vector<BoundaryRow> rows;
  std::size_t init_failures = 0;
  double mean_undefended = 0.0;
  double mean_defended = 0.0;
  double ratio = 0.0;  // defended / undefended over rows with ok == true
};

/// filters x {none, conventional, selective} x {whitebox, blackbox} x attacks.
/// Rows are appended to <out>/filter_matrix.csv as each cell finishes.
std::vector<MatrixRow> run_filter_matrix(Experiment& exp);
std::string matrix_csv_header();
std::string matrix_csv_row(const MatrixRow& row, std::uint64_t seed);

/// One selective model per t_k; clean and white-box FGSM accuracy.
std::vector<SweepRow> run_threshold_sweep(Experiment& exp, std::span<const double> tk_values);

/// White-box FGSM accuracy of the undefended and the configured defended model.
std::vector<EpsilonRow> run_epsilon_series(Experiment& exp, std::span<const double> epsilons);

/// Boundary attack on both models over the same seeded picks of evaluation
/// images (classified correctly by both), n_images of them.
BoundaryComparison run_boundary_comparison(Experiment& exp, std::size_t n_images);

/// Seeded picks of evaluation indices classified correctly by every model given.
std::vector<std::size_t> pick_images(const LabeledDataset& data,
                                     const std::vector<const Model*>& models, std::size_t n,
                                     std::uint64_t seed);

std::string sweep_csv(std::span<const SweepRow> rows);
std::string epsilon_csv(std::span<const EpsilonRow> rows);
std::string boundary_csv(const BoundaryComparison& cmp);

std::vector<SweepRow> parse_sweep_csv(const std::string& text);
BoundaryComparison parse_boundary_csv(const std::string& text);

struct PlotTables {
  std::vector<SweepRow> sweep;
  std::vector<EpsilonRow> epsilon;
  std::optional<BoundaryComparison> boundary;
};

/// Whitespace-separated data files with a '#' header naming the columns:
/// accuracy_vs_tk.dat, accuracy_vs_epsilon.dat, boundary_norms.dat (only for
/// tables that are non-empty). Returns the files written.
std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& dir,
                                              const PlotTables& tables);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace ssc
