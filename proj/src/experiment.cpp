#include "ssc/experiment.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include "ssc/error.hpp"

namespace ssc {

namespace {

// Shortest text that parses back to the same double.
std::string fmt(double v) {
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw Error(ErrorKind::Config, "config: " + key + " expects a number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) {
    throw Error(ErrorKind::Config, "config: " + key + " expects a non-negative integer, got '" +
                                       v + "'");
  }
  return out;
}

template <class T, class F>
std::string join(const std::vector<T>& items, F&& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += f(items[i]);
  }
  return out;
}

// Rethrows parse errors of enum-valued keys as configuration errors.
template <class F>
auto as_config(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::Config) throw;
    throw Error(ErrorKind::Config, "config: " + key + ": " + e.what());
  }
}

std::string ssc_key(const std::optional<SscConfig>& c) {
  if (!c) return "none";
  return std::string(to_string(c->mode)) + ":" + c->filter_id + ":" + fmt(c->threshold_tk) + ":" +
         fmt(c->steepness_k);
}

std::uint64_t fnv1a(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace

const char* to_string(DefenseMode mode) noexcept {
  switch (mode) {
    case DefenseMode::None: return "none";
    case DefenseMode::Conventional: return "conventional";
    case DefenseMode::Selective: return "selective";
  }
  return "?";
}

DefenseMode parse_defense_mode(std::string_view text) {
  if (text == "none") return DefenseMode::None;
  if (text == "conventional") return DefenseMode::Conventional;
  if (text == "selective") return DefenseMode::Selective;
  throw Error(ErrorKind::Config, "unknown defense mode '" + std::string(text) + "'");
}

void ExperimentConfig::set(const std::string& key, const std::string& raw) {
  const std::string v = trim(raw);
  if (key == "dataset") {
    dataset = v;
    if (!data_dir_explicit) data_dir = v == "cifar10" ? "data/cifar10" : "data/mnist5k";
    if (!train_size_explicit) train_size = v == "cifar10" ? 5000 : 2000;
  } else if (key == "data_dir") {
    data_dir = v;
    data_dir_explicit = true;
  } else if (key == "train_size") {
    train_size = to_uint(key, v);
    train_size_explicit = true;
  }
  else if (key == "eval_size") eval_size = to_uint(key, v);
  else if (key == "subset_seed") subset_seed = to_uint(key, v);
  else if (key == "seed") seed = to_uint(key, v);
  else if (key == "defense") defense = parse_defense_mode(v);
  else if (key == "ssc_filter") ssc.filter_id = v;
  else if (key == "tk") ssc.threshold_tk = to_double(key, v);
  else if (key == "steepness") ssc.steepness_k = to_double(key, v);
  else if (key == "epochs") train.epochs = to_uint(key, v);
  else if (key == "batch_size") train.batch_size = to_uint(key, v);
  else if (key == "learning_rate") train.learning_rate = to_double(key, v);
  else if (key == "momentum") train.momentum = to_double(key, v);
  else if (key == "optimizer") train.optimizer = as_config(key, [&] { return parse_optimizer(v); });
  else if (key == "attack") attack.family = as_config(key, [&] { return parse_attack_family(v); });
  else if (key == "epsilon") {
    attack.epsilon = to_double(key, v);
    epsilon_explicit = true;
  } else if (key == "theta") attack.theta = to_double(key, v);
  else if (key == "gamma") attack.gamma = to_double(key, v);
  else if (key == "max_queries") attack.max_queries = to_uint(key, v);
  else if (key == "threat") attack.threat = as_config(key, [&] { return parse_threat_model(v); });
  else if (key == "attack_samples") attack_samples = to_uint(key, v);
  else if (key == "filters") filters = split_list(v);
  else if (key == "matrix_attacks") {
    matrix_attacks.clear();
    for (const auto& a : split_list(v)) {
      matrix_attacks.push_back(as_config(key, [&] { return parse_attack_family(a); }));
    }
  } else if (key == "tk_values") {
    tk_values.clear();
    for (const auto& t : split_list(v)) tk_values.push_back(to_double(key, t));
  } else if (key == "epsilon_values") {
    epsilon_values.clear();
    for (const auto& t : split_list(v)) epsilon_values.push_back(to_double(key, t));
  } else if (key == "boundary_images") boundary_images = to_uint(key, v);
  else if (key == "out") out_dir = v;
  else if (key == "cache_dir") cache_dir = v;
  else throw Error(ErrorKind::Config, "config: unknown key '" + key + "'");
}

void ExperimentConfig::validate() const {
  if (dataset != "mnist" && dataset != "cifar10" && dataset != "synthetic") {
    throw Error(ErrorKind::Config, "config: unknown dataset '" + dataset + "'");
  }
  if (train_size == 0 || eval_size == 0) {
    throw Error(ErrorKind::Config, "config: subset sizes must be positive");
  }
  SscConfig probe = ssc;
  probe.mode = FilterMode::Selective;
  as_config("ssc", [&] {
    probe.validate();
    find_filter(probe.filter_id);
    return 0;
  });
  for (const auto& f : filters) as_config("filters", [&] { return find_filter(f).id; });
  as_config("train", [&] {
    train.validate();
    return 0;
  });
  AttackSpec a = attack;
  a.epsilon = resolved_epsilon();
  as_config("attack", [&] {
    a.validate();
    return 0;
  });
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os << "dataset = " << dataset << '\n'
     << "data_dir = " << data_dir.string() << '\n'
     << "train_size = " << train_size << '\n'
     << "eval_size = " << eval_size << '\n'
     << "subset_seed = " << subset_seed << '\n'
     << "seed = " << seed << '\n'
     << "defense = " << to_string(defense) << '\n'
     << "ssc_filter = " << ssc.filter_id << '\n'
     << "tk = " << fmt(ssc.threshold_tk) << '\n'
     << "steepness = " << fmt(ssc.steepness_k) << '\n'
     << "epochs = " << train.epochs << '\n'
     << "batch_size = " << train.batch_size << '\n'
     << "learning_rate = " << fmt(train.learning_rate) << '\n'
     << "momentum = " << fmt(train.momentum) << '\n'
     << "optimizer = " << to_string(train.optimizer) << '\n'
     << "attack = " << to_string(attack.family) << '\n'
     << "epsilon = " << fmt(resolved_epsilon()) << '\n'
     << "theta = " << fmt(attack.theta) << '\n'
     << "gamma = " << fmt(attack.gamma) << '\n'
     << "max_queries = " << attack.max_queries << '\n'
     << "threat = " << to_string(attack.threat) << '\n'
     << "attack_samples = " << attack_samples << '\n'
     << "filters = " << join(filters, [](const std::string& s) { return s; }) << '\n'
     << "matrix_attacks = "
     << join(matrix_attacks, [](AttackFamily a) { return std::string(to_string(a)); }) << '\n'
     << "tk_values = " << join(tk_values, fmt) << '\n'
     << "epsilon_values = " << join(epsilon_values, fmt) << '\n'
     << "boundary_images = " << boundary_images << '\n'
     << "out = " << out_dir.string() << '\n'
     << "cache_dir = " << resolved_cache_dir().string() << '\n';
  return os.str();
}

double ExperimentConfig::resolved_epsilon() const {
  if (epsilon_explicit) return attack.epsilon;
  return dataset == "cifar10" ? 0.1 : 0.3;
}

std::filesystem::path ExperimentConfig::resolved_cache_dir() const {
  return cache_dir.empty() ? out_dir / "cache" : cache_dir;
}

ExperimentConfig parse_config_text(const std::string& text) {
  ExperimentConfig cfg;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorKind::Config, "config line " + std::to_string(lineno) + ": expected key = value");
    }
    cfg.set(trim(line.substr(0, eq)), line.substr(eq + 1));
  }
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  return parse_config_text(read_text(path));
}

std::string content_hash(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a(text)));
  return buf;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::pair<LabeledDataset, LabeledDataset> load_dataset_pools(const ExperimentConfig& cfg) {
  if (cfg.dataset == "mnist") {
    const auto& d = cfg.data_dir;
    return {load_mnist_idx(d / "train-images-idx3-ubyte", d / "train-labels-idx1-ubyte"),
            load_mnist_idx(d / "test-images-idx3-ubyte", d / "test-labels-idx1-ubyte")};
  }
  if (cfg.dataset == "cifar10") {
    std::vector<std::filesystem::path> train_files;
    for (int i = 1; i <= 5; ++i) {
      const auto p = cfg.data_dir / ("data_batch_" + std::to_string(i) + ".bin");
      if (std::filesystem::exists(p)) train_files.push_back(p);
    }
    if (train_files.empty()) {
      throw Error(ErrorKind::Io, "cifar10: no data_batch_*.bin under " + cfg.data_dir.string());
    }
    return {load_cifar10_bin(train_files), load_cifar10_bin({cfg.data_dir / "test_batch.bin"})};
  }
  if (cfg.dataset == "synthetic") {
    return {synthetic_blob_stripes(cfg.train_size, 28, cfg.subset_seed),
            synthetic_blob_stripes(cfg.eval_size, 28, cfg.subset_seed + 1)};
  }
  throw Error(ErrorKind::Config, "unknown dataset '" + cfg.dataset + "'");
}

Experiment::Experiment(ExperimentConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  auto [train_pool, eval_pool] = load_dataset_pools(cfg_);
  train_ = subset(train_pool, std::min(cfg_.train_size, train_pool.size()), cfg_.subset_seed);
  eval_ = subset(eval_pool, std::min(cfg_.eval_size, eval_pool.size()), cfg_.subset_seed + 1);
}

std::optional<SscConfig> Experiment::defense_config(DefenseMode mode, const std::string& filter_id,
                                                    double tk) const {
  if (mode == DefenseMode::None) return std::nullopt;
  SscConfig c = cfg_.ssc;
  c.filter_id = filter_id;
  c.threshold_tk = tk;
  c.mode = mode == DefenseMode::Selective ? FilterMode::Selective : FilterMode::Conventional;
  return c;
}

std::string Experiment::model_key(const std::optional<SscConfig>& defense,
                                  std::uint64_t seed) const {
  std::ostringstream os;
  os << "data=" << cfg_.dataset << ':' << std::filesystem::absolute(cfg_.data_dir).string() << ':'
     << cfg_.train_size << ':' << cfg_.subset_seed << ";model=custom_cnn:" << ssc_key(defense)
     << ";train=" << cfg_.train.epochs << ':' << cfg_.train.batch_size << ':'
     << fmt(cfg_.train.learning_rate) << ':' << fmt(cfg_.train.momentum) << ':'
     << to_string(cfg_.train.optimizer) << ";seed=" << seed;
  return content_hash(os.str());
}

const Model& Experiment::cached(const std::string& key, const std::function<Model()>& make) {
  if (auto it = models_.find(key); it != models_.end()) return it->second;
  const auto path = cfg_.resolved_cache_dir() / (key + ".sscm");
  if (std::filesystem::exists(path)) {
    try {
      return models_.emplace(key, load_model(path)).first->second;
    } catch (const Error&) {
      // unreadable cache entry: retrain and overwrite
    }
  }
  Model m = make();
  save_model(m, path);
  return models_.emplace(key, std::move(m)).first->second;
}

const Model& Experiment::model(const std::optional<SscConfig>& defense, std::uint64_t seed) {
  return cached(model_key(defense, seed), [&] {
    Model m = build_custom_cnn(train_.sample_shape(), train_.class_count, defense, seed);
    TrainConfig tc = cfg_.train;
    tc.seed = seed;
    train(m, train_, tc);
    return m;
  });
}

const Model& Experiment::substitute(std::uint64_t seed) {
  return cached(model_key(std::nullopt, seed + kSubstituteSeedOffset), [&] {
    TrainConfig tc = cfg_.train;
    tc.seed = seed;
    return make_substitute(train_, tc);
  });
}

AttackRun Experiment::attack(const Model& target, const AttackSpec& spec,
                            const Model* substitute) const {
  spec.validate();
  const auto clean_pred = predict_labels(target, eval_.images);
  const double clean_acc = accuracy(clean_pred, eval_.labels);
  const std::size_t n = eval_.size();

  if (spec.family == AttackFamily::Fgsm) {
    AttackRun run;
    run.results = fgsm_batch(target, eval_.images, eval_.labels, spec, substitute);
    run.ids.resize(n);
    std::iota(run.ids.begin(), run.ids.end(), 0);
    std::size_t still = 0;
    for (const auto& r : run.results) still += !r.success;
    run.report = compile_report(clean_acc, static_cast<double>(still) / static_cast<double>(n),
                                run.results, run.ids, AttemptPolicy::AllSamples);
    return run;
  }

  if (spec.threat == ThreatModel::BlackBox && spec.family == AttackFamily::Jsma && !substitute) {
    throw Error(ErrorKind::InvalidArgument, "black-box JSMA needs a substitute model");
  }
  // JSMA and boundary are costly per sample: attack the clean-correct samples
  // among the first attack_samples; misclassified ones count as wrong.
  const std::size_t window = cfg_.attack_samples == 0 ? n : std::min(n, cfg_.attack_samples);
  std::vector<AdversarialResult> results;
  std::vector<std::size_t> ids;
  std::size_t still = 0;
  ModelLabelOracle oracle(target);
  for (std::size_t i = 0; i < window; ++i) {
    if (clean_pred[i] != eval_.labels[i]) continue;
    const std::size_t idx[] = {i};
    const Tensor x = gather_batch(eval_.images, idx);
    AttackSpec s = spec;
    s.seed = spec.seed + i;
    AdversarialResult r;
    if (spec.family == AttackFamily::Jsma) {
      r = jsma(target, x, eval_.labels[i], s, substitute);
    } else {
      try {
        r = boundary_attack(oracle, x, eval_.labels[i], s);
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::InitializationFailure) throw;
        r.x_adv = x;  // attack never started: counted as a failed attempt
      }
    }
    still += !r.success;
    results.push_back(std::move(r));
    ids.push_back(i);
  }
  AttackRun run;
  run.report = compile_report(clean_acc, static_cast<double>(still) / static_cast<double>(window),
                              results, ids, AttemptPolicy::CleanCorrectOnly);
  run.results = std::move(results);
  run.ids = std::move(ids);
  return run;
}

std::string matrix_csv_header() {
  return "filter,mode,threat,attack,epsilon,clean_accuracy,perturbed_accuracy,"
         "attack_success_rate,mean_l2_norm_squared,attempted,attempt_policy,seed,config_hash\n";
}

std::string matrix_csv_row(const MatrixRow& row, std::uint64_t seed) {
  const auto& r = row.report;
  return row.filter + "," + to_string(row.mode) + "," + to_string(row.threat) + "," +
         to_string(row.attack) + "," + fmt(row.epsilon) + "," + fmt(r.clean_accuracy) + "," +
         fmt(r.perturbed_accuracy) + "," + fmt(r.attack_success_rate) + "," +
         fmt(r.mean_l2_norm) + "," + std::to_string(r.per_sample.size()) + "," +
         to_string(r.policy) + "," + std::to_string(seed) + "," + row.config_hash + "\n";
}

std::vector<MatrixRow> run_filter_matrix(Experiment& exp) {
  const auto& cfg = exp.config();
  const auto path = cfg.out_dir / "filter_matrix.csv";
  std::filesystem::create_directories(cfg.out_dir);
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  out << matrix_csv_header() << std::flush;

  std::vector<MatrixRow> rows;
  const DefenseMode modes[] = {DefenseMode::None, DefenseMode::Conventional, DefenseMode::Selective};
  const ThreatModel threats[] = {ThreatModel::WhiteBox, ThreatModel::BlackBox};
  for (const auto& filter : cfg.filters) {
    for (DefenseMode mode : modes) {
      const auto defense = exp.defense_config(mode, filter, cfg.ssc.threshold_tk);
      const Model& target = exp.model(defense, cfg.seed);
      for (ThreatModel threat : threats) {
        for (AttackFamily family : cfg.matrix_attacks) {
          AttackSpec spec = cfg.attack;
          spec.family = family;
          spec.threat = threat;
          spec.epsilon = cfg.resolved_epsilon();
          spec.seed = cfg.seed;
          // Decision-based attacks only ever query the target.
          const bool needs_sub = threat == ThreatModel::BlackBox && family != AttackFamily::Boundary;
          const Model* sub = needs_sub ? &exp.substitute(cfg.seed) : nullptr;
          MatrixRow row{filter, mode, threat, family, spec.epsilon,
                        exp.evaluate(target, spec, sub), ""};
          std::ostringstream cell;
          cell << exp.model_key(defense, cfg.seed) << '|' << to_string(threat) << '|'
               << to_string(family) << '|' << fmt(spec.epsilon) << '|' << fmt(spec.theta) << '|'
               << fmt(spec.gamma) << '|' << spec.max_queries << '|' << cfg.eval_size << '|'
               << cfg.attack_samples;
          row.config_hash = content_hash(cell.str());
          out << matrix_csv_row(row, cfg.seed) << std::flush;
          rows.push_back(std::move(row));
        }
      }
    }
  }
  return rows;
}

std::vector<SweepRow> run_threshold_sweep(Experiment& exp, std::span<const double> tk_values) {
  const auto& cfg = exp.config();
  if (tk_values.empty()) throw Error(ErrorKind::InvalidArgument, "threshold sweep: no t_k values");
  for (double tk : tk_values) {
    if (!(tk >= 0.0 && tk <= 1.0)) {
      throw Error(ErrorKind::InvalidArgument, "threshold sweep: t_k " + fmt(tk) + " outside [0,1]");
    }
  }
  std::vector<SweepRow> rows;
  AttackSpec spec = cfg.attack;
  spec.family = AttackFamily::Fgsm;
  spec.threat = ThreatModel::WhiteBox;
  spec.epsilon = cfg.resolved_epsilon();
  spec.seed = cfg.seed;
  for (double tk : tk_values) {
    const auto defense = exp.defense_config(DefenseMode::Selective, cfg.ssc.filter_id, tk);
    const Model& m = exp.model(defense, cfg.seed);
    const EvalReport r = exp.evaluate(m, spec, nullptr);
    rows.push_back({tk, r.clean_accuracy, r.perturbed_accuracy});
  }
  return rows;
}

std::vector<EpsilonRow> run_epsilon_series(Experiment& exp, std::span<const double> epsilons) {
  const auto& cfg = exp.config();
  const Model& plain = exp.model(std::nullopt, cfg.seed);
  const auto defense = exp.defense_config(
      cfg.defense == DefenseMode::None ? DefenseMode::Selective : cfg.defense, cfg.ssc.filter_id,
      cfg.ssc.threshold_tk);
  const Model& defended = exp.model(defense, cfg.seed);
  std::vector<EpsilonRow> rows;
  for (double eps : epsilons) {
    AttackSpec spec = cfg.attack;
    spec.family = AttackFamily::Fgsm;
    spec.threat = ThreatModel::WhiteBox;
    spec.epsilon = eps;
    rows.push_back({eps, exp.evaluate(plain, spec, nullptr).perturbed_accuracy,
                    exp.evaluate(defended, spec, nullptr).perturbed_accuracy});
  }
  return rows;
}

std::vector<std::size_t> pick_images(const LabeledDataset& data,
                                     const std::vector<const Model*>& models, std::size_t n,
                                     std::uint64_t seed) {
  std::vector<std::vector<int>> preds;
  for (const Model* m : models) preds.push_back(predict_labels(*m, data.images));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::size_t> picks;
  for (std::size_t i : order) {
    if (picks.size() == n) break;
    const bool all_ok = std::all_of(preds.begin(), preds.end(),
                                    [&](const std::vector<int>& p) { return p[i] == data.labels[i]; });
    if (all_ok) picks.push_back(i);
  }
  return picks;
}

BoundaryComparison run_boundary_comparison(Experiment& exp, std::size_t n_images) {
  if (n_images == 0) throw Error(ErrorKind::InvalidArgument, "boundary comparison: n_images is 0");
  const auto& cfg = exp.config();
  const Model& plain = exp.model(std::nullopt, cfg.seed);
  const auto defense = exp.defense_config(
      cfg.defense == DefenseMode::None ? DefenseMode::Selective : cfg.defense, cfg.ssc.filter_id,
      cfg.ssc.threshold_tk);
  const Model& defended = exp.model(defense, cfg.seed);
  const auto& data = exp.eval_data();
  const auto picks = pick_images(data, {&plain, &defended}, n_images, cfg.seed);

  BoundaryComparison cmp;
  AttackSpec spec = cfg.attack;
  spec.family = AttackFamily::Boundary;
  ModelLabelOracle plain_oracle(plain);
  ModelLabelOracle defended_oracle(defended);
  double sum_u = 0.0, sum_d = 0.0;
  std::size_t ok = 0;
  for (std::size_t idx : picks) {
    const std::size_t one[] = {idx};
    const Tensor x = gather_batch(data.images, one);
    BoundaryRow row;
    row.image = idx;
    row.label = data.labels[idx];
    spec.seed = cfg.seed * 1000003 + idx;
    try {
      const auto ru = boundary_attack(plain_oracle, x, row.label, spec);
      const auto rd = boundary_attack(defended_oracle, x, row.label, spec);
      row.ok = true;
      row.l2_undefended = ru.l2_norm;
      row.l2_defended = rd.l2_norm;
      row.queries_undefended = ru.queries_used;
      row.queries_defended = rd.queries_used;
      sum_u += ru.l2_norm;
      sum_d += rd.l2_norm;
      ++ok;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::InitializationFailure) throw;
      ++cmp.init_failures;
    }
    cmp.rows.push_back(row);
  }
  if (ok > 0) {
    cmp.mean_undefended = sum_u / static_cast<double>(ok);
    cmp.mean_defended = sum_d / static_cast<double>(ok);
    cmp.ratio = cmp.mean_undefended > 0.0 ? cmp.mean_defended / cmp.mean_undefended : 0.0;
  }
  return cmp;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "tk,clean_accuracy,perturbed_accuracy\n";
  for (const auto& r : rows) {
    out += fmt(r.tk) + "," + fmt(r.clean_accuracy) + "," + fmt(r.perturbed_accuracy) + "\n";
  }
  return out;
}

std::string epsilon_csv(std::span<const EpsilonRow> rows) {
  std::string out = "epsilon,undefended_accuracy,defended_accuracy\n";
  for (const auto& r : rows) {
    out += fmt(r.epsilon) + "," + fmt(r.undefended_accuracy) + "," + fmt(r.defended_accuracy) +
           "\n";
  }
  return out;
}

std::string boundary_csv(const BoundaryComparison& cmp) {
  std::string out =
      "image,label,status,l2_undefended,l2_defended,queries_undefended,queries_defended\n";
  for (const auto& r : cmp.rows) {
    out += std::to_string(r.image) + "," + std::to_string(r.label) + "," +
           (r.ok ? "ok" : "init_failure") + "," + fmt(r.l2_undefended) + "," +
           fmt(r.l2_defended) + "," + std::to_string(r.queries_undefended) + "," +
           std::to_string(r.queries_defended) + "\n";
  }
  out += "summary,," + std::to_string(cmp.init_failures) + "," + fmt(cmp.mean_undefended) + "," +
         fmt(cmp.mean_defended) + ",ratio," + fmt(cmp.ratio) + "\n";
  return out;
}

namespace {

std::vector<std::vector<std::string>> csv_records(const std::string& text) {
  std::vector<std::vector<std::string>> out;
  std::stringstream ss(text);
  std::string line;
  bool header = true;
  while (std::getline(ss, line)) {
    if (header) {
      header = false;
      continue;
    }
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ls(line);
    std::string f;
    while (std::getline(ls, f, ',')) fields.push_back(trim(f));
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    out.push_back(std::move(fields));
  }
  return out;
}

}  // namespace

std::vector<SweepRow> parse_sweep_csv(const std::string& text) {
  std::vector<SweepRow> rows;
  for (const auto& f : csv_records(text)) {
    if (f.size() != 3) throw Error(ErrorKind::Corrupt, "sweep csv: expected 3 fields");
    rows.push_back({to_double("tk", f[0]), to_double("clean_accuracy", f[1]),
                    to_double("perturbed_accuracy", f[2])});
  }
  return rows;
}

BoundaryComparison parse_boundary_csv(const std::string& text) {
  BoundaryComparison cmp;
  for (const auto& f : csv_records(text)) {
    if (f.size() != 7) throw Error(ErrorKind::Corrupt, "boundary csv: expected 7 fields");
    if (f[0] == "summary") {
      cmp.init_failures = to_uint("init_failures", f[2]);
      cmp.mean_undefended = to_double("mean_undefended", f[3]);
      cmp.mean_defended = to_double("mean_defended", f[4]);
      cmp.ratio = to_double("ratio", f[6]);
      continue;
    }
    BoundaryRow r;
    r.image = to_uint("image", f[0]);
    r.label = static_cast<int>(to_uint("label", f[1]));
    r.ok = f[2] == "ok";
    r.l2_undefended = to_double("l2_undefended", f[3]);
    r.l2_defended = to_double("l2_defended", f[4]);
    r.queries_undefended = to_uint("queries_undefended", f[5]);
    r.queries_defended = to_uint("queries_defended", f[6]);
    cmp.rows.push_back(r);
  }
  return cmp;
}

std::vector<std::filesystem::path> emit_plots(const std::filesystem::path& dir,
                                              const PlotTables& tables) {
  std::vector<std::filesystem::path> written;
  if (!tables.sweep.empty()) {
    std::string s = "# tk clean_accuracy perturbed_accuracy\n";
    for (const auto& r : tables.sweep) {
      s += fmt(r.tk) + " " + fmt(r.clean_accuracy) + " " + fmt(r.perturbed_accuracy) + "\n";
    }
    written.push_back(dir / "accuracy_vs_tk.dat");
    write_text(written.back(), s);
  }
  if (!tables.epsilon.empty()) {
    std::string s = "# epsilon undefended_accuracy defended_accuracy\n";
    for (const auto& r : tables.epsilon) {
      s += fmt(r.epsilon) + " " + fmt(r.undefended_accuracy) + " " + fmt(r.defended_accuracy) +
           "\n";
    }
    written.push_back(dir / "accuracy_vs_epsilon.dat");
    write_text(written.back(), s);
  }
  if (tables.boundary && !tables.boundary->rows.empty()) {
    std::string s = "# image l2_undefended l2_defended\n";
    for (const auto& r : tables.boundary->rows) {
      if (!r.ok) continue;
      s += std::to_string(r.image) + " " + fmt(r.l2_undefended) + " " + fmt(r.l2_defended) + "\n";
    }
    written.push_back(dir / "boundary_norms.dat");
    write_text(written.back(), s);
  }
  return written;
}

}  // namespace ssc
