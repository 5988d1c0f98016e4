// Command-line driver: ssclab <verb> [options]

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "ssc/error.hpp"
#include "ssc/experiment.hpp"

namespace {

using ssc::Error;
using ssc::ErrorKind;
namespace fs = std::filesystem;

void print_error(const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["error"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << '\n';
}

struct Options {
  std::string config_path;
  // flag -> config key; filled in the order flags are declared
  std::vector<std::pair<std::string, std::string>> flag_keys;
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;
  std::string model_path;
  std::size_t images = 0;
};

void add_common(CLI::App& app, Options& opt) {
  app.add_option("--config", opt.config_path, "key = value experiment config file");
  const std::pair<const char*, const char*> flags[] = {
      {"--dataset", "dataset"},         {"--data-dir", "data_dir"},
      {"--subset", "train_size"},       {"--eval-subset", "eval_size"},
      {"--subset-seed", "subset_seed"}, {"--seed", "seed"},
      {"--defense", "defense"},         {"--ssc-filter", "ssc_filter"},
      {"--tk", "tk"},                   {"--steepness", "steepness"},
      {"--epochs", "epochs"},           {"--attack", "attack"},
      {"--epsilon", "epsilon"},         {"--theta", "theta"},
      {"--gamma", "gamma"},             {"--max-queries", "max_queries"},
      {"--threat", "threat"},           {"--attack-samples", "attack_samples"},
      {"--filters", "filters"},         {"--tk-values", "tk_values"},
      {"--epsilon-values", "epsilon_values"}, {"--out", "out"},
      {"--cache-dir", "cache_dir"},
  };
  const bool first = opt.flag_keys.empty();
  for (const auto& [flag, key] : flags) {
    if (first) opt.flag_keys.emplace_back(flag, key);
    app.add_option(flag, opt.values[key], std::string("sets '") + key + "'");
  }
  app.add_option("--set", opt.sets, "extra key=value override (repeatable)");
}

ssc::ExperimentConfig resolve(CLI::App& app, Options& opt) {
  ssc::ExperimentConfig cfg;
  if (!opt.config_path.empty()) cfg = ssc::load_config(opt.config_path);
  for (const auto& [flag, key] : opt.flag_keys) {
    if (app.count(flag) > 0) cfg.set(key, opt.values[key]);
  }
  for (const auto& kv : opt.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::Config, "--set expects key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  cfg.validate();
  ssc::write_text(cfg.out_dir / "resolved_config.txt", cfg.to_text());
  return cfg;
}

ssc::AttackSpec spec_from(const ssc::ExperimentConfig& cfg) {
  ssc::AttackSpec spec = cfg.attack;
  spec.epsilon = cfg.resolved_epsilon();
  spec.seed = cfg.seed;
  return spec;
}

std::optional<ssc::SscConfig> configured_defense(const ssc::Experiment& exp) {
  const auto& cfg = exp.config();
  return exp.defense_config(cfg.defense, cfg.ssc.filter_id, cfg.ssc.threshold_tk);
}

// Model from --model, else the cached/trained model for the configuration.
const ssc::Model& target_model(ssc::Experiment& exp, const Options& opt,
                               std::optional<ssc::Model>& holder) {
  if (!opt.model_path.empty()) {
    holder.emplace(ssc::load_model(opt.model_path));
    return *holder;
  }
  return exp.model(configured_defense(exp), exp.config().seed);
}

const ssc::Model* substitute_for(ssc::Experiment& exp, const ssc::AttackSpec& spec) {
  if (spec.threat != ssc::ThreatModel::BlackBox || spec.family == ssc::AttackFamily::Boundary) {
    return nullptr;
  }
  return &exp.substitute(exp.config().seed);
}

void print_report(const ssc::EvalReport& r) {
  std::printf("clean_accuracy=%.6f perturbed_accuracy=%.6f attack_success_rate=%.6f "
              "mean_l2_norm_squared=%.6f attempted=%zu policy=%s\n",
              r.clean_accuracy, r.perturbed_accuracy, r.attack_success_rate, r.mean_l2_norm,
              r.per_sample.size(), ssc::to_string(r.policy));
}

int run_train(CLI::App& app, Options& opt) {
  ssc::Experiment exp(resolve(app, opt));
  const auto& cfg = exp.config();
  const auto& data = exp.train_data();
  ssc::Model model = ssc::build_custom_cnn(data.sample_shape(), data.class_count,
                                           configured_defense(exp), cfg.seed);
  ssc::TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const auto history = ssc::train(model, data, tc);
  std::string csv = "epoch,mean_loss\n";
  for (std::size_t e = 0; e < history.epoch_loss.size(); ++e) {
    csv += std::to_string(e + 1) + "," + std::to_string(history.epoch_loss[e]) + "\n";
  }
  ssc::write_text(cfg.out_dir / "train_history.csv", csv);
  const fs::path path = opt.model_path.empty() ? cfg.out_dir / "model.sscm" : fs::path(opt.model_path);
  ssc::save_model(model, path);
  std::printf("model=%s parameters=%zu final_loss=%.6f\n", path.string().c_str(),
              model.parameter_count(), history.epoch_loss.empty() ? 0.0 : history.epoch_loss.back());
  return 0;
}

int run_attack(CLI::App& app, Options& opt) {
  ssc::Experiment exp(resolve(app, opt));
  std::optional<ssc::Model> holder;
  const ssc::Model& target = target_model(exp, opt, holder);
  const auto spec = spec_from(exp.config());
  const auto run = exp.attack(target, spec, substitute_for(exp, spec));

  ssc::ImageBatch batch;
  std::vector<ssc::Tensor> rows;
  for (const auto& r : run.results) rows.push_back(r.x_adv);
  batch.images = ssc::stack(rows);
  for (std::size_t id : run.ids) batch.labels.push_back(exp.eval_data().labels[id]);
  const fs::path out = exp.config().out_dir;
  ssc::save_batch(out / "adversarial.sscb", batch);

  nlohmann::ordered_json side;
  side["batch"] = "adversarial.sscb";
  side["attack"] = ssc::to_string(spec.family);
  side["threat"] = ssc::to_string(spec.threat);
  side["epsilon"] = spec.epsilon;
  side["theta"] = spec.theta;
  side["gamma"] = spec.gamma;
  side["max_queries"] = spec.max_queries;
  side["seed"] = spec.seed;
  side["subset_seed"] = exp.config().subset_seed;
  side["attempt_policy"] = ssc::to_string(run.report.policy);
  auto& samples = side["samples"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < run.results.size(); ++i) {
    const auto& r = run.results[i];
    samples.push_back({{"eval_index", run.ids[i]},
                       {"label", exp.eval_data().labels[run.ids[i]]},
                       {"success", r.success},
                       {"l2_norm_squared", r.l2_norm},
                       {"queries_used", r.queries_used},
                       {"modified_pixels", r.modified_pixels}});
  }
  ssc::write_text(out / "adversarial.json", side.dump(2) + "\n");
  print_report(run.report);
  return 0;
}

int run_eval(CLI::App& app, Options& opt) {
  ssc::Experiment exp(resolve(app, opt));
  std::optional<ssc::Model> holder;
  const ssc::Model& target = target_model(exp, opt, holder);
  const auto spec = spec_from(exp.config());
  const auto report = exp.evaluate(target, spec, substitute_for(exp, spec));
  ssc::write_text(exp.config().out_dir / "report.csv", ssc::report_to_csv(report));
  ssc::write_text(exp.config().out_dir / "report.json", ssc::report_to_json(report));
  print_report(report);
  return 0;
}

int run_sweep(CLI::App& app, Options& opt) {
  ssc::Experiment exp(resolve(app, opt));
  const auto rows = ssc::run_threshold_sweep(exp, exp.config().tk_values);
  ssc::write_text(exp.config().out_dir / "threshold_sweep.csv", ssc::sweep_csv(rows));
  ssc::emit_plots(exp.config().out_dir, {rows, {}, std::nullopt});
  std::fputs(ssc::sweep_csv(rows).c_str(), stdout);
  return 0;
}

int run_matrix(CLI::App& app, Options& opt) {
  ssc::Experiment exp(resolve(app, opt));
  const auto rows = ssc::run_filter_matrix(exp);
  std::fputs(ssc::matrix_csv_header().c_str(), stdout);
  for (const auto& r : rows) std::fputs(ssc::matrix_csv_row(r, exp.config().seed).c_str(), stdout);
  return 0;
}

int run_boundary(CLI::App& app, Options& opt) {
  ssc::Experiment exp(resolve(app, opt));
  const std::size_t n = opt.images > 0 ? opt.images : exp.config().boundary_images;
  const auto cmp = ssc::run_boundary_comparison(exp, n);
  ssc::write_text(exp.config().out_dir / "boundary_compare.csv", ssc::boundary_csv(cmp));
  ssc::emit_plots(exp.config().out_dir, {{}, {}, cmp});
  std::fputs(ssc::boundary_csv(cmp).c_str(), stdout);
  return 0;
}

// Plot data from earlier sweep / boundary outputs plus a fresh epsilon series.
int run_report(CLI::App& app, Options& opt) {
  ssc::Experiment exp(resolve(app, opt));
  const fs::path out = exp.config().out_dir;
  ssc::PlotTables tables;
  if (fs::exists(out / "threshold_sweep.csv")) {
    tables.sweep = ssc::parse_sweep_csv(ssc::read_text(out / "threshold_sweep.csv"));
  }
  if (fs::exists(out / "boundary_compare.csv")) {
    tables.boundary = ssc::parse_boundary_csv(ssc::read_text(out / "boundary_compare.csv"));
  }
  tables.epsilon = ssc::run_epsilon_series(exp, exp.config().epsilon_values);
  ssc::write_text(out / "epsilon_series.csv", ssc::epsilon_csv(tables.epsilon));
  for (const auto& p : ssc::emit_plots(out, tables)) std::printf("%s\n", p.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"selective edge filtering experiments"};
  app.require_subcommand(1);
  Options opt;

  struct Verb {
    const char* name;
    const char* help;
    int (*fn)(CLI::App&, Options&);
  };
  const Verb verbs[] = {
      {"train", "train a model and write it as .sscm", run_train},
      {"attack", "attack the evaluation subset and write the adversarial batch", run_attack},
      {"eval", "clean and adversarial metrics as CSV and JSON", run_eval},
      {"sweep-threshold", "accuracy across selection thresholds", run_sweep},
      {"filter-matrix", "filters x modes x threats x attacks", run_matrix},
      {"boundary-compare", "boundary attack norms, undefended vs defended", run_boundary},
      {"report", "plot data files from earlier outputs", run_report},
  };
  std::vector<std::pair<CLI::App*, const Verb*>> subs;
  for (const auto& v : verbs) {
    CLI::App* sub = app.add_subcommand(v.name, v.help);
    add_common(*sub, opt);
    if (std::string(v.name) == "train" || std::string(v.name) == "attack" ||
        std::string(v.name) == "eval") {
      sub->add_option("--model", opt.model_path, "model file (.sscm)");
    }
    if (std::string(v.name) == "boundary-compare") {
      sub->add_option("--images", opt.images, "number of images");
    }
    subs.emplace_back(sub, &v);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return 2;
  }
  try {
    for (auto& [sub, verb] : subs) {
      if (sub->parsed()) return verb->fn(*sub, opt);
    }
  } catch (const Error& e) {
    print_error(ssc::to_string(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 1;
  }
  return 1;
}
