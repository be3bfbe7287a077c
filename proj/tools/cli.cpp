#include "cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "cadapter/adapter.hpp"
#include "cadapter/conformal.hpp"
#include "cadapter/dataset.hpp"
#include "cadapter/error.hpp"
#include "cadapter/metrics.hpp"
#include "cadapter/oracle.hpp"
#include "cadapter/rng.hpp"
#include "cadapter/train.hpp"

namespace cadapter::cli {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitAuditViolation = 2;

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << content;
  if (!out) throw IoError("error writing '" + path + "'");
}

struct ScoreFlags {
  std::string kind = "thr";
  double raps_lambda = 0.001;
  int raps_kreg = 1;
  bool randomized = true;

  ScoreSpec spec() const {
    ScoreSpec s;
    s.kind = score_kind_from_name(kind);
    s.aps_randomized = randomized && s.kind != ScoreKind::Thr;
    s.raps_lambda = raps_lambda;
    s.raps_kreg = raps_kreg;
    return s;
  }
};

void add_score_flags(CLI::App* cmd, ScoreFlags& flags) {
  cmd->add_option("--score", flags.kind, "Non-conformity score (thr|aps|raps)")
      ->check(CLI::IsMember({"thr", "aps", "raps"}));
  cmd->add_option("--raps-lambda", flags.raps_lambda, "RAPS rank penalty weight");
  cmd->add_option("--raps-kreg", flags.raps_kreg, "RAPS penalty-free rank count");
  cmd->add_flag("--randomized,!--no-randomized", flags.randomized,
                "Draw one uniform u per example for APS/RAPS");
}

void configure_subcommand(CLI::App* cmd) {
  // Documentation only: the token is consumed by merge_config() before CLI11
  // ever parses the command line.
  static std::string ignored;
  cmd->add_option("--config", ignored, "Flat key = value configuration file; flags win");
}

// Expands a flat `key = value` file ('#' starts a comment) into --key=value
// tokens. Unknown keys then fail as unknown options.
std::vector<std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file '" + path + "'");
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return std::string{};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
  };
  std::vector<std::string> expanded;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError("config '" + path + "': missing '=' on line " + std::to_string(line_no));
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ParseError("config '" + path + "': empty key on line " + std::to_string(line_no));
    expanded.push_back("--" + key + "=" + value);
  }
  return expanded;
}

// Pulls --config out of the raw arguments and splices the expanded file in
// right after the (possibly nested) subcommand name. Every global option is a
// plain flag, so the first token without a dash is the subcommand. Explicit
// flags land after the spliced block and win under the TakeLast policy.
std::vector<std::string> merge_config(const std::vector<std::string>& args) {
  std::string path;
  std::vector<std::string> cleaned;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) throw ValidationError("--config needs a file path");
      path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
    } else {
      cleaned.push_back(args[i]);
    }
  }
  if (path.empty()) return cleaned;

  const auto expanded = parse_config_file(path);
  std::size_t insert_at = cleaned.size();
  for (std::size_t i = 0; i < cleaned.size(); ++i) {
    if (cleaned[i].rfind('-', 0) == 0) continue;
    insert_at = i + 1;
    if (cleaned[i] == "audit" && i + 1 < cleaned.size()) insert_at = i + 2;
    break;
  }
  cleaned.insert(cleaned.begin() + static_cast<std::ptrdiff_t>(insert_at), expanded.begin(),
                 expanded.end());
  return cleaned;
}

// Averages repeated runs; seeds derive as seed + repeat index.
MetricsReport mean_eval(const LogitDataset& cal, const LogitDataset& test, const ScoreSpec& spec,
                        double alpha, const AdapterParams* params, std::uint64_t seed,
                        int repeats) {
  MetricsReport mean;
  for (int r = 0; r < repeats; ++r) {
    const auto one = conformal_evaluate(cal, test, spec, alpha, params, seed + static_cast<std::uint64_t>(r));
    mean.size += one.size;
    mean.coverage += one.coverage;
    mean.covgap += one.covgap;
    mean.sscv += one.sscv;
    mean.alpha = one.alpha;
    mean.n_test = one.n_test;
  }
  mean.size /= repeats;
  mean.coverage /= repeats;
  mean.covgap /= repeats;
  mean.sscv /= repeats;
  return mean;
}

nlohmann::json report_json(const MetricsReport& r) {
  return nlohmann::json{{"alpha", r.alpha},   {"size", r.size}, {"coverage", r.coverage},
                        {"covgap", r.covgap}, {"sscv", r.sscv}, {"n_test", r.n_test}};
}

int cmd_gen_synth(const SynthConfig& cfg, const std::string& out_dir, bool json,
                  std::ostream& out) {
  const auto splits = synthesize(cfg);
  std::filesystem::create_directories(out_dir);
  nlohmann::json summary;
  summary["classes"] = cfg.class_count;
  summary["seed"] = cfg.seed;
  for (const auto& [name, ds] : splits) {
    const auto path = (std::filesystem::path(out_dir) / (name + ".csv")).string();
    save_logits(ds, path);
    summary["splits"][name] = {{"rows", ds.size()}, {"path", path}};
  }
  if (json) {
    out << summary.dump() << '\n';
  } else {
    out << "generated synthetic logits: K=" << cfg.class_count << " seed=" << cfg.seed
        << " signal=" << cfg.signal << " temperature=" << cfg.temperature
        << " noise_sd=" << cfg.noise_sd << '\n';
    for (const auto& [name, ds] : splits)
      out << "  " << name << ".csv: " << ds.size() << " rows\n";
  }
  return kExitOk;
}

int cmd_tune(const std::string& tune_path, const std::string& val_path,
             const std::string& out_dir, const TrainConfig& cfg, bool json, std::ostream& out) {
  const auto tune_ds = load_logits(tune_path);
  std::optional<LogitDataset> val_ds;
  if (!val_path.empty()) val_ds = load_logits(val_path);

  const auto result = tune(tune_ds, val_ds ? &*val_ds : nullptr, cfg);

  std::filesystem::create_directories(out_dir);
  const auto params_path = (std::filesystem::path(out_dir) / "adapter.json").string();
  const auto trace_path = (std::filesystem::path(out_dir) / "trace.csv").string();
  save_params(result.params, params_path);
  write_text_file(trace_path, result.trace.to_csv());

  const double final_loss = result.trace.iteration_losses.back();
  if (json) {
    nlohmann::json j;
    j["adapter"] = params_path;
    j["trace"] = trace_path;
    j["iterations"] = cfg.iterations;
    j["final_loss"] = final_loss;
    j["best_iteration"] = result.trace.best_iteration;
    out << j.dump() << '\n';
  } else {
    out << "tuned adapter for " << cfg.iterations << " iterations; final loss " << final_loss
        << "; best iteration " << result.trace.best_iteration << '\n';
    out << "wrote " << params_path << " and " << trace_path << '\n';
  }
  return kExitOk;
}

int cmd_calibrate(const std::string& cal_path, const ScoreSpec& spec, double alpha,
                  const std::string& adapter_path, std::uint64_t seed, const std::string& out_path,
                  bool json, std::ostream& out) {
  const auto cal = load_logits(cal_path);
  std::optional<AdapterParams> params;
  if (!adapter_path.empty()) params = load_params(adapter_path);
  if (params && params->k != cal.class_count)
    throw ValidationError("calibrate: adapter k does not match the data");

  Rng u_rng(derive_seed(seed, 11));
  std::vector<double> scores;
  scores.reserve(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i) {
    const auto probs = params ? softmax(adapter_forward(*params, cal.row(i)))
                              : softmax(cal.row(i));
    const double u = spec.aps_randomized ? u_rng.uniform() : 1.0;
    scores.push_back(score(spec, probs, cal.labels[i], u));
  }
  const auto result = calibrate(scores, alpha, spec);
  if (!out_path.empty()) write_text_file(out_path, result.to_json() + "\n");
  if (json) {
    out << result.to_json() << '\n';
  } else {
    out << "alpha=" << result.alpha << " tau=";
    if (std::isinf(result.tau))
      out << "inf";
    else
      out << result.tau;
    out << " n=" << result.n << " score=" << score_kind_name(spec.kind) << '\n';
  }
  return kExitOk;
}

int cmd_eval(const std::string& cal_path, const std::string& test_path, const ScoreSpec& spec,
             double alpha, const std::string& adapter_path, bool compare, int repeats,
             std::uint64_t seed, bool json, std::ostream& out) {
  if (repeats < 1) throw ValidationError("eval: repeats must be >= 1");
  const auto cal = load_logits(cal_path);
  const auto test = load_logits(test_path);
  std::optional<AdapterParams> params;
  if (!adapter_path.empty()) params = load_params(adapter_path);
  if (compare && !params) throw ValidationError("eval: --compare needs --adapter");

  const auto with_params = params ? &*params : nullptr;
  if (compare) {
    const auto baseline = mean_eval(cal, test, spec, alpha, nullptr, seed, repeats);
    const auto adapted = mean_eval(cal, test, spec, alpha, with_params, seed, repeats);
    if (json) {
      nlohmann::json j;
      j["score"] = score_kind_name(spec.kind);
      j["repeats"] = repeats;
      j["baseline"] = report_json(baseline);
      j["adapter"] = report_json(adapted);
      out << j.dump() << '\n';
    } else {
      char buf[160];
      out << "metric        baseline     adapter\n";
      std::snprintf(buf, sizeof(buf), "%-10s %11.4f %11.4f\n", "coverage", baseline.coverage,
                    adapted.coverage);
      out << buf;
      std::snprintf(buf, sizeof(buf), "%-10s %11.4f %11.4f\n", "size", baseline.size,
                    adapted.size);
      out << buf;
      std::snprintf(buf, sizeof(buf), "%-10s %11.4f %11.4f\n", "covgap", baseline.covgap,
                    adapted.covgap);
      out << buf;
      std::snprintf(buf, sizeof(buf), "%-10s %11.4f %11.4f\n", "sscv", baseline.sscv,
                    adapted.sscv);
      out << buf;
      std::snprintf(buf, sizeof(buf), "(alpha %.4g, score %s, repeats %d, n_test %zu)\n", alpha,
                    score_kind_name(spec.kind), repeats, baseline.n_test);
      out << buf;
    }
    return kExitOk;
  }

  const auto report = mean_eval(cal, test, spec, alpha, with_params, seed, repeats);
  if (json) {
    nlohmann::json j = report_json(report);
    j["score"] = score_kind_name(spec.kind);
    j["repeats"] = repeats;
    j["adapter"] = !adapter_path.empty();
    out << j.dump() << '\n';
  } else {
    out << report.to_text();
  }
  return kExitOk;
}

int cmd_hist(const std::string& data_path, const ScoreSpec& spec,
             const std::string& adapter_path, int bins, const std::string& out_path,
             std::uint64_t seed, bool json, std::ostream& out) {
  const auto ds = load_logits(data_path);
  std::optional<AdapterParams> params;
  if (!adapter_path.empty()) params = load_params(adapter_path);
  const auto hist = score_histogram(ds, params ? &*params : nullptr, spec, bins, seed);
  write_text_file(out_path, hist.to_csv());
  if (json) {
    nlohmann::json j;
    j["bins"] = bins;
    j["rows"] = ds.size();
    j["path"] = out_path;
    out << j.dump() << '\n';
  } else {
    out << "wrote " << bins << "-bin score histogram for " << ds.size() << " rows to " << out_path
        << '\n';
  }
  return kExitOk;
}

int cmd_audit_prop1(const std::string& data_path, const ScoreSpec& spec, int pairs,
                    const std::vector<std::string>& adapter_paths, std::uint64_t seed, bool json,
                    std::ostream& out) {
  if (pairs < 1) throw ValidationError("audit prop1: pairs must be >= 1");
  const auto ds = load_logits(data_path);

  std::vector<AdapterParams> owned;
  for (const auto& path : adapter_paths) owned.push_back(load_params(path));
  Rng rng(derive_seed(seed, 40));
  for (int i = 0; i < 2 * pairs; ++i) {
    auto p = AdapterParams::zeros(ds.class_count);
    for (auto& w : p.weight) w = rng.normal() * 0.6;
    for (auto& b : p.bias) b = rng.normal() * 0.6;
    owned.push_back(std::move(p));
  }
  std::vector<const AdapterParams*> candidates;
  candidates.push_back(nullptr);  // raw logits
  for (const auto& p : owned) candidates.push_back(&p);

  const auto report = check_prop1(ds, candidates, spec, seed);
  if (json) {
    out << report.to_json() << '\n';
  } else {
    out << "prop1 audit: " << report.candidates.size() << " candidates, "
        << report.violations.size() << " violations, max identity gap "
        << report.max_identity_gap << '\n';
  }
  return report.consistent() ? kExitOk : kExitAuditViolation;
}

int cmd_audit_grad(const std::string& data_path, const std::string& adapter_path,
                   const std::string& train_score, double surrogate_t, double h, double tol,
                   int batch_size, int classes, int rows, std::uint64_t seed, bool json,
                   std::ostream& out) {
  LogitDataset ds;
  if (!data_path.empty()) {
    ds = load_logits(data_path);
  } else {
    SynthConfig cfg;
    cfg.class_count = classes;
    cfg.sizes = {{"audit", static_cast<std::size_t>(rows)}};
    cfg.signal = 1.0;
    cfg.temperature = 1.0;
    cfg.seed = seed;
    ds = synthesize(cfg).at("audit");
  }
  AdapterParams params = adapter_path.empty() ? AdapterParams::zeros(ds.class_count)
                                              : load_params(adapter_path);

  std::vector<std::size_t> batch;
  Rng rng(derive_seed(seed, 41));
  const std::size_t want = std::min<std::size_t>(static_cast<std::size_t>(batch_size), ds.size());
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  batch.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(want));

  const auto report =
      grad_audit(params, ds, batch, score_kind_from_name(train_score), surrogate_t, h);
  if (json) {
    out << report.to_json() << '\n';
  } else {
    out << "grad audit: max relative error " << report.max_rel_error << " over "
        << report.entries_checked << " entries (" << report.examples_skipped
        << " examples skipped)\n";
  }
  return report.max_rel_error < tol ? kExitOk : kExitAuditViolation;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"conformal prediction engine with an order-preserving logit adapter"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  bool json = false;
  app.add_flag("--json", json, "Emit a single JSON document instead of text");

  // gen-synth
  auto* gen = app.add_subcommand("gen-synth", "Generate synthetic logit CSV splits");
  configure_subcommand(gen);
  SynthConfig synth;
  synth.class_count = 20;
  std::map<std::string, std::size_t> synth_sizes{
      {"tune", 5000}, {"cal", 2000}, {"val", 1000}, {"test", 2000}};
  std::string gen_out = ".";
  gen->add_option("--classes", synth.class_count, "Number of classes K")->check(CLI::Range(2, 100000));
  gen->add_option("--tune", synth_sizes["tune"], "Rows in tune.csv");
  gen->add_option("--cal", synth_sizes["cal"], "Rows in cal.csv");
  gen->add_option("--val", synth_sizes["val"], "Rows in val.csv");
  gen->add_option("--test", synth_sizes["test"], "Rows in test.csv");
  gen->add_option("--signal", synth.signal, "Logit boost on the true class");
  gen->add_option("--temp", synth.temperature, "Miscalibration temperature divisor");
  gen->add_option("--noise-sd", synth.noise_sd, "Gaussian noise standard deviation");
  gen->add_option("--seed", synth.seed, "Generator seed");
  gen->add_option("--out", gen_out, "Output directory");
  gen->callback([&] {
    synth.sizes = {{"tune", synth_sizes["tune"]},
                   {"cal", synth_sizes["cal"]},
                   {"val", synth_sizes["val"]},
                   {"test", synth_sizes["test"]}};
    cmd_gen_synth(synth, gen_out, json, out);
  });

  // tune
  auto* tune_cmd = app.add_subcommand("tune", "Tune the adapter on a logit file");
  configure_subcommand(tune_cmd);
  std::string tune_file, val_file, tune_out = ".";
  TrainConfig tcfg;
  std::string loss_name = "pairwise", train_score_name = "thr", early_name = "size",
              val_score_name = "aps";
  bool val_randomized = true;
  tune_cmd->add_option("--tune", tune_file, "Tuning split CSV")->required();
  tune_cmd->add_option("--val", val_file, "Validation split CSV (for early stopping)");
  tune_cmd->add_option("--out", tune_out, "Output directory for adapter.json and trace.csv");
  tune_cmd->add_option("--loss", loss_name, "Objective (pairwise|size)")
      ->check(CLI::IsMember({"pairwise", "size"}));
  tune_cmd->add_option("--train-score", train_score_name, "Score used in the loss (thr|aps)")
      ->check(CLI::IsMember({"thr", "aps"}));
  tune_cmd->add_option("--T", tcfg.surrogate_t, "Surrogate sigmoid temperature");
  tune_cmd->add_option("--lr", tcfg.learning_rate, "Adam learning rate");
  tune_cmd->add_option("--batch", tcfg.batch_size, "Minibatch size");
  tune_cmd->add_option("--iters", tcfg.iterations, "Optimizer iterations");
  tune_cmd->add_option("--eval-every", tcfg.eval_every, "Validation cadence in iterations");
  tune_cmd->add_option("--early-stop", early_name, "Early-stop metric (size|sscv|none)")
      ->check(CLI::IsMember({"size", "sscv", "none"}));
  tune_cmd->add_option("--early-alpha", tcfg.early_stop_alpha, "Alpha for validation metrics");
  tune_cmd->add_option("--size-alpha", tcfg.size_loss_alpha, "Alpha inside the size loss");
  tune_cmd->add_option("--size-T", tcfg.size_loss_t, "Sigmoid temperature of the size loss");
  tune_cmd->add_option("--seed", tcfg.seed, "Run seed");
  tune_cmd->add_flag("--residual,!--no-residual", tcfg.residual, "Add the raw logits back");
  tune_cmd->add_flag("--rescale,!--no-rescale", tcfg.softmax_rescale,
                     "Softmax-rescale the adapter input");
  tune_cmd->add_flag("--diagonal", tcfg.diagonal_only, "Restrict updates to the weight diagonal");
  tune_cmd->add_option("--val-score", val_score_name, "Validation metric score (thr|aps|raps)")
      ->check(CLI::IsMember({"thr", "aps", "raps"}));
  tune_cmd->add_flag("--val-randomized,!--no-val-randomized", val_randomized,
                     "Randomize APS in validation metrics");
  tune_cmd->callback([&] {
    tcfg.loss_kind = loss_name == "pairwise" ? LossKind::Pairwise : LossKind::SizeLoss;
    tcfg.train_score = score_kind_from_name(train_score_name);
    tcfg.early_stop = early_name == "size"
                          ? EarlyStopMetric::Size
                          : (early_name == "sscv" ? EarlyStopMetric::Sscv : EarlyStopMetric::None);
    tcfg.val_score.kind = score_kind_from_name(val_score_name);
    tcfg.val_score.aps_randomized = val_randomized && tcfg.val_score.kind != ScoreKind::Thr;
    cmd_tune(tune_file, val_file, tune_out, tcfg, json, out);
  });

  // calibrate
  auto* cal_cmd = app.add_subcommand("calibrate", "Compute the conformal threshold");
  configure_subcommand(cal_cmd);
  std::string cal_file, cal_adapter, cal_out;
  ScoreFlags cal_score;
  double cal_alpha = 0.1;
  std::uint64_t cal_seed = 0;
  cal_cmd->add_option("--cal", cal_file, "Calibration split CSV")->required();
  add_score_flags(cal_cmd, cal_score);
  cal_cmd->add_option("--alpha", cal_alpha, "Target error rate");
  cal_cmd->add_option("--adapter", cal_adapter, "Adapter parameter file");
  cal_cmd->add_option("--seed", cal_seed, "Seed for randomized APS draws");
  cal_cmd->add_option("--out", cal_out, "Write the calibration JSON here");
  cal_cmd->callback([&] {
    cmd_calibrate(cal_file, cal_score.spec(), cal_alpha, cal_adapter, cal_seed, cal_out, json,
                  out);
  });

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Calibrate and evaluate prediction sets");
  configure_subcommand(eval_cmd);
  std::string eval_cal, eval_test, eval_adapter;
  ScoreFlags eval_score;
  double eval_alpha = 0.1;
  bool compare = false;
  int repeats = 10;
  std::uint64_t eval_seed = 0;
  eval_cmd->add_option("--cal", eval_cal, "Calibration split CSV")->required();
  eval_cmd->add_option("--test", eval_test, "Test split CSV")->required();
  add_score_flags(eval_cmd, eval_score);
  eval_cmd->add_option("--alpha", eval_alpha, "Target error rate");
  eval_cmd->add_option("--adapter", eval_adapter, "Adapter parameter file");
  eval_cmd->add_flag("--compare", compare, "Report baseline and adapter side by side");
  eval_cmd->add_option("--repeats", repeats, "Independent repeats to average");
  eval_cmd->add_option("--seed", eval_seed, "Base seed; repeats use seed+index");
  eval_cmd->callback([&] {
    cmd_eval(eval_cal, eval_test, eval_score.spec(), eval_alpha, eval_adapter, compare, repeats,
             eval_seed, json, out);
  });

  // hist
  auto* hist_cmd = app.add_subcommand("hist", "Score histograms of matched and random labels");
  configure_subcommand(hist_cmd);
  std::string hist_data, hist_adapter, hist_out = "hist.csv";
  ScoreFlags hist_score;
  int bins = 50;
  std::uint64_t hist_seed = 0;
  hist_cmd->add_option("--data", hist_data, "Logit CSV to score")->required();
  add_score_flags(hist_cmd, hist_score);
  hist_cmd->add_option("--adapter", hist_adapter, "Adapter parameter file");
  hist_cmd->add_option("--bins", bins, "Histogram bins")->check(CLI::Range(2, 100000));
  hist_cmd->add_option("--out", hist_out, "Output CSV path");
  hist_cmd->add_option("--seed", hist_seed, "Seed for random labels and APS draws");
  hist_cmd->callback([&] {
    cmd_hist(hist_data, hist_score.spec(), hist_adapter, bins, hist_out, hist_seed, json, out);
  });

  // audit
  auto* audit = app.add_subcommand("audit", "Brute-force verification sweeps");
  audit->require_subcommand(1);
  int exit_code = kExitOk;

  auto* prop1 = audit->add_subcommand("prop1", "Pair-discriminability vs set-size equivalence");
  configure_subcommand(prop1);
  std::string prop1_data;
  ScoreFlags prop1_score;
  int prop1_pairs = 20;
  std::vector<std::string> prop1_adapters;
  std::uint64_t prop1_seed = 0;
  prop1->add_option("--data", prop1_data, "Logit CSV to audit on")->required();
  add_score_flags(prop1, prop1_score);
  prop1->add_option("--pairs", prop1_pairs, "Random adapter pairs to draw");
  prop1->add_option("--adapter", prop1_adapters, "Extra adapter files to include")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
  prop1->add_option("--seed", prop1_seed, "Seed for the random candidates");
  prop1->callback([&] {
    exit_code = cmd_audit_prop1(prop1_data, prop1_score.spec(), prop1_pairs, prop1_adapters,
                                prop1_seed, json, out);
  });

  auto* grad = audit->add_subcommand("grad", "Finite-difference gradient audit");
  configure_subcommand(grad);
  grad->set_help_flag("--help", "Print help");  // frees --h for the FD step
  std::string grad_data, grad_adapter, grad_score = "thr";
  double grad_t = 0.1, grad_h = 1e-6, grad_tol = 1e-5;
  int grad_batch = 8, grad_classes = 5, grad_rows = 16;
  std::uint64_t grad_seed = 0;
  grad->add_option("--data", grad_data, "Logit CSV (default: internal synthetic batch)");
  grad->add_option("--adapter", grad_adapter, "Adapter parameter file (default: zeros)");
  grad->add_option("--train-score", grad_score, "Differentiable score (thr|aps)")
      ->check(CLI::IsMember({"thr", "aps"}));
  grad->add_option("--T", grad_t, "Surrogate sigmoid temperature");
  grad->add_option("--h", grad_h, "Central-difference step");
  grad->add_option("--tol", grad_tol, "Max relative error allowed");
  grad->add_option("--batch", grad_batch, "Examples in the audited batch");
  grad->add_option("--classes", grad_classes, "Classes for the internal batch");
  grad->add_option("--rows", grad_rows, "Rows for the internal batch");
  grad->add_option("--seed", grad_seed, "Seed");
  grad->callback([&] {
    exit_code = cmd_audit_grad(grad_data, grad_adapter, grad_score, grad_t, grad_h, grad_tol,
                               grad_batch, grad_classes, grad_rows, grad_seed, json, out);
  });

  try {
    const auto merged = merge_config(args);
    std::vector<const char*> argv;
    argv.reserve(merged.size() + 1);
    argv.push_back("cadapter");
    for (const auto& a : merged) argv.push_back(a.c_str());
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitError;
  } catch (const ValidationError& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const IoError& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitError;
  }
  return exit_code;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, std::cout, std::cerr);
}

}  // namespace cadapter::cli
