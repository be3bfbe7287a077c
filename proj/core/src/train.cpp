#include "cadapter/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <sstream>

#include "cadapter/conformal.hpp"
#include "cadapter/error.hpp"
#include "cadapter/metrics.hpp"
#include "cadapter/rng.hpp"

namespace cadapter {

void TrainConfig::validate() const {
  if (!(surrogate_t > 0.0)) throw ValidationError("train: surrogate T must be positive");
  if (!(learning_rate > 0.0)) throw ValidationError("train: learning rate must be positive");
  if (batch_size < 1) throw ValidationError("train: batch size must be >= 1");
  if (iterations < 1) throw ValidationError("train: iterations must be >= 1");
  if (eval_every < 1) throw ValidationError("train: eval_every must be >= 1");
  if (!(early_stop_alpha > 0.0 && early_stop_alpha < 1.0))
    throw ValidationError("train: early-stop alpha must be in (0,1)");
  if (!(size_loss_alpha > 0.0 && size_loss_alpha < 1.0))
    throw ValidationError("train: size-loss alpha must be in (0,1)");
  if (!(size_loss_t > 0.0)) throw ValidationError("train: size-loss T must be positive");
  if (train_score == ScoreKind::Raps)
    throw ValidationError("train: RAPS has no usable training gradient; use thr or aps");
}

namespace {

// sigmoid(z) with the saturated tails short-circuited: beyond |z| = 38 the
// double rounds to exactly 0 or 1 and the derivative underflows.
constexpr double kSigmoidCut = 38.0;

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

struct ExampleForward {
  std::vector<double> probs;
  std::vector<double> scores;
};

ExampleForward forward_scores(const AdapterParams& params, const LogitDataset& data,
                              std::size_t row, ScoreKind kind) {
  ExampleForward ex;
  const auto refined = adapter_forward(params, data.row(row));
  ex.probs = softmax(refined);
  ex.scores = score_all_labels(ScoreSpec{kind}, ex.probs, 1.0);
  return ex;
}

// Applies the transpose of the frozen score Jacobian: d(loss)/d(probs) from
// d(loss)/d(scores). Equivalent to summing d_scores[y] * score_grad(. , y).
std::vector<double> score_vjp(ScoreKind kind, std::span<const double> probs,
                              std::span<const double> d_scores, double u) {
  const std::size_t k = probs.size();
  std::vector<double> d_probs(k, 0.0);
  if (kind == ScoreKind::Thr) {
    for (std::size_t y = 0; y < k; ++y) d_probs[y] = -d_scores[y];
    return d_probs;
  }
  // APS: dS_y/dp_m = [m ahead of y] + u * [m == y] in the frozen order, so
  // d_probs at sorted position q collects u * d_scores[q] plus the suffix of
  // d_scores behind q.
  const auto order = prob_order(probs);
  double suffix = 0.0;
  for (std::size_t pos = k; pos-- > 0;) {
    const auto y = static_cast<std::size_t>(order[pos]);
    d_probs[y] = u * d_scores[y] + suffix;
    suffix += d_scores[y];
  }
  return d_probs;
}

std::vector<double> softmax_vjp(std::span<const double> probs, std::span<const double> d_probs) {
  const std::size_t k = probs.size();
  double dot = 0.0;
  for (std::size_t i = 0; i < k; ++i) dot += probs[i] * d_probs[i];
  std::vector<double> d_logits(k);
  for (std::size_t i = 0; i < k; ++i) d_logits[i] = probs[i] * (d_probs[i] - dot);
  return d_logits;
}

void backprop_example(const AdapterParams& params, const LogitDataset& data, std::size_t row,
                      ScoreKind kind, const ExampleForward& ex,
                      std::span<const double> d_scores, LossResult& acc) {
  const auto d_probs = score_vjp(kind, ex.probs, d_scores, 1.0);
  const auto d_logits = softmax_vjp(ex.probs, d_probs);
  const auto g = adapter_backward(params, data.row(row), d_logits);
  for (std::size_t i = 0; i < g.weight.size(); ++i) acc.grad_weight[i] += g.weight[i];
  for (std::size_t i = 0; i < g.bias.size(); ++i) acc.grad_bias[i] += g.bias[i];
}

}  // namespace

LossResult pairwise_loss(const AdapterParams& params, const LogitDataset& data,
                         std::span<const std::size_t> batch, ScoreKind train_score,
                         double surrogate_t) {
  if (batch.empty()) throw ValidationError("pairwise_loss: empty batch");
  if (!(surrogate_t > 0.0)) throw ValidationError("pairwise_loss: T must be positive");
  if (train_score == ScoreKind::Raps)
    throw ValidationError("pairwise_loss: RAPS is unsupported for training");

  const std::size_t b = batch.size();
  const auto k = static_cast<std::size_t>(data.class_count);
  const double inv_t = 1.0 / surrogate_t;

  std::vector<ExampleForward> fwd(b);
  std::vector<double> true_scores(b);
  for (std::size_t i = 0; i < b; ++i) {
    fwd[i] = forward_scores(params, data, batch[i], train_score);
    true_scores[i] = fwd[i].scores[static_cast<std::size_t>(data.labels[batch[i]])];
  }

  // loss = mean over (true pair i) x (auxiliary pair (j, y)) of
  // sigmoid((s_i - s_jy) / T); the auxiliary batch is every instance crossed
  // with every label, true labels included.
  double loss_sum = 0.0;
  std::vector<double> g_true(b, 0.0);             // d(sum)/d(true score i)
  std::vector<std::vector<double>> g_aux(b, std::vector<double>(k, 0.0));
  for (std::size_t i = 0; i < b; ++i) {
    const double ts = true_scores[i];
    double gi = 0.0;
    for (std::size_t j = 0; j < b; ++j) {
      const auto& s = fwd[j].scores;
      auto& ga = g_aux[j];
      for (std::size_t y = 0; y < k; ++y) {
        const double z = (ts - s[y]) * inv_t;
        if (z > kSigmoidCut) {
          loss_sum += 1.0;
        } else if (z >= -kSigmoidCut) {
          const double sig = sigmoid(z);
          loss_sum += sig;
          const double d = sig * (1.0 - sig) * inv_t;
          gi += d;
          ga[y] -= d;
        }
      }
    }
    g_true[i] = gi;
  }

  const double scale = 1.0 / (static_cast<double>(b) * static_cast<double>(b * k));
  LossResult out;
  out.loss = loss_sum * scale;
  out.grad_weight.assign(k * k, 0.0);
  out.grad_bias.assign(k, 0.0);

  std::vector<double> d_scores(k);
  for (std::size_t e = 0; e < b; ++e) {
    for (std::size_t y = 0; y < k; ++y) d_scores[y] = g_aux[e][y] * scale;
    d_scores[static_cast<std::size_t>(data.labels[batch[e]])] += g_true[e] * scale;
    backprop_example(params, data, batch[e], train_score, fwd[e], d_scores, out);
  }
  return out;
}

LossResult size_loss(const AdapterParams& params, const LogitDataset& data,
                     std::span<const std::size_t> cal_half,
                     std::span<const std::size_t> test_half, double alpha, double t_soft,
                     ScoreKind train_score) {
  if (cal_half.empty() || test_half.empty())
    throw ValidationError("size_loss: both batch halves must be non-empty");
  if (!(t_soft > 0.0)) throw ValidationError("size_loss: T must be positive");
  if (train_score == ScoreKind::Raps)
    throw ValidationError("size_loss: RAPS is unsupported for training");

  const auto k = static_cast<std::size_t>(data.class_count);

  // Soft threshold from the calibration half; a stop-gradient constant.
  std::vector<double> cal_scores;
  cal_scores.reserve(cal_half.size());
  for (std::size_t row : cal_half) {
    const auto ex = forward_scores(params, data, row, train_score);
    cal_scores.push_back(ex.scores[static_cast<std::size_t>(data.labels[row])]);
  }
  const double tau = soft_quantile(cal_scores, alpha);

  LossResult out;
  out.grad_weight.assign(k * k, 0.0);
  out.grad_bias.assign(k, 0.0);

  const double inv_t = 1.0 / t_soft;
  const double inv_n = 1.0 / static_cast<double>(test_half.size());
  std::vector<double> d_scores(k);
  for (std::size_t row : test_half) {
    const auto ex = forward_scores(params, data, row, train_score);
    std::fill(d_scores.begin(), d_scores.end(), 0.0);
    for (std::size_t y = 0; y < k; ++y) {
      if (std::isinf(tau)) {
        out.loss += inv_n;
        continue;
      }
      const double z = (tau - ex.scores[y]) * inv_t;
      if (z > kSigmoidCut) {
        out.loss += inv_n;
      } else if (z >= -kSigmoidCut) {
        const double sig = sigmoid(z);
        out.loss += sig * inv_n;
        d_scores[y] = -sig * (1.0 - sig) * inv_t * inv_n;
      }
    }
    backprop_example(params, data, row, train_score, ex, d_scores, out);
  }
  return out;
}

AdamState AdamState::zeros(int k) {
  AdamState s;
  const auto kk = static_cast<std::size_t>(k);
  s.m_weight.assign(kk * kk, 0.0);
  s.v_weight.assign(kk * kk, 0.0);
  s.m_bias.assign(kk, 0.0);
  s.v_bias.assign(kk, 0.0);
  return s;
}

void adam_step(AdapterParams& params, AdamState& state, std::span<const double> grad_weight,
               std::span<const double> grad_bias, double learning_rate) {
  constexpr double kBeta1 = 0.9;
  constexpr double kBeta2 = 0.999;
  constexpr double kEps = 1e-8;
  if (grad_weight.size() != params.weight.size() || grad_bias.size() != params.bias.size())
    throw ValidationError("adam_step: gradient shapes do not match parameters");

  ++state.step;
  const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.step));

  auto update = [&](std::vector<double>& p, std::vector<double>& m, std::vector<double>& v,
                    std::span<const double> g) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
      v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
      p[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + kEps);
    }
  };
  update(params.weight, state.m_weight, state.v_weight, grad_weight);
  update(params.bias, state.m_bias, state.v_bias, grad_bias);
}

namespace {

struct ValidationSetup {
  std::vector<std::size_t> cal_rows;
  std::vector<std::size_t> eval_rows;
  std::vector<double> u;  // one draw per validation row, fixed across evaluations
};

ValidationSetup prepare_validation(const LogitDataset& val, const TrainConfig& cfg) {
  ValidationSetup v;
  std::vector<std::size_t> order(val.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(cfg.seed, 2));
  rng.shuffle(order);
  const std::size_t half = val.size() / 2;
  v.cal_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(half));
  v.eval_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(half), order.end());
  Rng u_rng(derive_seed(cfg.seed, 3));
  v.u.resize(val.size());
  for (auto& u : v.u) u = cfg.val_score.aps_randomized ? u_rng.uniform() : 1.0;
  return v;
}

MetricsReport validation_metrics(const AdapterParams& params, const LogitDataset& val,
                                 const ValidationSetup& setup, const TrainConfig& cfg) {
  std::vector<double> cal_scores;
  cal_scores.reserve(setup.cal_rows.size());
  for (std::size_t row : setup.cal_rows) {
    const auto probs = softmax(adapter_forward(params, val.row(row)));
    cal_scores.push_back(
        score(cfg.val_score, probs, val.labels[row], setup.u[row]));
  }
  const auto cal = calibrate(cal_scores, cfg.early_stop_alpha, cfg.val_score);

  std::vector<PredictionSet> sets;
  std::vector<int> labels;
  sets.reserve(setup.eval_rows.size());
  for (std::size_t row : setup.eval_rows) {
    const auto probs = softmax(adapter_forward(params, val.row(row)));
    sets.push_back(predict_set(cfg.val_score, probs, cal.tau, setup.u[row]));
    labels.push_back(val.labels[row]);
  }
  return evaluate(sets, labels, cfg.early_stop_alpha);
}

// Serves shuffled row indices, reshuffling each epoch; wraps as needed.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    rng_.shuffle(order_);
  }

  void fill(std::vector<std::size_t>& batch, std::size_t count) {
    batch.clear();
    while (batch.size() < count) {
      if (cursor_ == order_.size()) {
        rng_.shuffle(order_);
        cursor_ = 0;
      }
      batch.push_back(order_[cursor_++]);
    }
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t cursor_ = 0;
  Rng rng_;
};

}  // namespace

std::string TrainTrace::to_csv() const {
  std::ostringstream out;
  out << "iteration,loss,val_size,val_coverage,val_sscv\n";
  char buf[128];
  for (const auto& row : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%.17g,%.17g,%.17g,%.17g\n", row.iteration, row.loss,
                  row.val_size, row.val_coverage, row.val_sscv);
    out << buf;
  }
  return out.str();
}

TuneResult tune(const LogitDataset& tune_split, const LogitDataset* validation_split,
                const TrainConfig& cfg) {
  cfg.validate();
  tune_split.validate();
  if (cfg.early_stop != EarlyStopMetric::None &&
      (validation_split == nullptr || validation_split->size() < 2))
    throw ValidationError("tune: early stopping needs a validation split with >= 2 rows");
  if (validation_split != nullptr && validation_split->class_count != tune_split.class_count)
    throw ValidationError("tune: tune/validation class counts differ");

  const int k = tune_split.class_count;
  AdapterParams params = AdapterParams::zeros(k, cfg.residual, cfg.softmax_rescale);
  AdamState adam = AdamState::zeros(k);

  const bool have_val = validation_split != nullptr && validation_split->size() >= 2;
  ValidationSetup val_setup;
  if (have_val) val_setup = prepare_validation(*validation_split, cfg);

  TuneResult result;
  TrainTrace& trace = result.trace;
  double best_metric = std::numeric_limits<double>::infinity();
  AdapterParams best_params = params;
  int best_iteration = 0;

  auto record = [&](int iteration, double loss) {
    TraceRow row;
    row.iteration = iteration;
    row.loss = loss;
    row.val_size = std::numeric_limits<double>::quiet_NaN();
    row.val_coverage = std::numeric_limits<double>::quiet_NaN();
    row.val_sscv = std::numeric_limits<double>::quiet_NaN();
    if (have_val) {
      const auto report = validation_metrics(params, *validation_split, val_setup, cfg);
      row.val_size = report.size;
      row.val_coverage = report.coverage;
      row.val_sscv = report.sscv;
      const double metric = cfg.early_stop == EarlyStopMetric::Sscv ? report.sscv : report.size;
      if (metric < best_metric) {
        best_metric = metric;
        best_params = params;
        best_iteration = iteration;
      }
    }
    trace.rows.push_back(row);
  };

  BatchStream stream(tune_split.size(), derive_seed(cfg.seed, 1));
  std::vector<std::size_t> batch;
  std::vector<double> masked_weight;
  for (int t = 1; t <= cfg.iterations; ++t) {
    stream.fill(batch, static_cast<std::size_t>(cfg.batch_size));

    LossResult step;
    if (cfg.loss_kind == LossKind::Pairwise) {
      step = pairwise_loss(params, tune_split, batch, cfg.train_score, cfg.surrogate_t);
    } else {
      const std::size_t half = batch.size() / 2;
      if (half == 0 || half == batch.size())
        throw ValidationError("tune: size loss needs a batch of >= 2 examples");
      step = size_loss(params, tune_split, {batch.data(), half},
                       {batch.data() + half, batch.size() - half}, cfg.size_loss_alpha,
                       cfg.size_loss_t, cfg.train_score);
    }

    if (t == 1) record(0, step.loss);  // baseline row before the first update

    if (cfg.diagonal_only) {
      masked_weight.assign(step.grad_weight.size(), 0.0);
      const auto kk = static_cast<std::size_t>(k);
      for (std::size_t i = 0; i < kk; ++i) masked_weight[i * kk + i] = step.grad_weight[i * kk + i];
      adam_step(params, adam, masked_weight, step.grad_bias, cfg.learning_rate);
    } else {
      adam_step(params, adam, step.grad_weight, step.grad_bias, cfg.learning_rate);
    }
    trace.iteration_losses.push_back(step.loss);

    if (t % cfg.eval_every == 0) record(t, step.loss);
  }

  const bool track_best = have_val && cfg.early_stop != EarlyStopMetric::None;
  trace.best_iteration = track_best ? best_iteration : cfg.iterations;
  result.params = track_best ? best_params : params;
  return result;
}

}  // namespace cadapter
