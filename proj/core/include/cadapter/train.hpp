#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cadapter/adapter.hpp"
#include "cadapter/dataset.hpp"
#include "cadapter/scores.hpp"

namespace cadapter {

enum class LossKind { Pairwise, SizeLoss };
enum class EarlyStopMetric { Size, Sscv, None };

struct TrainConfig {
  double surrogate_t = 1e-4;
  double learning_rate = 0.1;
  int batch_size = 256;
  int iterations = 240;
  std::uint64_t seed = 0;
  LossKind loss_kind = LossKind::Pairwise;
  ScoreKind train_score = ScoreKind::Thr;  // Thr or Aps (deterministic, u = 1)
  EarlyStopMetric early_stop = EarlyStopMetric::Size;
  double early_stop_alpha = 0.1;
  int eval_every = 10;
  double size_loss_alpha = 0.01;
  double size_loss_t = 0.1;
  bool residual = true;
  bool softmax_rescale = true;
  bool diagonal_only = false;  // restrict updates to the weight diagonal
  /// Score used for the validation metrics; randomized APS draws one u per
  /// validation example (fixed across evaluations so iterations compare).
  ScoreSpec val_score{ScoreKind::Aps, true};

  void validate() const;
};

struct LossResult {
  double loss = 0.0;
  std::vector<double> grad_weight;  // k x k
  std::vector<double> grad_bias;    // k
};

/// Mean sigmoid_T(S(x,y) - S(xhat,yhat)) over the batch crossed with its
/// auxiliary batch (every instance paired with every class, true labels
/// included). Gradients flow through scores, softmax, and the adapter.
LossResult pairwise_loss(const AdapterParams& params, const LogitDataset& data,
                         std::span<const std::size_t> batch, ScoreKind train_score,
                         double surrogate_t);

/// Mean soft set size on test_half at a soft threshold calibrated on cal_half
/// (stop-gradient); gradients flow through the test-half scores only.
LossResult size_loss(const AdapterParams& params, const LogitDataset& data,
                     std::span<const std::size_t> cal_half,
                     std::span<const std::size_t> test_half, double alpha, double t_soft,
                     ScoreKind train_score);

struct AdamState {
  std::vector<double> m_weight, v_weight, m_bias, v_bias;
  long step = 0;

  static AdamState zeros(int k);
};

/// Bias-corrected Adam update, beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
void adam_step(AdapterParams& params, AdamState& state, std::span<const double> grad_weight,
               std::span<const double> grad_bias, double learning_rate);

struct TraceRow {
  int iteration = 0;
  double loss = 0.0;
  double val_size = 0.0;
  double val_coverage = 0.0;
  double val_sscv = 0.0;
};

struct TrainTrace {
  std::vector<TraceRow> rows;             // iteration 0, then every eval_every
  std::vector<double> iteration_losses;   // one entry per optimizer step
  int best_iteration = 0;

  std::string to_csv() const;  // iteration,loss,val_size,val_coverage,val_sscv
};

struct TuneResult {
  AdapterParams params;  // best snapshot; final params when early stop is None
  TrainTrace trace;
};

/// Runs `iterations` minibatch steps over the tune split (shuffled per epoch
/// under the seed). Validation metrics use the hard pipeline on a fixed
/// seeded 50/50 halving of the validation split.
TuneResult tune(const LogitDataset& tune_split, const LogitDataset* validation_split,
                const TrainConfig& cfg);

}  // namespace cadapter
