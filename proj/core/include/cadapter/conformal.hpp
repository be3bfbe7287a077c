#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cadapter/scores.hpp"

namespace cadapter {

/// Split-conformal threshold: tau is the r-th smallest calibration score with
/// r = ceil((n+1)(1-alpha)), or +infinity when r > n.
struct CalibrationResult {
  double alpha = 0.0;
  double tau = 0.0;
  std::size_t n = 0;
  ScoreSpec score_spec;

  std::string to_json() const;  // +infinity encodes as the string "inf"
  static CalibrationResult from_json(const std::string& text);
};

struct PredictionSet {
  std::vector<char> member;  // one flag per class
  int size = 0;              // number of set members
};

CalibrationResult calibrate(std::span<const double> scores, double alpha,
                            const ScoreSpec& spec = {});

/// Label y is a member iff score(spec, probs, y, u) <= tau (inclusive).
PredictionSet predict_set(const ScoreSpec& spec, std::span<const double> probs, double tau,
                          double u = 1.0);

/// Contractually identical to calibrate(...).tau; downstream gradient code
/// treats the value as a constant (stop-gradient).
double soft_quantile(std::span<const double> scores, double alpha);

/// Per-example soft set size: sum over labels of sigmoid((tau_soft - S)/T).
std::vector<double> soft_set_sizes(const ScoreSpec& spec,
                                   const std::vector<std::vector<double>>& probs_batch,
                                   double tau_soft, double t_soft);

}  // namespace cadapter
