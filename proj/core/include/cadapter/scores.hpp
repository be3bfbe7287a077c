#pragma once

#include <span>
#include <string>
#include <vector>

namespace cadapter {

enum class ScoreKind { Thr, Aps, Raps };

const char* score_kind_name(ScoreKind kind);
ScoreKind score_kind_from_name(const std::string& name);

/// Non-conformity score selection. The RAPS fields are ignored unless
/// kind == Raps. When aps_randomized is set, pipelines draw one u per example
/// (shared across that example's labels); otherwise u = 1 is used.
struct ScoreSpec {
  ScoreKind kind = ScoreKind::Thr;
  bool aps_randomized = false;
  double raps_lambda = 0.001;
  int raps_kreg = 1;

  void validate() const;
};

/// Numerically stable (max-subtracted) softmax. Throws ValidationError on
/// non-finite input.
std::vector<double> softmax(std::span<const double> logits);

/// Class order used everywhere: descending probability, ties by ascending
/// class index. Returns the class indices in that order.
std::vector<int> prob_order(std::span<const double> probs);

/// Non-conformity score of one label.
///   THR : 1 - p[label]
///   APS : mass of classes ahead of `label` in prob_order + u * p[label]
///   RAPS: APS + raps_lambda * max(0, rank(label) - raps_kreg), 1-based rank
double score(const ScoreSpec& spec, std::span<const double> probs, int label, double u = 1.0);

/// score() for every label in one pass (single sort).
std::vector<double> score_all_labels(const ScoreSpec& spec, std::span<const double> probs,
                                     double u = 1.0);

/// Gradient of score() w.r.t. probs with u held constant and the class order
/// frozen. Supports THR and deterministic APS; RAPS throws ValidationError
/// (its rank penalty is piecewise constant in probs).
std::vector<double> score_grad(const ScoreSpec& spec, std::span<const double> probs, int label,
                               double u = 1.0);

}  // namespace cadapter
