#include "cadapter/scores.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cadapter/error.hpp"

namespace cadapter {

const char* score_kind_name(ScoreKind kind) {
  switch (kind) {
    case ScoreKind::Thr: return "thr";
    case ScoreKind::Aps: return "aps";
    case ScoreKind::Raps: return "raps";
  }
  return "?";
}

ScoreKind score_kind_from_name(const std::string& name) {
  if (name == "thr") return ScoreKind::Thr;
  if (name == "aps") return ScoreKind::Aps;
  if (name == "raps") return ScoreKind::Raps;
  throw ValidationError("unknown score kind '" + name + "' (want thr|aps|raps)");
}

void ScoreSpec::validate() const {
  if (kind == ScoreKind::Raps) {
    if (raps_lambda < 0.0 || !std::isfinite(raps_lambda))
      throw ValidationError("score spec: raps_lambda must be >= 0 and finite");
    if (raps_kreg < 0) throw ValidationError("score spec: raps_kreg must be >= 0");
  }
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw ValidationError("softmax: empty input");
  double hi = logits[0];
  for (double v : logits) {
    if (!std::isfinite(v)) throw ValidationError("softmax: non-finite input");
    hi = std::max(hi, v);
  }
  std::vector<double> out(logits.size());
  double denom = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - hi);
    denom += out[i];
  }
  for (double& v : out) v /= denom;
  return out;
}

std::vector<int> prob_order(std::span<const double> probs) {
  std::vector<int> order(probs.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    if (probs[static_cast<std::size_t>(a)] != probs[static_cast<std::size_t>(b)])
      return probs[static_cast<std::size_t>(a)] > probs[static_cast<std::size_t>(b)];
    return a < b;
  });
  return order;
}

namespace {

void check_label(std::span<const double> probs, int label) {
  if (label < 0 || static_cast<std::size_t>(label) >= probs.size())
    throw ValidationError("score: label " + std::to_string(label) + " out of range");
}

}  // namespace

double score(const ScoreSpec& spec, std::span<const double> probs, int label, double u) {
  check_label(probs, label);
  spec.validate();
  if (spec.kind == ScoreKind::Thr) return 1.0 - probs[static_cast<std::size_t>(label)];

  // Mass of classes ahead of `label` in the tie-broken order, plus the label's
  // own rank. Accumulated in sorted order so score_all_labels matches exactly.
  const auto order = prob_order(probs);
  double mass_ahead = 0.0;
  int rank = 0;  // 1-based once found
  for (std::size_t pos = 0; pos < order.size(); ++pos) {
    if (order[pos] == label) {
      rank = static_cast<int>(pos) + 1;
      break;
    }
    mass_ahead += probs[static_cast<std::size_t>(order[pos])];
  }
  double s = mass_ahead + u * probs[static_cast<std::size_t>(label)];
  if (spec.kind == ScoreKind::Raps)
    s += spec.raps_lambda * std::max(0, rank - spec.raps_kreg);
  return s;
}

std::vector<double> score_all_labels(const ScoreSpec& spec, std::span<const double> probs,
                                     double u) {
  spec.validate();
  const std::size_t k = probs.size();
  std::vector<double> out(k);
  if (spec.kind == ScoreKind::Thr) {
    for (std::size_t y = 0; y < k; ++y) out[y] = 1.0 - probs[y];
    return out;
  }
  const auto order = prob_order(probs);
  double mass_ahead = 0.0;
  for (std::size_t pos = 0; pos < k; ++pos) {
    const auto y = static_cast<std::size_t>(order[pos]);
    double s = mass_ahead + u * probs[y];
    if (spec.kind == ScoreKind::Raps)
      s += spec.raps_lambda * std::max(0, static_cast<int>(pos) + 1 - spec.raps_kreg);
    out[y] = s;
    mass_ahead += probs[y];
  }
  return out;
}

std::vector<double> score_grad(const ScoreSpec& spec, std::span<const double> probs, int label,
                               double u) {
  check_label(probs, label);
  const std::size_t k = probs.size();
  std::vector<double> grad(k, 0.0);
  switch (spec.kind) {
    case ScoreKind::Thr:
      grad[static_cast<std::size_t>(label)] = -1.0;
      return grad;
    case ScoreKind::Aps: {
      // u constant, class order frozen: 1 ahead of the label, u at the label.
      const auto order = prob_order(probs);
      for (std::size_t pos = 0; pos < k; ++pos) {
        const auto y = static_cast<std::size_t>(order[pos]);
        if (order[pos] == label) {
          grad[y] = u;
          break;
        }
        grad[y] = 1.0;
      }
      return grad;
    }
    case ScoreKind::Raps:
      throw ValidationError(
          "score_grad: RAPS is unsupported for training (rank penalty is piecewise constant)");
  }
  throw ValidationError("score_grad: bad score kind");
}

}  // namespace cadapter
