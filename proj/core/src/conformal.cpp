#include "cadapter/conformal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "cadapter/error.hpp"

namespace cadapter {

CalibrationResult calibrate(std::span<const double> scores, double alpha,
                            const ScoreSpec& spec) {
  if (scores.empty()) throw ValidationError("calibrate: empty score vector");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("calibrate: alpha must be in (0,1)");
  for (double s : scores) {
    if (!std::isfinite(s)) throw ValidationError("calibrate: non-finite score");
  }
  const auto n = scores.size();
  CalibrationResult out;
  out.alpha = alpha;
  out.n = n;
  out.score_spec = spec;

  const double rank = std::ceil(static_cast<double>(n + 1) * (1.0 - alpha));
  if (rank > static_cast<double>(n)) {
    out.tau = std::numeric_limits<double>::infinity();
    return out;
  }
  const auto r = static_cast<std::size_t>(rank);  // 1-based order statistic
  std::vector<double> work(scores.begin(), scores.end());
  std::nth_element(work.begin(), work.begin() + static_cast<std::ptrdiff_t>(r - 1), work.end());
  out.tau = work[r - 1];
  return out;
}

PredictionSet predict_set(const ScoreSpec& spec, std::span<const double> probs, double tau,
                          double u) {
  const auto scores = score_all_labels(spec, probs, u);
  PredictionSet set;
  set.member.resize(scores.size(), 0);
  for (std::size_t y = 0; y < scores.size(); ++y) {
    if (scores[y] <= tau) {
      set.member[y] = 1;
      ++set.size;
    }
  }
  return set;
}

double soft_quantile(std::span<const double> scores, double alpha) {
  return calibrate(scores, alpha).tau;
}

std::vector<double> soft_set_sizes(const ScoreSpec& spec,
                                   const std::vector<std::vector<double>>& probs_batch,
                                   double tau_soft, double t_soft) {
  if (!(t_soft > 0.0)) throw ValidationError("soft_set_sizes: T must be positive");
  std::vector<double> out;
  out.reserve(probs_batch.size());
  for (const auto& probs : probs_batch) {
    const auto scores = score_all_labels(spec, probs);
    double size = 0.0;
    for (double s : scores) {
      if (std::isinf(tau_soft)) {
        size += 1.0;
        continue;
      }
      const double z = (tau_soft - s) / t_soft;
      size += z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    }
    out.push_back(size);
  }
  return out;
}

std::string CalibrationResult::to_json() const {
  nlohmann::json j;
  j["alpha"] = alpha;
  if (std::isinf(tau))
    j["tau"] = "inf";
  else
    j["tau"] = tau;
  j["n"] = n;
  j["score_spec"] = {{"kind", score_kind_name(score_spec.kind)},
                     {"aps_randomized", score_spec.aps_randomized},
                     {"raps_lambda", score_spec.raps_lambda},
                     {"raps_kreg", score_spec.raps_kreg}};
  return j.dump();
}

CalibrationResult from_json_impl(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    CalibrationResult out;
    out.alpha = j.at("alpha").get<double>();
    if (j.at("tau").is_string()) {
      if (j.at("tau").get<std::string>() != "inf")
        throw ParseError("calibration json: bad tau string");
      out.tau = std::numeric_limits<double>::infinity();
    } else {
      out.tau = j.at("tau").get<double>();
    }
    out.n = j.at("n").get<std::size_t>();
    const auto& s = j.at("score_spec");
    out.score_spec.kind = score_kind_from_name(s.at("kind").get<std::string>());
    out.score_spec.aps_randomized = s.at("aps_randomized").get<bool>();
    out.score_spec.raps_lambda = s.at("raps_lambda").get<double>();
    out.score_spec.raps_kreg = s.at("raps_kreg").get<int>();
    return out;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("calibration json: ") + e.what());
  }
}

CalibrationResult CalibrationResult::from_json(const std::string& text) {
  return from_json_impl(text);
}

}  // namespace cadapter
