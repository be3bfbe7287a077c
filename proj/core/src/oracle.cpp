#include "cadapter/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "cadapter/error.hpp"
#include "cadapter/rng.hpp"
#include "cadapter/train.hpp"

namespace cadapter {

namespace {

// Per-example score table for the whole dataset; u drawn once per example
// when the spec is randomized, so repeated sweeps see the same scores.
std::vector<std::vector<double>> score_table(const LogitDataset& ds, const AdapterParams* params,
                                             const ScoreSpec& spec, std::uint64_t seed) {
  ds.validate();
  Rng u_rng(derive_seed(seed, 30));
  std::vector<std::vector<double>> table(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto probs = params != nullptr ? softmax(adapter_forward(*params, ds.row(i)))
                                         : softmax(ds.row(i));
    const double u = spec.aps_randomized ? u_rng.uniform() : 1.0;
    table[i] = score_all_labels(spec, probs, u);
  }
  return table;
}

std::vector<double> true_scores(const LogitDataset& ds,
                                const std::vector<std::vector<double>>& table) {
  std::vector<double> out(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i)
    out[i] = table[i][static_cast<std::size_t>(ds.labels[i])];
  return out;
}

}  // namespace

double measure_mu(const LogitDataset& ds, const AdapterParams* params, const ScoreSpec& spec,
                  std::uint64_t seed) {
  const auto table = score_table(ds, params, spec, seed);
  const auto ts = true_scores(ds, table);
  const std::size_t n = ds.size();
  const auto k = static_cast<std::size_t>(ds.class_count);

  // Exhaustive ordered pairs: correctly matched (i) against every (j, y).
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = ts[i];
    for (std::size_t j = 0; j < n; ++j) {
      const auto& row = table[j];
      for (std::size_t y = 0; y < k; ++y) {
        if (s >= row[y]) ++count;
      }
    }
  }
  return static_cast<double>(count) / (static_cast<double>(n) * static_cast<double>(n * k));
}

double measure_integral(const LogitDataset& ds, const AdapterParams* params,
                        const ScoreSpec& spec, std::uint64_t seed) {
  const auto table = score_table(ds, params, spec, seed);
  const auto ts = true_scores(ds, table);
  const std::size_t n = ds.size();
  const auto k = static_cast<std::size_t>(ds.class_count);

  // For each example, sweep every true-label score as a threshold and count
  // the labels it admits; average the per-example means. Counts stay integral
  // until the final division so candidate ties are exact.
  std::size_t total = 0;
  for (std::size_t j = 0; j < n; ++j) {
    const auto& row = table[j];
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t y = 0; y < k; ++y) {
        if (row[y] <= ts[i]) ++total;
      }
    }
  }
  return static_cast<double>(total) / (static_cast<double>(n) * static_cast<double>(n));
}

Prop1Measurements measure_candidate(const LogitDataset& ds, const AdapterParams* params,
                                    const ScoreSpec& spec, std::uint64_t seed) {
  Prop1Measurements m;
  m.mu = measure_mu(ds, params, spec, seed);
  m.integral = measure_integral(ds, params, spec, seed);
  m.n = ds.size();
  m.class_count = ds.class_count;
  return m;
}

Prop1Report check_prop1(const LogitDataset& ds,
                        std::span<const AdapterParams* const> candidates, const ScoreSpec& spec,
                        std::uint64_t seed) {
  if (candidates.size() < 2)
    throw ValidationError("check_prop1: need at least two candidate classifiers");
  Prop1Report report;
  for (const AdapterParams* params : candidates)
    report.candidates.push_back(measure_candidate(ds, params, spec, seed));

  for (const auto& m : report.candidates) {
    const double gap = std::abs(m.integral - static_cast<double>(m.class_count) * m.mu);
    report.max_identity_gap = std::max(report.max_identity_gap, gap);
  }

  auto sign = [](double x) { return x > 0.0 ? 1 : (x < 0.0 ? -1 : 0); };
  for (std::size_t a = 0; a < report.candidates.size(); ++a) {
    for (std::size_t b = a + 1; b < report.candidates.size(); ++b) {
      const double dmu = report.candidates[a].mu - report.candidates[b].mu;
      const double dint = report.candidates[a].integral - report.candidates[b].integral;
      if (sign(dmu) != sign(dint)) report.violations.push_back({a, b});
    }
  }
  return report;
}

std::string Prop1Report::to_json() const {
  nlohmann::json j;
  j["candidates"] = nlohmann::json::array();
  for (const auto& m : candidates) {
    j["candidates"].push_back({{"mu", m.mu},
                               {"integral", m.integral},
                               {"n", m.n},
                               {"class_count", m.class_count}});
  }
  j["violations"] = nlohmann::json::array();
  for (const auto& v : violations) j["violations"].push_back({{"a", v.a}, {"b", v.b}});
  j["max_identity_gap"] = max_identity_gap;
  j["consistent"] = consistent();
  return j.dump();
}

namespace {

// Minimum adjacent gap of the vector the adapter actually sorts.
double min_sorted_gap(const AdapterParams& params, std::span<const double> logits) {
  const auto x = params.softmax_rescale ? softmax(logits)
                                        : std::vector<double>(logits.begin(), logits.end());
  auto witness = sort_descending(x);
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + 1 < witness.sorted.size(); ++i)
    gap = std::min(gap, witness.sorted[i] - witness.sorted[i + 1]);
  return gap;
}

GradAuditReport run_audit(const AdapterParams& params, const LogitDataset& data,
                          std::span<const std::size_t> batch, ScoreKind train_score,
                          double surrogate_t, double h,
                          std::span<const double> analytic_weight,
                          std::span<const double> analytic_bias) {
  if (!(h > 0.0)) throw ValidationError("grad_audit: step h must be positive");

  GradAuditReport report;
  std::vector<std::size_t> usable;
  for (std::size_t row : batch) {
    if (min_sorted_gap(params, data.row(row)) > 10.0 * h) {
      usable.push_back(row);
    } else {
      ++report.examples_skipped;  // precondition notice
    }
  }
  if (usable.empty())
    throw ValidationError("grad_audit: every example violates the sorted-gap precondition");

  const auto kk = static_cast<std::size_t>(params.k);
  const std::size_t entries = kk * kk + kk;
  constexpr std::size_t kMaxEntries = 10000;
  const std::size_t stride = entries > kMaxEntries ? (entries + kMaxEntries - 1) / kMaxEntries : 1;

  // Per-entry deviations are measured against the gradient's own scale, so
  // FD rounding noise on near-zero entries does not read as a failure while a
  // wrong entry anywhere near the gradient magnitude does.
  double scale = 1e-12;
  for (double v : analytic_weight) scale = std::max(scale, std::abs(v));
  for (double v : analytic_bias) scale = std::max(scale, std::abs(v));

  auto loss_at = [&](const AdapterParams& p) {
    return pairwise_loss(p, data, usable, train_score, surrogate_t).loss;
  };

  AdapterParams work = params;
  auto probe = [&](double* slot, double analytic) {
    const double saved = *slot;
    *slot = saved + h;
    const double up = loss_at(work);
    *slot = saved - h;
    const double down = loss_at(work);
    *slot = saved;
    const double fd = (up - down) / (2.0 * h);
    const double rel = std::abs(analytic - fd) / std::max(scale, std::abs(fd));
    report.max_rel_error = std::max(report.max_rel_error, rel);
    ++report.entries_checked;
  };

  for (std::size_t i = 0; i < kk * kk; i += stride) probe(&work.weight[i], analytic_weight[i]);
  for (std::size_t i = 0; i < kk; i += stride) probe(&work.bias[i], analytic_bias[i]);
  return report;
}

}  // namespace

GradAuditReport grad_audit(const AdapterParams& params, const LogitDataset& data,
                           std::span<const std::size_t> batch, ScoreKind train_score,
                           double surrogate_t, double h) {
  // The analytic side must see the same filtered batch as the FD side.
  std::vector<std::size_t> usable;
  for (std::size_t row : batch) {
    if (min_sorted_gap(params, data.row(row)) > 10.0 * h) usable.push_back(row);
  }
  if (usable.empty())
    throw ValidationError("grad_audit: every example violates the sorted-gap precondition");
  const auto analytic = pairwise_loss(params, data, usable, train_score, surrogate_t);
  auto report = run_audit(params, data, batch, train_score, surrogate_t, h,
                          analytic.grad_weight, analytic.grad_bias);
  return report;
}

GradAuditReport grad_audit_against(const AdapterParams& params, const LogitDataset& data,
                                   std::span<const std::size_t> batch, ScoreKind train_score,
                                   double surrogate_t, double h,
                                   std::span<const double> analytic_weight,
                                   std::span<const double> analytic_bias) {
  return run_audit(params, data, batch, train_score, surrogate_t, h, analytic_weight,
                   analytic_bias);
}

std::string GradAuditReport::to_json() const {
  nlohmann::json j;
  j["max_rel_error"] = max_rel_error;
  j["entries_checked"] = entries_checked;
  j["examples_skipped"] = examples_skipped;
  return j.dump();
}

}  // namespace cadapter
