#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cadapter/adapter.hpp"
#include "cadapter/dataset.hpp"
#include "cadapter/scores.hpp"

namespace cadapter {

/// Brute-force verification machinery. measure_mu and measure_integral are
/// two independently coded routes to the same quantity (integral == K * mu
/// under the shared >=/<= tie convention), which makes the equivalence between
/// pair discriminability and alpha-integrated set size executable.

struct Prop1Measurements {
  double mu = 0.0;        // exhaustive P(S(X,Y) >= S(Xhat,Yhat)); ties satisfy
  double integral = 0.0;  // empirical E over x of the alpha-integral of |C|
  std::size_t n = 0;
  int class_count = 0;
};

double measure_mu(const LogitDataset& ds, const AdapterParams* params, const ScoreSpec& spec,
                  std::uint64_t seed);

double measure_integral(const LogitDataset& ds, const AdapterParams* params,
                        const ScoreSpec& spec, std::uint64_t seed);

Prop1Measurements measure_candidate(const LogitDataset& ds, const AdapterParams* params,
                                    const ScoreSpec& spec, std::uint64_t seed);

struct Prop1Report {
  std::vector<Prop1Measurements> candidates;
  struct Violation {
    std::size_t a = 0, b = 0;
  };
  std::vector<Violation> violations;   // pairs where sign(d mu) != sign(d integral)
  double max_identity_gap = 0.0;       // max |integral - K * mu| over candidates

  bool consistent() const { return violations.empty(); }
  std::string to_json() const;
};

/// Measures every candidate (nullptr = raw logits) on one dataset and checks
/// sign agreement over all unordered candidate pairs.
Prop1Report check_prop1(const LogitDataset& ds,
                        std::span<const AdapterParams* const> candidates, const ScoreSpec& spec,
                        std::uint64_t seed);

struct GradAuditReport {
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t examples_skipped = 0;  // sorted-gap precondition violations

  std::string to_json() const;
};

/// Central-difference audit of the pairwise-loss parameter gradients with
/// step h. Examples whose sorted adapter-input gaps are <= 10*h are skipped
/// (counted in the report); entries above 10^4 are stride-sampled.
GradAuditReport grad_audit(const AdapterParams& params, const LogitDataset& data,
                           std::span<const std::size_t> batch, ScoreKind train_score,
                           double surrogate_t, double h);

/// Same audit against caller-supplied analytic gradients; exercises the
/// auditor's sensitivity.
GradAuditReport grad_audit_against(const AdapterParams& params, const LogitDataset& data,
                                   std::span<const std::size_t> batch, ScoreKind train_score,
                                   double surrogate_t, double h,
                                   std::span<const double> analytic_weight,
                                   std::span<const double> analytic_bias);

}  // namespace cadapter
