#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cadapter/adapter.hpp"
#include "cadapter/conformal.hpp"
#include "cadapter/dataset.hpp"
#include "cadapter/scores.hpp"

namespace cadapter {

/// Disjoint ascending integer ranges stratifying prediction-set sizes.
struct SizePartition {
  std::vector<std::pair<int, int>> ranges;  // inclusive [lo, hi]

  /// {0-1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11-100, 101-1000}
  static SizePartition defaults();
  void validate() const;
  int bin_of(int size) const;  // -1 when no range covers `size`
};

struct MetricsReport {
  double size = 0.0;
  double coverage = 0.0;
  double covgap = 0.0;  // percentage points
  double sscv = 0.0;    // percentage points
  double alpha = 0.0;
  std::size_t n_test = 0;

  std::string to_json() const;  // single line
  std::string to_text() const;  // aligned columns
};

/// Size = mean |C|; Coverage = fraction with the true label in the set;
/// CovGap = 100 * mean over represented classes of |per-class coverage - (1-alpha)|;
/// SSCV = 100 * max over non-empty partition bins of |(1-alpha) - bin coverage|.
MetricsReport evaluate(const std::vector<PredictionSet>& sets, std::span<const int> labels,
                       double alpha, const SizePartition& partition = SizePartition::defaults());

/// Binned score densities of correctly matched (x, true label) pairs and of
/// (x, random label) pairs, random labels uniform per example under the seed.
struct ScoreHistogram {
  std::vector<double> bin_low, bin_high;
  std::vector<double> correct_density, incorrect_density;  // each sums to 1

  std::string to_csv() const;  // bin_low,bin_high,correct_density,incorrect_density
};

ScoreHistogram score_histogram(const LogitDataset& ds, const AdapterParams* params,
                               const ScoreSpec& spec, int bins, std::uint64_t seed);

/// One full split-conformal run: score the calibration split (through the
/// adapter when given), calibrate at alpha, build prediction sets on the test
/// split, and evaluate. Randomized APS draws one u per example from the seed.
MetricsReport conformal_evaluate(const LogitDataset& cal, const LogitDataset& test,
                                 const ScoreSpec& spec, double alpha,
                                 const AdapterParams* params, std::uint64_t seed,
                                 const SizePartition& partition = SizePartition::defaults());

}  // namespace cadapter
