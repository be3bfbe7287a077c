#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace cadapter {

/// N x K logit matrix with labels and stable row identifiers.
struct LogitDataset {
  int class_count = 0;
  std::vector<double> logits;  // row-major, size() * class_count
  std::vector<int> labels;
  std::vector<std::int64_t> ids;

  std::size_t size() const { return labels.size(); }

  std::span<const double> row(std::size_t i) const {
    const auto k = static_cast<std::size_t>(class_count);
    return {logits.data() + i * k, k};
  }

  /// Throws ValidationError on any invariant violation.
  void validate() const;
};

/// Split request: ordered (name, fraction) pairs, or explicit index lists.
/// Fractional sizes round down; when the fractions sum to 1, the last-named
/// split absorbs the rounding remainder.
struct SplitSpec {
  std::vector<std::pair<std::string, double>> fractions;
  std::map<std::string, std::vector<std::size_t>> explicit_indices;
  std::uint64_t seed = 0;

  void validate(std::size_t n) const;
};

/// Synthetic miscalibrated-classifier settings. Per row: a true class is
/// drawn uniformly, per-class gaussian noise is added, `signal` boosts the
/// true class, and everything is divided by `temperature` (< 1 makes the
/// classifier overconfident, > 1 underconfident).
struct SynthConfig {
  int class_count = 2;
  std::vector<std::pair<std::string, std::size_t>> sizes;  // per split, in order
  double signal = 1.0;
  double temperature = 1.0;
  double noise_sd = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Reads a logit CSV (header `label,l0,...,l{K-1}`). Throws ParseError with
/// the offending line number, or ValidationError for out-of-range labels and
/// non-finite logits.
LogitDataset load_logits(const std::string& path);

/// Writes the CSV form: decimal with 17 significant digits, '\n' newlines.
void save_logits(const LogitDataset& ds, const std::string& path);

std::map<std::string, LogitDataset> synthesize(const SynthConfig& cfg);

std::map<std::string, LogitDataset> split(const LogitDataset& ds, const SplitSpec& spec);

}  // namespace cadapter
