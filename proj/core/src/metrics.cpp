#include "cadapter/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "cadapter/error.hpp"
#include "cadapter/rng.hpp"

namespace cadapter {

SizePartition SizePartition::defaults() {
  SizePartition p;
  p.ranges.push_back({0, 1});
  for (int s = 2; s <= 10; ++s) p.ranges.push_back({s, s});
  p.ranges.push_back({11, 100});
  p.ranges.push_back({101, 1000});
  return p;
}

void SizePartition::validate() const {
  if (ranges.empty()) throw ValidationError("size partition: empty");
  int prev_hi = -1;
  for (const auto& [lo, hi] : ranges) {
    if (lo > hi) throw ValidationError("size partition: range with lo > hi");
    if (lo <= prev_hi) throw ValidationError("size partition: ranges overlap or are unsorted");
    prev_hi = hi;
  }
}

int SizePartition::bin_of(int size) const {
  for (std::size_t i = 0; i < ranges.size(); ++i) {
    if (size >= ranges[i].first && size <= ranges[i].second) return static_cast<int>(i);
  }
  return -1;
}

MetricsReport evaluate(const std::vector<PredictionSet>& sets, std::span<const int> labels,
                       double alpha, const SizePartition& partition) {
  if (sets.size() != labels.size())
    throw ValidationError("evaluate: sets and labels have different lengths");
  if (sets.empty()) throw ValidationError("evaluate: empty input");
  if (!(alpha > 0.0 && alpha < 1.0)) throw ValidationError("evaluate: alpha must be in (0,1)");
  partition.validate();

  const std::size_t n = sets.size();
  const std::size_t k = sets[0].member.size();
  const double target = 1.0 - alpha;

  double size_sum = 0.0;
  std::size_t covered = 0;
  std::vector<std::size_t> class_total(k, 0), class_covered(k, 0);
  std::vector<std::size_t> bin_total(partition.ranges.size(), 0);
  std::vector<std::size_t> bin_covered(partition.ranges.size(), 0);

  for (std::size_t i = 0; i < n; ++i) {
    const auto& set = sets[i];
    if (set.member.size() != k) throw ValidationError("evaluate: ragged prediction sets");
    const int label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= k)
      throw ValidationError("evaluate: label out of range");
    const bool hit = set.member[static_cast<std::size_t>(label)] != 0;
    size_sum += set.size;
    covered += hit ? 1 : 0;
    ++class_total[static_cast<std::size_t>(label)];
    class_covered[static_cast<std::size_t>(label)] += hit ? 1 : 0;
    const int bin = partition.bin_of(set.size);
    if (bin < 0)
      throw ValidationError("evaluate: set size " + std::to_string(set.size) +
                            " not covered by the partition");
    ++bin_total[static_cast<std::size_t>(bin)];
    bin_covered[static_cast<std::size_t>(bin)] += hit ? 1 : 0;
  }

  MetricsReport report;
  report.alpha = alpha;
  report.n_test = n;
  report.size = size_sum / static_cast<double>(n);
  report.coverage = static_cast<double>(covered) / static_cast<double>(n);

  // Classes absent from the test data are excluded from the CovGap mean.
  double gap_sum = 0.0;
  std::size_t gap_classes = 0;
  for (std::size_t y = 0; y < k; ++y) {
    if (class_total[y] == 0) continue;
    const double cy =
        static_cast<double>(class_covered[y]) / static_cast<double>(class_total[y]);
    gap_sum += std::abs(cy - target);
    ++gap_classes;
  }
  report.covgap = 100.0 * gap_sum / static_cast<double>(gap_classes);

  // Empty bins are skipped (their coverage is undefined).
  double worst = 0.0;
  for (std::size_t j = 0; j < bin_total.size(); ++j) {
    if (bin_total[j] == 0) continue;
    const double cj = static_cast<double>(bin_covered[j]) / static_cast<double>(bin_total[j]);
    worst = std::max(worst, std::abs(target - cj));
  }
  report.sscv = 100.0 * worst;
  return report;
}

std::string MetricsReport::to_json() const {
  nlohmann::json j;
  j["alpha"] = alpha;
  j["size"] = size;
  j["coverage"] = coverage;
  j["covgap"] = covgap;
  j["sscv"] = sscv;
  j["n_test"] = n_test;
  return j.dump();
}

std::string MetricsReport::to_text() const {
  char buf[256];
  std::ostringstream out;
  std::snprintf(buf, sizeof(buf), "%-10s %.4f\n", "alpha", alpha);
  out << buf;
  std::snprintf(buf, sizeof(buf), "%-10s %.4f\n", "size", size);
  out << buf;
  std::snprintf(buf, sizeof(buf), "%-10s %.4f\n", "coverage", coverage);
  out << buf;
  std::snprintf(buf, sizeof(buf), "%-10s %.4f\n", "covgap", covgap);
  out << buf;
  std::snprintf(buf, sizeof(buf), "%-10s %.4f\n", "sscv", sscv);
  out << buf;
  std::snprintf(buf, sizeof(buf), "%-10s %zu\n", "n_test", n_test);
  out << buf;
  return out.str();
}

ScoreHistogram score_histogram(const LogitDataset& ds, const AdapterParams* params,
                               const ScoreSpec& spec, int bins, std::uint64_t seed) {
  ds.validate();
  if (bins < 2) throw ValidationError("score_histogram: bins must be >= 2");

  const std::size_t n = ds.size();
  const int k = ds.class_count;
  Rng label_rng(derive_seed(seed, 20));
  Rng u_rng(derive_seed(seed, 21));

  std::vector<double> correct(n), incorrect(n);
  double hi = 1.0;
  if (spec.kind == ScoreKind::Raps)
    hi += spec.raps_lambda * std::max(0, k - spec.raps_kreg);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> probs;
    if (params != nullptr) {
      probs = softmax(adapter_forward(*params, ds.row(i)));
    } else {
      probs = softmax(ds.row(i));
    }
    const double u = spec.aps_randomized ? u_rng.uniform() : 1.0;
    const auto scores = score_all_labels(spec, probs, u);
    const int random_label = static_cast<int>(label_rng.bounded(static_cast<std::uint64_t>(k)));
    correct[i] = scores[static_cast<std::size_t>(ds.labels[i])];
    incorrect[i] = scores[static_cast<std::size_t>(random_label)];
  }

  ScoreHistogram h;
  h.bin_low.resize(static_cast<std::size_t>(bins));
  h.bin_high.resize(static_cast<std::size_t>(bins));
  h.correct_density.assign(static_cast<std::size_t>(bins), 0.0);
  h.incorrect_density.assign(static_cast<std::size_t>(bins), 0.0);
  const double width = hi / static_cast<double>(bins);
  for (int b = 0; b < bins; ++b) {
    h.bin_low[static_cast<std::size_t>(b)] = width * b;
    h.bin_high[static_cast<std::size_t>(b)] = width * (b + 1);
  }
  auto bin_of = [&](double s) {
    int b = static_cast<int>(std::floor(s / width));
    return std::clamp(b, 0, bins - 1);
  };
  const double unit = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    h.correct_density[static_cast<std::size_t>(bin_of(correct[i]))] += unit;
    h.incorrect_density[static_cast<std::size_t>(bin_of(incorrect[i]))] += unit;
  }
  return h;
}

MetricsReport conformal_evaluate(const LogitDataset& cal, const LogitDataset& test,
                                 const ScoreSpec& spec, double alpha,
                                 const AdapterParams* params, std::uint64_t seed,
                                 const SizePartition& partition) {
  cal.validate();
  test.validate();
  if (cal.class_count != test.class_count)
    throw ValidationError("conformal_evaluate: class counts differ between splits");
  if (params != nullptr && params->k != cal.class_count)
    throw ValidationError("conformal_evaluate: adapter k does not match the data");

  auto probs_for = [&](const LogitDataset& ds, std::size_t i) {
    return params != nullptr ? softmax(adapter_forward(*params, ds.row(i))) : softmax(ds.row(i));
  };

  Rng u_cal(derive_seed(seed, 11));
  std::vector<double> cal_scores;
  cal_scores.reserve(cal.size());
  for (std::size_t i = 0; i < cal.size(); ++i) {
    const double u = spec.aps_randomized ? u_cal.uniform() : 1.0;
    cal_scores.push_back(score(spec, probs_for(cal, i), cal.labels[i], u));
  }
  const auto calibration = calibrate(cal_scores, alpha, spec);

  Rng u_test(derive_seed(seed, 12));
  std::vector<PredictionSet> sets;
  sets.reserve(test.size());
  for (std::size_t i = 0; i < test.size(); ++i) {
    const double u = spec.aps_randomized ? u_test.uniform() : 1.0;
    sets.push_back(predict_set(spec, probs_for(test, i), calibration.tau, u));
  }
  return evaluate(sets, test.labels, alpha, partition);
}

std::string ScoreHistogram::to_csv() const {
  std::ostringstream out;
  out << "bin_low,bin_high,correct_density,incorrect_density\n";
  char buf[160];
  for (std::size_t i = 0; i < bin_low.size(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g\n", bin_low[i], bin_high[i],
                  correct_density[i], incorrect_density[i]);
    out << buf;
  }
  return out.str();
}

}  // namespace cadapter
