#pragma once

#include <span>
#include <string>
#include <vector>

namespace cadapter {

/// Parameters of the intra order-preserving logit transform. The transform
/// sorts its (optionally softmax-rescaled) input, feeds the sorted vector
/// through an affine map, combines sorted gaps with sigmoid gates under a
/// square root, suffix-sums, and un-sorts. By construction the output carries
/// the exact rank structure of the input, ties included.
struct AdapterParams {
  int k = 0;
  std::vector<double> weight;  // k x k, row-major
  std::vector<double> bias;    // k
  bool residual = true;
  bool softmax_rescale = true;

  static AdapterParams zeros(int k, bool residual = true, bool softmax_rescale = true);
  void validate() const;
};

/// Permutation putting a vector in non-increasing order, ties broken by
/// ascending index. perm[i] is the original index of the i-th largest value.
struct SortWitness {
  std::vector<int> perm;
  std::vector<double> sorted;
};

SortWitness sort_descending(std::span<const double> values);

std::vector<double> adapter_forward(const AdapterParams& params, std::span<const double> logits);

struct AdapterGrads {
  std::vector<double> weight;  // k x k
  std::vector<double> bias;    // k
  std::vector<double> input;   // k
};

/// Exact reverse-mode derivatives of adapter_forward under the frozen-sort
/// convention: the permutation is a constant, gap factors differentiate
/// through the sorted values, and the sqrt subgradient at a zero gap is 0.
AdapterGrads adapter_backward(const AdapterParams& params, std::span<const double> logits,
                              std::span<const double> upstream);

/// JSON round-trip: {k, weight (row-major), bias, residual, softmax_rescale}.
void save_params(const AdapterParams& params, const std::string& path);
AdapterParams load_params(const std::string& path);

}  // namespace cadapter
