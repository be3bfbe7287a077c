#include "cadapter/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "cadapter/error.hpp"
#include "cadapter/scores.hpp"

namespace cadapter {

AdapterParams AdapterParams::zeros(int k, bool residual, bool softmax_rescale) {
  if (k < 2) throw ValidationError("adapter: k must be >= 2");
  AdapterParams p;
  p.k = k;
  p.weight.assign(static_cast<std::size_t>(k) * static_cast<std::size_t>(k), 0.0);
  p.bias.assign(static_cast<std::size_t>(k), 0.0);
  p.residual = residual;
  p.softmax_rescale = softmax_rescale;
  return p;
}

void AdapterParams::validate() const {
  if (k < 2) throw ValidationError("adapter: k must be >= 2");
  const auto kk = static_cast<std::size_t>(k);
  if (weight.size() != kk * kk) throw ValidationError("adapter: weight is not k x k");
  if (bias.size() != kk) throw ValidationError("adapter: bias is not length k");
  for (double v : weight)
    if (!std::isfinite(v)) throw ValidationError("adapter: non-finite weight entry");
  for (double v : bias)
    if (!std::isfinite(v)) throw ValidationError("adapter: non-finite bias entry");
}

SortWitness sort_descending(std::span<const double> values) {
  SortWitness w;
  w.perm.resize(values.size());
  std::iota(w.perm.begin(), w.perm.end(), 0);
  std::sort(w.perm.begin(), w.perm.end(), [&](int a, int b) {
    const double va = values[static_cast<std::size_t>(a)];
    const double vb = values[static_cast<std::size_t>(b)];
    if (va != vb) return va > vb;
    return a < b;
  });
  w.sorted.resize(values.size());
  for (std::size_t i = 0; i < values.size(); ++i)
    w.sorted[i] = values[static_cast<std::size_t>(w.perm[i])];
  return w;
}

namespace {

inline double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

void check_finite(std::span<const double> v, const char* stage) {
  for (double x : v) {
    if (!std::isfinite(x))
      throw NumericError(std::string("adapter forward: non-finite value at stage '") + stage +
                         "'");
  }
}

struct ForwardState {
  std::vector<double> rescaled;  // adapter sort input (post-rescale when enabled)
  SortWitness witness;
  std::vector<double> phi;    // affine map of the sorted vector
  std::vector<double> gate;   // sigmoid(phi_i), i < k-1
  std::vector<double> steps;  // Psi
  std::vector<double> out;    // unsorted output (residual applied)
};

ForwardState run_forward(const AdapterParams& params, std::span<const double> logits) {
  params.validate();
  const auto k = static_cast<std::size_t>(params.k);
  if (logits.size() != k)
    throw ValidationError("adapter forward: input length does not match k");
  check_finite(logits, "input");

  ForwardState st;
  st.rescaled = params.softmax_rescale ? softmax(logits)
                                       : std::vector<double>(logits.begin(), logits.end());
  st.witness = sort_descending(st.rescaled);
  const auto& r = st.witness.sorted;

  st.phi.assign(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    double acc = params.bias[i];
    const double* wrow = params.weight.data() + i * k;
    for (std::size_t j = 0; j < k; ++j) acc += wrow[j] * r[j];
    st.phi[i] = acc;
  }
  check_finite(st.phi, "affine");

  st.gate.assign(k, 0.0);
  st.steps.assign(k, 0.0);
  for (std::size_t i = 0; i + 1 < k; ++i) {
    st.gate[i] = sigmoid(st.phi[i]);
    st.steps[i] = std::sqrt((r[i] - r[i + 1]) * st.gate[i]);
  }
  st.steps[k - 1] = st.phi[k - 1];
  check_finite(st.steps, "gated steps");

  // Suffix sums give the sorted output; un-sort via the witness.
  st.out.assign(k, 0.0);
  double suffix = 0.0;
  for (std::size_t i = k; i-- > 0;) {
    suffix += st.steps[i];
    st.out[static_cast<std::size_t>(st.witness.perm[i])] = suffix;
  }
  if (params.residual) {
    for (std::size_t i = 0; i < k; ++i) st.out[i] += logits[i];
  }
  check_finite(st.out, "output");
  return st;
}

}  // namespace

std::vector<double> adapter_forward(const AdapterParams& params, std::span<const double> logits) {
  return run_forward(params, logits).out;
}

AdapterGrads adapter_backward(const AdapterParams& params, std::span<const double> logits,
                              std::span<const double> upstream) {
  const auto k = static_cast<std::size_t>(params.k);
  if (upstream.size() != k)
    throw ValidationError("adapter backward: upstream length does not match k");
  const ForwardState st = run_forward(params, logits);
  const auto& r = st.witness.sorted;
  const auto& perm = st.witness.perm;

  AdapterGrads g;
  g.weight.assign(k * k, 0.0);
  g.bias.assign(k, 0.0);
  g.input.assign(k, 0.0);

  // Sorted-output gradient, then Psi via prefix sums.
  std::vector<double> g_sorted(k);
  for (std::size_t i = 0; i < k; ++i) g_sorted[i] = upstream[static_cast<std::size_t>(perm[i])];
  std::vector<double> g_steps(k);
  double prefix = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    prefix += g_sorted[i];
    g_steps[i] = prefix;
  }

  std::vector<double> g_phi(k, 0.0);
  std::vector<double> g_r(k, 0.0);
  for (std::size_t i = 0; i + 1 < k; ++i) {
    const double gap = r[i] - r[i + 1];
    if (gap <= 0.0) continue;  // tie: subgradient 0 through this step
    const double step = st.steps[i];
    const double dstep_dphi = gap * st.gate[i] * (1.0 - st.gate[i]) / (2.0 * step);
    const double dstep_dgap = st.gate[i] / (2.0 * step);
    g_phi[i] = g_steps[i] * dstep_dphi;
    const double g_gap = g_steps[i] * dstep_dgap;
    g_r[i] += g_gap;
    g_r[i + 1] -= g_gap;
  }
  g_phi[k - 1] += g_steps[k - 1];

  // Affine map: phi = W r + b.
  for (std::size_t i = 0; i < k; ++i) {
    if (g_phi[i] == 0.0) continue;
    g.bias[i] = g_phi[i];
    double* wg = g.weight.data() + i * k;
    const double* wrow = params.weight.data() + i * k;
    for (std::size_t j = 0; j < k; ++j) {
      wg[j] = g_phi[i] * r[j];
      g_r[j] += wrow[j] * g_phi[i];
    }
  }

  // Un-sort (frozen permutation), then back through the optional rescale.
  std::vector<double> g_x(k, 0.0);
  for (std::size_t i = 0; i < k; ++i) g_x[static_cast<std::size_t>(perm[i])] = g_r[i];
  if (params.softmax_rescale) {
    const auto& p = st.rescaled;
    double dot = 0.0;
    for (std::size_t i = 0; i < k; ++i) dot += p[i] * g_x[i];
    for (std::size_t i = 0; i < k; ++i) g.input[i] = p[i] * (g_x[i] - dot);
  } else {
    g.input = g_x;
  }
  if (params.residual) {
    for (std::size_t i = 0; i < k; ++i) g.input[i] += upstream[i];
  }
  return g;
}

void save_params(const AdapterParams& params, const std::string& path) {
  params.validate();
  nlohmann::json j;
  j["k"] = params.k;
  j["weight"] = params.weight;
  j["bias"] = params.bias;
  j["residual"] = params.residual;
  j["softmax_rescale"] = params.softmax_rescale;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("error writing '" + path + "'");
}

AdapterParams load_params(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::stringstream buf;
  buf << in.rdbuf();
  AdapterParams p;
  try {
    const auto j = nlohmann::json::parse(buf.str());
    p.k = j.at("k").get<int>();
    p.weight = j.at("weight").get<std::vector<double>>();
    p.bias = j.at("bias").get<std::vector<double>>();
    p.residual = j.at("residual").get<bool>();
    p.softmax_rescale = j.at("softmax_rescale").get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("adapter json '" + path + "': " + e.what());
  }
  p.validate();
  return p;
}

}  // namespace cadapter
