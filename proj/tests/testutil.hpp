#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "cadapter/adapter.hpp"
#include "cadapter/dataset.hpp"
#include "cadapter/rng.hpp"

namespace testutil {

inline std::filesystem::path temp_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("cadapter_tests_" + name);
  std::filesystem::create_directories(dir);
  return dir;
}

inline cadapter::LogitDataset random_dataset(std::size_t n, int k, std::uint64_t seed,
                                             double spread = 2.0) {
  cadapter::Rng rng(seed);
  cadapter::LogitDataset ds;
  ds.class_count = k;
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(k)));
    for (int j = 0; j < k; ++j) {
      double v = rng.normal() * spread;
      if (j == label) v += 1.0;
      ds.logits.push_back(v);
    }
    ds.labels.push_back(label);
    ds.ids.push_back(static_cast<std::int64_t>(i));
  }
  return ds;
}

inline cadapter::AdapterParams random_params(int k, std::uint64_t seed, double scale = 0.5,
                                             bool residual = true, bool rescale = true) {
  cadapter::Rng rng(seed);
  auto p = cadapter::AdapterParams::zeros(k, residual, rescale);
  for (auto& w : p.weight) w = rng.normal() * scale;
  for (auto& b : p.bias) b = rng.normal() * scale;
  return p;
}

inline std::vector<double> random_logits(int k, std::uint64_t seed, double spread = 2.0) {
  cadapter::Rng rng(seed);
  std::vector<double> f(static_cast<std::size_t>(k));
  for (auto& v : f) v = rng.normal() * spread;
  return f;
}

}  // namespace testutil
