#include "cadapter/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "cadapter/error.hpp"
#include "cadapter/rng.hpp"

namespace cadapter {

void LogitDataset::validate() const {
  if (class_count < 2) throw ValidationError("dataset: class_count must be >= 2");
  if (labels.empty()) throw ValidationError("dataset: at least one row required");
  const std::size_t n = labels.size();
  if (logits.size() != n * static_cast<std::size_t>(class_count))
    throw ValidationError("dataset: logits size does not match N x K");
  if (ids.size() != n) throw ValidationError("dataset: ids size does not match N");
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || labels[i] >= class_count)
      throw ValidationError("dataset: label out of range at row " + std::to_string(i));
  }
  for (double v : logits) {
    if (!std::isfinite(v)) throw ValidationError("dataset: non-finite logit");
  }
}

void SplitSpec::validate(std::size_t n) const {
  if (!explicit_indices.empty()) {
    std::set<std::size_t> seen;
    for (const auto& [name, idx] : explicit_indices) {
      for (std::size_t i : idx) {
        if (i >= n)
          throw ValidationError("split: index " + std::to_string(i) + " out of range for split '" +
                                name + "'");
        if (!seen.insert(i).second)
          throw ValidationError("split: index " + std::to_string(i) + " assigned twice");
      }
    }
    return;
  }
  if (fractions.empty()) throw ValidationError("split: no fractions or index lists given");
  double total = 0.0;
  for (const auto& [name, f] : fractions) {
    if (f < 0.0 || !std::isfinite(f))
      throw ValidationError("split: bad fraction for split '" + name + "'");
    total += f;
  }
  if (total > 1.0 + 1e-12) throw ValidationError("split: fractions sum to more than 1.0");
}

void SynthConfig::validate() const {
  if (class_count < 2) throw ValidationError("synth: class_count must be >= 2");
  if (sizes.empty()) throw ValidationError("synth: at least one split size required");
  for (const auto& [name, sz] : sizes) {
    if (sz < 1) throw ValidationError("synth: size of split '" + name + "' must be >= 1");
  }
  if (!(signal > 0.0) || !std::isfinite(signal))
    throw ValidationError("synth: signal must be positive and finite");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw ValidationError("synth: temperature must be positive and finite");
  if (noise_sd < 0.0 || !std::isfinite(noise_sd))
    throw ValidationError("synth: noise_sd must be non-negative and finite");
}

namespace {

// Splits a CSV line on commas. No quoting in this format.
std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

double parse_double(const std::string& field, std::size_t line_no) {
  try {
    std::size_t consumed = 0;
    const double v = std::stod(field, &consumed);
    if (consumed != field.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError("logit csv: bad numeric field '" + field + "' on line " +
                     std::to_string(line_no));
  }
}

long parse_label(const std::string& field, std::size_t line_no) {
  try {
    std::size_t consumed = 0;
    const long v = std::stol(field, &consumed);
    if (consumed != field.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError("logit csv: bad label field '" + field + "' on line " +
                     std::to_string(line_no));
  }
}

}  // namespace

LogitDataset load_logits(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "' for reading");

  std::string line;
  if (!std::getline(in, line)) throw ParseError("logit csv: empty file '" + path + "'");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_fields(line);
  if (header.size() < 3 || header[0] != "label")
    throw ParseError("logit csv: bad header on line 1 (want label,l0,...)");
  const int k = static_cast<int>(header.size()) - 1;
  for (int j = 0; j < k; ++j) {
    if (header[static_cast<std::size_t>(j) + 1] != "l" + std::to_string(j))
      throw ParseError("logit csv: bad header column " + std::to_string(j + 2) + " on line 1");
  }

  LogitDataset ds;
  ds.class_count = k;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != static_cast<std::size_t>(k) + 1)
      throw ParseError("logit csv: expected " + std::to_string(k + 1) + " fields on line " +
                       std::to_string(line_no) + ", got " + std::to_string(fields.size()));
    const long label = parse_label(fields[0], line_no);
    if (label < 0 || label >= k)
      throw ValidationError("logit csv: label " + std::to_string(label) +
                            " out of range [0, " + std::to_string(k) + ") on line " +
                            std::to_string(line_no));
    for (int j = 0; j < k; ++j) {
      const double v = parse_double(fields[static_cast<std::size_t>(j) + 1], line_no);
      if (!std::isfinite(v))
        throw ValidationError("logit csv: non-finite logit on line " + std::to_string(line_no));
      ds.logits.push_back(v);
    }
    ds.labels.push_back(static_cast<int>(label));
    ds.ids.push_back(static_cast<std::int64_t>(ds.labels.size()) - 1);
  }
  if (ds.labels.empty()) throw ParseError("logit csv: no data rows in '" + path + "'");
  ds.validate();
  return ds;
}

void save_logits(const LogitDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");

  out << "label";
  for (int j = 0; j < ds.class_count; ++j) out << ",l" << j;
  out << '\n';

  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    out << ds.labels[i];
    const auto row = ds.row(i);
    for (double v : row) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw IoError("error writing '" + path + "'");
}

std::map<std::string, LogitDataset> synthesize(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const int k = cfg.class_count;

  std::map<std::string, LogitDataset> out;
  std::int64_t next_id = 0;
  for (const auto& [name, rows] : cfg.sizes) {
    LogitDataset ds;
    ds.class_count = k;
    ds.logits.reserve(rows * static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < rows; ++i) {
      const int label = static_cast<int>(rng.bounded(static_cast<std::uint64_t>(k)));
      for (int j = 0; j < k; ++j) {
        double v = rng.normal() * cfg.noise_sd;
        if (j == label) v += cfg.signal;
        ds.logits.push_back(v / cfg.temperature);
      }
      ds.labels.push_back(label);
      ds.ids.push_back(next_id++);
    }
    out.emplace(name, std::move(ds));
  }
  return out;
}

std::map<std::string, LogitDataset> split(const LogitDataset& ds, const SplitSpec& spec) {
  ds.validate();
  const std::size_t n = ds.size();
  spec.validate(n);

  // Resolve the per-split index lists.
  std::vector<std::pair<std::string, std::vector<std::size_t>>> assignment;
  if (!spec.explicit_indices.empty()) {
    for (const auto& [name, idx] : spec.explicit_indices) assignment.emplace_back(name, idx);
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(spec.seed);
    rng.shuffle(order);

    double total = 0.0;
    for (const auto& [name, f] : spec.fractions) total += f;
    const bool exhaustive = std::abs(total - 1.0) <= 1e-9;

    std::size_t cursor = 0;
    for (std::size_t s = 0; s < spec.fractions.size(); ++s) {
      const auto& [name, f] = spec.fractions[s];
      std::size_t take = static_cast<std::size_t>(std::floor(f * static_cast<double>(n)));
      if (exhaustive && s + 1 == spec.fractions.size()) take = n - cursor;  // rounding remainder
      take = std::min(take, n - cursor);
      std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(cursor),
                                   order.begin() + static_cast<std::ptrdiff_t>(cursor + take));
      std::sort(idx.begin(), idx.end());
      assignment.emplace_back(name, std::move(idx));
      cursor += take;
    }
  }

  std::map<std::string, LogitDataset> out;
  const auto k = static_cast<std::size_t>(ds.class_count);
  for (auto& [name, idx] : assignment) {
    LogitDataset part;
    part.class_count = ds.class_count;
    part.logits.reserve(idx.size() * k);
    for (std::size_t i : idx) {
      const auto row = ds.row(i);
      part.logits.insert(part.logits.end(), row.begin(), row.end());
      part.labels.push_back(ds.labels[i]);
      part.ids.push_back(ds.ids[i]);
    }
    out.emplace(name, std::move(part));
  }
  return out;
}

}  // namespace cadapter
