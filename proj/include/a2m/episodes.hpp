#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "a2m/autodiff.hpp"
#include "a2m/errors.hpp"
#include "a2m/rng.hpp"

namespace a2m {

/// One few-shot task. Rows are class-major: class 0's samples first.
struct Episode {
  Tensor support_x;                     // [(K·m)×in_dim]
  std::vector<std::size_t> support_y;
  Tensor query_x;                       // [(K·q)×in_dim]
  std::vector<std::size_t> query_y;
  std::size_t ways = 0;
  std::size_t shots = 0;
  std::size_t queries_per_class = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> classes;        // source class of each relabeled class
  std::vector<std::size_t> support_rows;   // dataset row ids; empty for synthetic sources
  std::vector<std::size_t> query_rows;
};

/// Spherical Gaussian classes. Class means are pairwise `class_separation`
/// noise units apart; the noise vector has RMS norm `noise_sigma`, i.e.
/// per-coordinate std noise_sigma / sqrt(in_dim).
struct GaussianTaskDist {
  std::size_t in_dim = 0;
  double class_separation = 0.0;
  double noise_sigma = 1.0;
  std::size_t pool_classes = 0;
  std::uint64_t seed = 0;
  std::vector<std::vector<double>> means;
};

/// Class means sit at radius separation·σ/√2 along orthonormal directions
/// when pool_classes <= in_dim (pairwise distance exactly separation·σ), and
/// along independent random directions otherwise.
inline GaussianTaskDist make_gaussian_dist(std::size_t in_dim, double class_separation, double noise_sigma,
                                           std::size_t pool_classes, std::uint64_t seed) {
  if (in_dim == 0 || pool_classes == 0) throw ValidationError("gaussian source: in_dim and pool_classes must be positive");
  if (!(class_separation >= 0.0) || !(noise_sigma >= 0.0)) {
    throw ValidationError("gaussian source: class_separation and noise_sigma must be non-negative");
  }
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<double>> dirs;
  while (dirs.size() < pool_classes) {
    std::vector<double> v(in_dim);
    for (auto& x : v) x = normal(rng);
    if (pool_classes <= in_dim) {
      for (const auto& u : dirs) {
        const double dot = std::inner_product(v.begin(), v.end(), u.begin(), 0.0);
        for (std::size_t i = 0; i < in_dim; ++i) v[i] -= dot * u[i];
      }
    }
    const double norm = std::sqrt(std::inner_product(v.begin(), v.end(), v.begin(), 0.0));
    if (norm < 1e-8) continue;
    for (auto& x : v) x /= norm;
    dirs.push_back(std::move(v));
  }
  const double radius = class_separation * noise_sigma / std::sqrt(2.0);
  for (auto& d : dirs)
    for (auto& x : d) x *= radius;
  return {in_dim, class_separation, noise_sigma, pool_classes, seed, std::move(dirs)};
}

struct DatasetTable {
  Tensor features;                               // [rows×in_dim]
  std::vector<std::size_t> labels;               // class index per row
  std::vector<std::string> class_names;
  std::vector<std::vector<std::size_t>> class_index;  // class -> row ids

  std::size_t rows() const { return labels.size(); }
  std::size_t in_dim() const { return features.shape()[1]; }
  std::size_t num_classes() const { return class_names.size(); }
};

inline DatasetTable make_table(Tensor features, std::vector<std::size_t> labels, std::vector<std::string> class_names) {
  detail::require_rank(features, 2, "dataset", "features");
  if (labels.size() != features.shape()[0]) {
    throw ValidationError("dataset: " + std::to_string(labels.size()) + " labels for " +
                          std::to_string(features.shape()[0]) + " rows");
  }
  std::vector<std::vector<std::size_t>> index(class_names.size());
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= class_names.size()) throw ValidationError("dataset: row " + std::to_string(r) + " has unknown class");
    index[labels[r]].push_back(r);
  }
  return {std::move(features), std::move(labels), std::move(class_names), std::move(index)};
}

namespace detail {

/// First `k` entries of a seeded partial Fisher-Yates shuffle of [0, n).
inline std::vector<std::size_t> choose_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(ids[i], ids[pick(rng)]);
  }
  ids.resize(k);
  return ids;
}

inline void check_episode_shape(std::size_t ways, std::size_t shots, std::size_t queries) {
  if (ways == 0 || shots == 0 || queries == 0) throw ValidationError("episode: ways, shots and queries must be positive");
}

}  // namespace detail

inline Episode sample_episode(const GaussianTaskDist& source, std::size_t ways, std::size_t shots,
                              std::size_t queries, std::uint64_t seed) {
  detail::check_episode_shape(ways, shots, queries);
  if (source.pool_classes < ways) {
    throw ValidationError("episode: source has " + std::to_string(source.pool_classes) + " classes, need " +
                          std::to_string(ways));
  }
  Rng rng(seed);
  const auto classes = detail::choose_without_replacement(source.pool_classes, ways, rng);
  const std::size_t d = source.in_dim;
  const double sigma = source.noise_sigma / std::sqrt(static_cast<double>(d));
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> sx, qx;
  std::vector<std::size_t> sy, qy;
  for (std::size_t k = 0; k < ways; ++k) {
    const auto& mean = source.means[classes[k]];
    for (std::size_t s = 0; s < shots + queries; ++s) {
      auto& dst = s < shots ? sx : qx;
      for (std::size_t t = 0; t < d; ++t) dst.push_back(mean[t] + sigma * normal(rng));
      (s < shots ? sy : qy).push_back(k);
    }
  }
  return {Tensor::matrix(ways * shots, d, std::move(sx)), std::move(sy), Tensor::matrix(ways * queries, d, std::move(qx)),
          std::move(qy), ways, shots, queries, seed, classes, {}, {}};
}

inline Episode sample_episode(const DatasetTable& source, std::size_t ways, std::size_t shots, std::size_t queries,
                              std::uint64_t seed) {
  detail::check_episode_shape(ways, shots, queries);
  if (source.num_classes() < ways) {
    throw ValidationError("episode: dataset has " + std::to_string(source.num_classes()) + " classes, need " +
                          std::to_string(ways));
  }
  for (std::size_t c = 0; c < source.num_classes(); ++c) {
    if (source.class_index[c].size() < shots + queries) {
      throw ValidationError("episode: class '" + source.class_names[c] + "' has " +
                            std::to_string(source.class_index[c].size()) + " instances, need " +
                            std::to_string(shots + queries));
    }
  }
  Rng rng(seed);
  const auto classes = detail::choose_without_replacement(source.num_classes(), ways, rng);
  const std::size_t d = source.in_dim();
  std::vector<double> sx, qx;
  std::vector<std::size_t> sy, qy, srows, qrows;
  for (std::size_t k = 0; k < ways; ++k) {
    const auto& rows = source.class_index[classes[k]];
    const auto picks = detail::choose_without_replacement(rows.size(), shots + queries, rng);
    for (std::size_t s = 0; s < picks.size(); ++s) {
      const std::size_t r = rows[picks[s]];
      auto& dst = s < shots ? sx : qx;
      const auto row = source.features.values().subspan(r * d, d);
      dst.insert(dst.end(), row.begin(), row.end());
      (s < shots ? sy : qy).push_back(k);
      (s < shots ? srows : qrows).push_back(r);
    }
  }
  return {Tensor::matrix(ways * shots, d, std::move(sx)),
          std::move(sy),
          Tensor::matrix(ways * queries, d, std::move(qx)),
          std::move(qy),
          ways,
          shots,
          queries,
          seed,
          classes,
          std::move(srows),
          std::move(qrows)};
}

// ---------------------------------------------------------------------------
// CSV: header `label,f0,...,f{d-1}`, then `label,x0,...,x{d-1}` per line.
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline DatasetTable parse_dataset_csv(std::string_view text, const std::string& origin = "<memory>") {
  std::vector<std::string_view> lines;
  for (std::size_t start = 0; start < text.size();) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.push_back(line);
    start = end + 1;
  }
  while (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty()) throw ValidationError(origin + ": dataset file is empty");

  const auto header = detail::split_commas(lines[0]);
  if (header.size() < 2 || header[0] != "label") {
    throw ParseError(origin + ":1: header must be 'label,f0,...,f{d-1}'");
  }
  const std::size_t d = header.size() - 1;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j + 1] != "f" + std::to_string(j)) {
      throw ParseError(origin + ":1: unknown header field '" + std::string(header[j + 1]) + "', expected f" +
                       std::to_string(j));
    }
  }
  if (lines.size() < 2) throw ValidationError(origin + ": dataset has a header but no rows");

  std::vector<double> features;
  std::vector<std::size_t> labels;
  std::vector<std::string> names;
  std::map<std::string, std::size_t, std::less<>> ids;
  for (std::size_t ln = 1; ln < lines.size(); ++ln) {
    const auto where = origin + ":" + std::to_string(ln + 1);
    const auto fields = detail::split_commas(lines[ln]);
    if (fields.size() != d + 1) {
      throw ParseError(where + ": expected " + std::to_string(d + 1) + " fields, got " + std::to_string(fields.size()));
    }
    if (fields[0].empty()) throw ParseError(where + ": empty label");
    auto it = ids.find(fields[0]);
    if (it == ids.end()) {
      it = ids.emplace(std::string(fields[0]), names.size()).first;
      names.emplace_back(fields[0]);
    }
    labels.push_back(it->second);
    for (std::size_t j = 1; j <= d; ++j) {
      double v = 0.0;
      const auto f = fields[j];
      const auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size()) {
        throw ParseError(where + ": field " + std::to_string(j) + " '" + std::string(f) + "' is not a number");
      }
      features.push_back(v);
    }
  }
  const std::size_t rows = labels.size();
  return make_table(Tensor::matrix(rows, d, std::move(features)), std::move(labels), std::move(names));
}

inline DatasetTable load_dataset_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_dataset_csv(buf.str(), path);
}

inline std::string format_dataset_csv(const DatasetTable& table) {
  std::string out = "label";
  for (std::size_t j = 0; j < table.in_dim(); ++j) out += ",f" + std::to_string(j);
  out += '\n';
  for (std::size_t r = 0; r < table.rows(); ++r) {
    out += table.class_names[table.labels[r]];
    for (std::size_t j = 0; j < table.in_dim(); ++j) out += "," + detail::format_double(table.features.at(r, j));
    out += '\n';
  }
  return out;
}

inline void write_dataset_csv(const DatasetTable& table, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write dataset '" + path + "'");
  out << format_dataset_csv(table);
  if (!out) throw IoError("write failed for '" + path + "'");
}

/// Largest-remainder apportionment of `total` items over `fractions`; ties
/// in the remainder go to the earlier slot.
inline std::array<std::size_t, 3> largest_remainder(std::size_t total, const std::array<double, 3>& fractions) {
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double quota = fractions[i] * static_cast<double>(total);
    counts[i] = static_cast<std::size_t>(std::floor(quota + 1e-9));
    rem[i] = quota - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < total; ++i, ++assigned) ++counts[order[i % 3]];
  return counts;
}

/// Partitions classes (not rows) into train/val/test tables.
inline std::array<DatasetTable, 3> split_classes(const DatasetTable& table, const std::array<double, 3>& fractions,
                                                 std::uint64_t seed) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f >= 0.0)) throw ValidationError("split_classes: fractions must be non-negative");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ValidationError("split_classes: fractions must sum to 1");
  const auto counts = largest_remainder(table.num_classes(), fractions);
  static constexpr std::array<const char*, 3> kNames{"train", "val", "test"};
  for (std::size_t i = 0; i < 3; ++i) {
    if (counts[i] == 0) {
      throw ValidationError("split_classes: " + std::string(kNames[i]) + " split receives zero of " +
                            std::to_string(table.num_classes()) + " classes");
    }
  }
  Rng rng(seed);
  const auto order = detail::choose_without_replacement(table.num_classes(), table.num_classes(), rng);
  const auto build = [&](std::size_t first, std::size_t count) {
    std::vector<std::size_t> chosen(order.begin() + static_cast<std::ptrdiff_t>(first),
                                    order.begin() + static_cast<std::ptrdiff_t>(first + count));
    std::sort(chosen.begin(), chosen.end());
    std::vector<double> feats;
    std::vector<std::size_t> labels;
    std::vector<std::string> names;
    for (std::size_t c = 0; c < chosen.size(); ++c) {
      names.push_back(table.class_names[chosen[c]]);
      for (auto r : table.class_index[chosen[c]]) {
        const auto row = table.features.values().subspan(r * table.in_dim(), table.in_dim());
        feats.insert(feats.end(), row.begin(), row.end());
        labels.push_back(c);
      }
    }
    const std::size_t rows = labels.size();
    return make_table(Tensor::matrix(rows, table.in_dim(), std::move(feats)), std::move(labels), std::move(names));
  };
  return {build(0, counts[0]), build(counts[0], counts[1]), build(counts[0] + counts[1], counts[2])};
}

}  // namespace a2m
