#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "a2m/errors.hpp"

namespace a2m {

inline constexpr const char* kResultsHeader =
    "strategy,ways,shots,eval_episodes,mean_acc,ci95,train_ms_per_ep,eval_ms_per_ep,seed,config_digest";

struct RunRecord {
  std::string strategy;
  std::size_t ways = 0;
  std::size_t shots = 0;
  std::size_t eval_episodes = 0;
  double mean_accuracy = 0.0;
  double ci95_halfwidth = 0.0;
  double train_ms_per_ep = 0.0;
  double eval_ms_per_ep = 0.0;
  std::uint64_t seed = 0;
  std::string config_digest;
};

inline double mean_of(std::span<const double> xs) {
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// 1.96 · sample std / sqrt(n).
inline double ci95_halfwidth(std::span<const double> xs) {
  if (xs.size() < 2) throw ValidationError("ci95 needs at least two samples");
  const double m = mean_of(xs);
  double ss = 0.0;
  for (double x : xs) ss += (x - m) * (x - m);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return 1.96 * sd / std::sqrt(static_cast<double>(xs.size()));
}

inline std::string format_results_row(const RunRecord& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%s,%zu,%zu,%zu,%.6f,%.6f,%.3f,%.3f,%llu,%s", r.strategy.c_str(), r.ways, r.shots,
                r.eval_episodes, r.mean_accuracy, r.ci95_halfwidth, r.train_ms_per_ep, r.eval_ms_per_ep,
                static_cast<unsigned long long>(r.seed), r.config_digest.c_str());
  return buf;
}

/// Appends rows, writing the header first when the file is new or empty.
/// Existing rows are never rewritten.
inline void append_results(const std::string& path, std::span<const RunRecord> rows) {
  bool need_header = true;
  if (std::filesystem::exists(path) && std::filesystem::file_size(path) > 0) {
    std::ifstream in(path);
    std::string first;
    std::getline(in, first);
    if (first != kResultsHeader) throw FormatError("results file '" + path + "' has an unexpected header");
    need_header = false;
  }
  std::ofstream out(path, std::ios::app | std::ios::binary);
  if (!out) throw IoError("cannot append to results file '" + path + "'");
  if (need_header) out << kResultsHeader << '\n';
  for (const auto& r : rows) out << format_results_row(r) << '\n';
  if (!out) throw IoError("write failed for results file '" + path + "'");
}

}  // namespace a2m
