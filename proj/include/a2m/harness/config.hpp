#pragma once

// Experiment configuration: a plain `key = value` file with `#` comments.

#include <algorithm>
#include <array>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "a2m/errors.hpp"
#include "a2m/meta_training.hpp"
#include "a2m/optimizer.hpp"

namespace a2m {

enum class DataSource { gaussian, csv };

struct ExperimentConfig {
  StrategyConfig strategy;

  std::size_t ways = 5;
  std::size_t shots = 1;
  std::size_t queries = 15;
  std::size_t episodes_per_epoch = 500;
  std::size_t epochs = 4;
  std::size_t eval_episodes = 600;
  std::size_t val_episodes = 100;
  std::size_t meta_batch = 1;
  std::size_t bench_episodes = 100;

  std::vector<std::size_t> embedding_dims{64, 64};  // widths after in_dim
  std::size_t in_dim = 16;

  DataSource source = DataSource::gaussian;
  double class_separation = 4.0;
  double noise_sigma = 1.0;
  std::size_t pool_classes = 64;
  std::uint64_t data_seed = 0;
  std::string train_csv;
  std::string eval_csv;  // optional cross-domain evaluation source
  std::array<double, 3> split_fractions{0.64, 0.16, 0.20};

  std::uint64_t seed = 0;
  std::optional<std::uint64_t> eval_seed;

  std::optional<double> meta_lr;  // unset: 0.01 for sgd, 0.001 for adaptive
  OptimizerKind optimizer = OptimizerKind::sgd;

  std::string checkpoint_path = "a2m.ckpt";
  std::string results_path = "results.csv";
  std::string log_path;    // default: checkpoint_path + ".log"
  std::string bench_path;  // empty: print only
  bool record_timing = true;

  double effective_meta_lr() const { return meta_lr.value_or(optimizer == OptimizerKind::adaptive ? 0.001 : 0.01); }
  std::uint64_t effective_eval_seed() const { return eval_seed.value_or(derive_seed(seed, seed_salt::eval_episode)); }
  std::string effective_log_path() const { return log_path.empty() ? checkpoint_path + ".log" : log_path; }

  /// {in_dim, embedding widths...}
  std::vector<std::size_t> network_dims() const {
    std::vector<std::size_t> dims{in_dim};
    dims.insert(dims.end(), embedding_dims.begin(), embedding_dims.end());
    return dims;
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

template <class T>
T parse_number(std::string_view v, const std::string& where) {
  T out{};
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ParseError(where + ": '" + std::string(v) + "' is not a valid number");
  }
  return out;
}

inline bool parse_bool(std::string_view v, const std::string& where) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ParseError(where + ": '" + std::string(v) + "' is not a boolean");
}

inline std::vector<std::string_view> split_list(std::string_view v) {
  std::vector<std::string_view> out;
  if (trim(v).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = v.find(',', start);
    out.push_back(trim(v.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <class E>
E parse_enum(std::string_view v, const std::string& where, std::initializer_list<E> options) {
  for (auto e : options)
    if (to_string(e) == v) return e;
  std::string allowed;
  for (auto e : options) allowed += (allowed.empty() ? "" : "|") + to_string(e);
  throw ParseError(where + ": '" + std::string(v) + "' is not one of " + allowed);
}

inline std::string to_string(DataSource s) { return s == DataSource::gaussian ? "gaussian" : "csv"; }
inline std::string to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adaptive"; }

inline std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <class T>
std::string join(const std::vector<T>& items, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + f(items[i]);
  return out;
}

struct ConfigKey {
  std::function<void(ExperimentConfig&, std::string_view, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  bool in_digest = true;
};

inline const std::vector<std::pair<std::string, ConfigKey>>& config_keys() {
  using C = ExperimentConfig;
  using W = const std::string&;
  auto size_key = [](std::size_t C::*field) {
    return ConfigKey{[field](C& c, std::string_view v, W w) { c.*field = parse_number<std::size_t>(v, w); },
                     [field](const C& c) { return std::to_string(c.*field); }};
  };
  auto strat_size_key = [](std::size_t StrategyConfig::*field) {
    return ConfigKey{[field](C& c, std::string_view v, W w) { c.strategy.*field = parse_number<std::size_t>(v, w); },
                     [field](const C& c) { return std::to_string(c.strategy.*field); }};
  };
  auto path_key = [](std::string C::*field, bool in_digest) {
    return ConfigKey{[field](C& c, std::string_view v, W) { c.*field = std::string(v); },
                     [field](const C& c) { return c.*field; }, in_digest};
  };
  static const std::vector<std::pair<std::string, ConfigKey>> keys = {
      {"strategy",
       {[](C& c, std::string_view v, W w) {
          c.strategy.strategy = parse_enum(v, w, {Strategy::a2m_ensemble, Strategy::a2m_single,
                                                  Strategy::coupled_protonet, Strategy::coupled_maml});
        },
        [](const C& c) { return a2m::to_string(c.strategy.strategy); }}},
      {"components",
       {[](C& c, std::string_view v, W w) {
          c.strategy.components.clear();
          for (auto item : split_list(v))
            c.strategy.components.push_back(
                parse_enum(item, w, {Component::mean_centroid, Component::mlp, Component::init_based}));
        },
        [](const C& c) {
          return join<Component>(c.strategy.components, [](const Component& x) { return a2m::to_string(x); });
        }}},
      {"inner_steps", strat_size_key(&StrategyConfig::inner_steps)},
      {"inner_lr",
       {[](C& c, std::string_view v, W w) { c.strategy.inner_lr = parse_number<double>(v, w); },
        [](const C& c) { return fmt(c.strategy.inner_lr); }}},
      {"anil_mode",
       {[](C& c, std::string_view v, W w) {
          c.strategy.anil_mode = parse_enum(v, w, {AnilMode::detached, AnilMode::first_order, AnilMode::second_order});
        },
        [](const C& c) { return a2m::to_string(c.strategy.anil_mode); }}},
      {"maml_order",
       {[](C& c, std::string_view v, W w) { c.strategy.maml_order = parse_enum(v, w, {MamlOrder::first, MamlOrder::second}); },
        [](const C& c) { return a2m::to_string(c.strategy.maml_order); }}},
      {"detach_task_params",
       {[](C& c, std::string_view v, W w) { c.strategy.detach_task_params = parse_bool(v, w); },
        [](const C& c) { return std::string(c.strategy.detach_task_params ? "true" : "false"); }}},
      {"mlp_hidden", strat_size_key(&StrategyConfig::mlp_hidden)},
      {"ways", size_key(&C::ways)},
      {"shots", size_key(&C::shots)},
      {"queries", size_key(&C::queries)},
      {"episodes_per_epoch", size_key(&C::episodes_per_epoch)},
      {"epochs", size_key(&C::epochs)},
      {"eval_episodes", size_key(&C::eval_episodes)},
      {"val_episodes", size_key(&C::val_episodes)},
      {"meta_batch", size_key(&C::meta_batch)},
      {"bench_episodes", size_key(&C::bench_episodes)},
      {"embedding_dims",
       {[](C& c, std::string_view v, W w) {
          c.embedding_dims.clear();
          for (auto item : split_list(v)) c.embedding_dims.push_back(parse_number<std::size_t>(item, w));
        },
        [](const C& c) {
          return join<std::size_t>(c.embedding_dims, [](const std::size_t& x) { return std::to_string(x); });
        }}},
      {"in_dim", size_key(&C::in_dim)},
      {"source",
       {[](C& c, std::string_view v, W w) {
          if (v == "gaussian") c.source = DataSource::gaussian;
          else if (v == "csv") c.source = DataSource::csv;
          else throw ParseError(w + ": '" + std::string(v) + "' is not one of gaussian|csv");
        },
        [](const C& c) { return to_string(c.source); }}},
      {"class_separation",
       {[](C& c, std::string_view v, W w) { c.class_separation = parse_number<double>(v, w); },
        [](const C& c) { return fmt(c.class_separation); }}},
      {"noise_sigma",
       {[](C& c, std::string_view v, W w) { c.noise_sigma = parse_number<double>(v, w); },
        [](const C& c) { return fmt(c.noise_sigma); }}},
      {"pool_classes", size_key(&C::pool_classes)},
      {"data_seed",
       {[](C& c, std::string_view v, W w) { c.data_seed = parse_number<std::uint64_t>(v, w); },
        [](const C& c) { return std::to_string(c.data_seed); }}},
      {"train_csv", path_key(&C::train_csv, true)},
      {"eval_csv", path_key(&C::eval_csv, true)},
      {"split_fractions",
       {[](C& c, std::string_view v, W w) {
          const auto items = split_list(v);
          if (items.size() != 3) throw ParseError(w + ": split_fractions needs three values (train,val,test)");
          for (std::size_t i = 0; i < 3; ++i) c.split_fractions[i] = parse_number<double>(items[i], w);
        },
        [](const C& c) {
          return fmt(c.split_fractions[0]) + "," + fmt(c.split_fractions[1]) + "," + fmt(c.split_fractions[2]);
        }}},
      {"seed",
       {[](C& c, std::string_view v, W w) { c.seed = parse_number<std::uint64_t>(v, w); },
        [](const C& c) { return std::to_string(c.seed); }}},
      {"eval_seed",
       {[](C& c, std::string_view v, W w) { c.eval_seed = parse_number<std::uint64_t>(v, w); },
        [](const C& c) { return std::to_string(c.effective_eval_seed()); }}},
      {"meta_lr",
       {[](C& c, std::string_view v, W w) { c.meta_lr = parse_number<double>(v, w); },
        [](const C& c) { return fmt(c.effective_meta_lr()); }}},
      {"optimizer",
       {[](C& c, std::string_view v, W w) {
          if (v == "sgd") c.optimizer = OptimizerKind::sgd;
          else if (v == "adaptive") c.optimizer = OptimizerKind::adaptive;
          else throw ParseError(w + ": '" + std::string(v) + "' is not one of sgd|adaptive");
        },
        [](const C& c) { return to_string(c.optimizer); }}},
      {"checkpoint_path", path_key(&C::checkpoint_path, false)},
      {"results_path", path_key(&C::results_path, false)},
      {"log_path", path_key(&C::log_path, false)},
      {"bench_path", path_key(&C::bench_path, false)},
      {"record_timing",
       {[](C& c, std::string_view v, W w) { c.record_timing = parse_bool(v, w); },
        [](const C& c) { return std::string(c.record_timing ? "true" : "false"); }, false}},
  };
  return keys;
}

}  // namespace detail

/// Rejects configurations that cannot run, before any work happens.
inline void validate(const ExperimentConfig& c) {
  const auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ValidationError(std::string("config: ") + name + " must be positive");
  };
  positive(c.ways, "ways");
  positive(c.shots, "shots");
  positive(c.queries, "queries");
  positive(c.episodes_per_epoch, "episodes_per_epoch");
  positive(c.val_episodes, "val_episodes");
  positive(c.meta_batch, "meta_batch");
  positive(c.bench_episodes, "bench_episodes");
  positive(c.in_dim, "in_dim");
  positive(c.strategy.mlp_hidden, "mlp_hidden");
  for (auto d : c.embedding_dims) positive(d, "embedding_dims entries");
  if (c.ways < 2) throw ValidationError("config: ways must be at least 2");
  if (c.eval_episodes < 2) throw ValidationError("config: eval_episodes must be at least 2");
  if (c.strategy.inner_lr < 0.0) throw ValidationError("config: inner_lr must be non-negative");
  if (c.effective_meta_lr() < 0.0) throw ValidationError("config: meta_lr must be non-negative");
  if (detail::is_a2m(c.strategy.strategy)) detail::check_components(c.strategy);
  if (c.source == DataSource::gaussian) {
    positive(c.pool_classes, "pool_classes");
    if (c.pool_classes < c.ways) throw ValidationError("config: pool_classes must be at least ways");
    if (!(c.class_separation >= 0.0) || !(c.noise_sigma >= 0.0)) {
      throw ValidationError("config: class_separation and noise_sigma must be non-negative");
    }
  } else if (c.train_csv.empty()) {
    throw ValidationError("config: source = csv requires train_csv");
  }
}

inline ExperimentConfig parse_config(std::string_view text, const std::string& origin = "<config>") {
  ExperimentConfig cfg;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  for (std::size_t start = 0; start <= text.size();) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    auto line = text.substr(start, end - start);
    start = end + 1;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(line_no);
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(where + ": expected 'key = value'");
    const auto key = std::string(detail::trim(line.substr(0, eq)));
    const auto value = detail::trim(line.substr(eq + 1));
    const auto& keys = detail::config_keys();
    const auto it = std::find_if(keys.begin(), keys.end(), [&](const auto& kv) { return kv.first == key; });
    if (it == keys.end()) throw ParseError(where + ": unknown key '" + key + "'");
    if (auto [pos, inserted] = seen.emplace(key, line_no); !inserted) {
      throw ParseError(where + ": duplicate key '" + key + "' (first set on line " + std::to_string(pos->second) + ")");
    }
    it->second.set(cfg, value, where);
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config '" + path + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

/// Every key in a fixed order; output paths and timing excluded so they do
/// not change the digest.
inline std::string canonical_config(const ExperimentConfig& c) {
  std::string out;
  for (const auto& [name, key] : detail::config_keys()) {
    if (key.in_digest) out += name + "=" + key.get(c) + "\n";
  }
  return out;
}

/// 64-bit FNV-1a of the canonical text, as 16 hex digits.
inline std::string config_digest(const ExperimentConfig& c) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : canonical_config(c)) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace a2m
