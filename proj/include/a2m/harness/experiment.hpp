#pragma once

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <variant>
#include <vector>

#include "a2m/episodes.hpp"
#include "a2m/harness/checkpoint.hpp"
#include "a2m/harness/config.hpp"
#include "a2m/harness/results.hpp"
#include "a2m/meta_training.hpp"
#include "a2m/optimizer.hpp"

namespace a2m {

using TaskSource = std::variant<GaussianTaskDist, DatasetTable>;

/// Meta-train, validation and meta-test sources. Class sets are disjoint:
/// CSV tables are split by class, Gaussian sources draw fresh class pools.
struct TaskSources {
  TaskSource train;
  TaskSource val;
  TaskSource eval;
};

inline TaskSources make_sources(const ExperimentConfig& c) {
  if (c.source == DataSource::gaussian) {
    const auto dist = [&](std::uint64_t seed) {
      return make_gaussian_dist(c.in_dim, c.class_separation, c.noise_sigma, c.pool_classes, seed);
    };
    return {dist(c.data_seed), dist(derive_seed(c.data_seed, seed_salt::val_data)),
            dist(derive_seed(c.data_seed, seed_salt::eval_data))};
  }
  const auto check_width = [&](const DatasetTable& t, const std::string& path) {
    if (t.in_dim() != c.in_dim) {
      throw ValidationError("config: in_dim is " + std::to_string(c.in_dim) + " but '" + path + "' has " +
                            std::to_string(t.in_dim()) + " features");
    }
  };
  const auto table = load_dataset_csv(c.train_csv);
  check_width(table, c.train_csv);
  auto parts = split_classes(table, c.split_fractions, derive_seed(c.data_seed, seed_salt::class_split));
  if (c.eval_csv.empty()) return {std::move(parts[0]), std::move(parts[1]), std::move(parts[2])};
  auto cross = load_dataset_csv(c.eval_csv);
  check_width(cross, c.eval_csv);
  return {std::move(parts[0]), std::move(parts[1]), std::move(cross)};
}

inline Episode draw_episode(const TaskSource& source, const ExperimentConfig& c, std::uint64_t seed) {
  return std::visit([&](const auto& s) { return sample_episode(s, c.ways, c.shots, c.queries, seed); }, source);
}

inline MetaModel initial_model(const ExperimentConfig& c) {
  return MetaModel::create(c.network_dims(), c.ways, c.effective_meta_lr(), c.seed);
}

inline std::string strategy_label(const StrategyConfig& s) {
  std::string label = to_string(s.strategy);
  if (detail::is_a2m(s.strategy)) {
    label += "[";
    for (std::size_t i = 0; i < s.components.size(); ++i) label += (i ? "+" : "") + to_string(s.components[i]);
    label += "]";
  } else if (s.strategy == Strategy::coupled_maml) {
    label += "[" + to_string(s.maml_order) + "]";
  }
  return label;
}

namespace detail {
inline double to_ms(std::chrono::nanoseconds ns) { return std::chrono::duration<double, std::milli>(ns).count(); }

inline std::string fixed(double v, int digits = 6) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}
}  // namespace detail

struct EvalSummary {
  std::vector<double> accuracies;
  double mean_accuracy = 0.0;
  double ms_per_episode = 0.0;
};

inline EvalSummary evaluate_model(const MetaModel& model, const TaskSource& source, const ExperimentConfig& c,
                                  std::size_t episodes, std::uint64_t seed) {
  EvalSummary out;
  std::chrono::nanoseconds total{0};
  for (std::size_t i = 0; i < episodes; ++i) {
    const auto ep = draw_episode(source, c, derive_seed(seed, i));
    const auto r = evaluate_episode(model, ep, c.strategy);
    out.accuracies.push_back(r.query_accuracy);
    total += r.wall_time;
  }
  out.mean_accuracy = mean_of(out.accuracies);
  out.ms_per_episode = detail::to_ms(total) / static_cast<double>(episodes);
  return out;
}

struct TrainResult {
  MetaModel model;
  Checkpoint checkpoint;
  std::vector<std::string> log;  // deterministic: no timings
  double ms_per_episode = 0.0;
};

/// Meta-training in memory. Episodes are drawn in a fixed order; with
/// meta_batch > 1 the gradients of consecutive episodes are averaged.
inline TrainResult train_model(const ExperimentConfig& c, const TaskSources& sources) {
  validate(c);
  auto model = initial_model(c);
  MetaOptimizer optimizer(c.optimizer, c.effective_meta_lr());
  const auto train_seed = derive_seed(c.seed, seed_salt::train_episode);
  const auto val_seed = derive_seed(c.seed, seed_salt::val_episode);
  const auto n_params = model.parameters().size();

  TrainResult out{model, {}, {}, 0.0};
  std::chrono::nanoseconds total{0};
  std::size_t index = 0;
  for (std::size_t epoch = 0; epoch < c.epochs; ++epoch) {
    double loss_sum = 0.0, acc_sum = 0.0;
    std::vector<std::vector<double>> acc_grad;
    std::size_t in_batch = 0;
    for (std::size_t i = 0; i < c.episodes_per_epoch; ++i, ++index) {
      const auto ep = draw_episode(sources.train, c, derive_seed(train_seed, index));
      const auto start = std::chrono::steady_clock::now();
      auto mg = compute_meta_gradient(model, ep, c.strategy);
      if (acc_grad.empty()) {
        for (const auto& g : mg.grads) acc_grad.emplace_back(g.values().begin(), g.values().end());
      } else {
        for (std::size_t p = 0; p < n_params; ++p)
          for (std::size_t j = 0; j < acc_grad[p].size(); ++j) acc_grad[p][j] += mg.grads[p][j];
      }
      ++in_batch;
      if (in_batch == c.meta_batch || i + 1 == c.episodes_per_epoch) {
        std::vector<Tensor> avg;
        for (std::size_t p = 0; p < n_params; ++p) {
          for (auto& v : acc_grad[p]) v /= static_cast<double>(in_batch);
          avg.emplace_back(mg.grads[p].shape(), std::move(acc_grad[p]));
        }
        model = optimizer.apply(model, avg);
        acc_grad.clear();
        in_batch = 0;
      }
      total += std::chrono::steady_clock::now() - start;
      loss_sum += mg.outcome.query_loss;
      acc_sum += mg.outcome.query_accuracy;
    }
    const auto val = evaluate_model(model, sources.val, c, c.val_episodes, derive_seed(val_seed, epoch));
    const double n = static_cast<double>(c.episodes_per_epoch);
    out.log.push_back("epoch=" + std::to_string(epoch + 1) + " episodes=" + std::to_string(index) +
                      " train_loss=" + detail::fixed(loss_sum / n) + " train_acc=" + detail::fixed(acc_sum / n) +
                      " val_acc=" + detail::fixed(val.mean_accuracy));
  }
  out.model = model;
  out.checkpoint = make_checkpoint(model, config_digest(c));
  if (index > 0) out.ms_per_episode = detail::to_ms(total) / static_cast<double>(index);
  return out;
}

/// `train`: meta-train, then write the checkpoint and the training log.
inline TrainResult run_train(const ExperimentConfig& c) {
  validate(c);
  const auto sources = make_sources(c);
  auto result = train_model(c, sources);
  save_checkpoint(result.checkpoint, c.checkpoint_path);
  std::ofstream log(c.effective_log_path(), std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write training log '" + c.effective_log_path() + "'");
  for (const auto& line : result.log) log << line << '\n';
  return result;
}

inline RunRecord make_record(const ExperimentConfig& c, const EvalSummary& eval, double train_ms) {
  RunRecord r;
  r.strategy = strategy_label(c.strategy);
  r.ways = c.ways;
  r.shots = c.shots;
  r.eval_episodes = eval.accuracies.size();
  r.mean_accuracy = eval.mean_accuracy;
  r.ci95_halfwidth = ci95_halfwidth(eval.accuracies);
  r.train_ms_per_ep = c.record_timing ? train_ms : 0.0;
  r.eval_ms_per_ep = c.record_timing ? eval.ms_per_episode : 0.0;
  r.seed = c.seed;
  r.config_digest = config_digest(c);
  return r;
}

/// `eval`: score a checkpoint on meta-test episodes and append one row to
/// the results file. The checkpoint is only read.
inline RunRecord run_eval(const std::string& checkpoint_path, const ExperimentConfig& c) {
  validate(c);
  const auto model = model_from_checkpoint(load_checkpoint(checkpoint_path), initial_model(c));
  const auto sources = make_sources(c);
  const auto eval = evaluate_model(model, sources.eval, c, c.eval_episodes, c.effective_eval_seed());
  const auto record = make_record(c, eval, 0.0);
  append_results(c.results_path, std::span<const RunRecord>(&record, 1));
  return record;
}

/// The seven non-empty component subsets, singles then pairs then the triple.
inline std::vector<std::vector<Component>> ablation_subsets() {
  using enum Component;
  return {{mean_centroid}, {mlp}, {init_based}, {mean_centroid, mlp}, {mlp, init_based}, {mean_centroid, init_based},
          {mean_centroid, mlp, init_based}};
}

/// `ablate`: train and evaluate every component subset under the same seeds
/// and budget.
inline std::vector<RunRecord> run_ablation(const ExperimentConfig& c) {
  validate(c);
  if (c.strategy.strategy != Strategy::a2m_ensemble) throw ValidationError("ablate: strategy must be a2m_ensemble");
  const auto sources = make_sources(c);
  std::vector<RunRecord> rows;
  for (const auto& subset : ablation_subsets()) {
    auto variant = c;
    variant.strategy.components = subset;
    const auto trained = train_model(variant, sources);
    const auto eval = evaluate_model(trained.model, sources.eval, variant, c.eval_episodes, c.effective_eval_seed());
    rows.push_back(make_record(variant, eval, trained.ms_per_episode));
  }
  append_results(c.results_path, rows);
  return rows;
}

struct BenchRow {
  std::string variant;
  double train_ms_per_ep = 0.0;
  double eval_ms_per_ep = 0.0;
};

inline std::vector<std::pair<std::string, StrategyConfig>> bench_variants(const StrategyConfig& base) {
  auto proto = base;
  proto.strategy = Strategy::a2m_ensemble;
  proto.components = {Component::mean_centroid};
  auto ensemble = proto;
  ensemble.components = {Component::mean_centroid, Component::mlp, Component::init_based};
  auto maml_first = base;
  maml_first.strategy = Strategy::coupled_maml;
  maml_first.maml_order = MamlOrder::first;
  auto maml_second = maml_first;
  maml_second.maml_order = MamlOrder::second;
  return {{"a2m_protonet", proto}, {"a2m_ensemble", ensemble}, {"maml_first_order", maml_first},
          {"maml_second_order", maml_second}};
}

inline constexpr std::size_t kBenchBlocks = 5;

/// `bench`: per-episode wall time of meta-training and meta-testing for each
/// reference variant. Variants take turns over kBenchBlocks blocks of
/// `bench_episodes` episodes; the fastest block is reported, which keeps
/// interference from other processes out of the comparison.
inline std::vector<BenchRow> run_bench(const ExperimentConfig& c) {
  validate(c);
  const auto sources = make_sources(c);
  const std::size_t warmup = 5;
  const auto train_seed = derive_seed(c.seed, seed_salt::train_episode);
  const auto variants = bench_variants(c.strategy);

  struct State {
    ExperimentConfig config;
    MetaModel model;
    BenchRow row;
  };
  std::vector<State> states;
  for (const auto& [name, strategy] : variants) {
    auto variant = c;
    variant.strategy = strategy;
    auto model = initial_model(variant);
    for (std::size_t i = 0; i < warmup; ++i) {
      const auto ep = draw_episode(sources.train, variant, derive_seed(train_seed, i));
      model = meta_step(model, ep, variant.strategy).first;
      (void)evaluate_episode(model, ep, variant.strategy);
    }
    states.push_back({variant, model, {name, std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()}});
  }

  const double n = static_cast<double>(c.bench_episodes);
  for (std::size_t block = 0; block < kBenchBlocks; ++block) {
    std::vector<Episode> episodes;
    for (std::size_t i = 0; i < c.bench_episodes; ++i) {
      episodes.push_back(draw_episode(sources.train, c, derive_seed(train_seed, warmup + block * c.bench_episodes + i)));
    }
    for (auto& st : states) {
      auto start = std::chrono::steady_clock::now();
      for (const auto& ep : episodes) st.model = meta_step(st.model, ep, st.config.strategy).first;
      const auto train = std::chrono::steady_clock::now() - start;
      start = std::chrono::steady_clock::now();
      for (const auto& ep : episodes) (void)evaluate_episode(st.model, ep, st.config.strategy);
      const auto eval = std::chrono::steady_clock::now() - start;
      st.row.train_ms_per_ep = std::min(st.row.train_ms_per_ep, detail::to_ms(train) / n);
      st.row.eval_ms_per_ep = std::min(st.row.eval_ms_per_ep, detail::to_ms(eval) / n);
    }
  }
  std::vector<BenchRow> rows;
  for (const auto& st : states) rows.push_back(st.row);
  if (!c.bench_path.empty()) {
    std::ofstream out(c.bench_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write bench table '" + c.bench_path + "'");
    out << "variant,train_ms_per_ep,eval_ms_per_ep\n";
    for (const auto& r : rows) out << r.variant << "," << detail::fixed(r.train_ms_per_ep, 4) << "," << detail::fixed(r.eval_ms_per_ep, 4) << "\n";
  }
  return rows;
}

}  // namespace a2m
