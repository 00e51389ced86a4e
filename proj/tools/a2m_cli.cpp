// a2m: train, evaluate, ablate and benchmark few-shot meta-learners.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>

#include "a2m/a2m.hpp"

namespace {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::string out;
};

a2m::ExperimentConfig load(const std::string& path, const Overrides& o, bool out_is_results) {
  auto cfg = a2m::load_config(path);
  if (o.seed) cfg.seed = *o.seed;
  if (!o.out.empty()) (out_is_results ? cfg.results_path : cfg.checkpoint_path) = o.out;
  a2m::validate(cfg);
  return cfg;
}

std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  return s;
}

void print_record(const a2m::RunRecord& r) {
  std::printf("%s %zu-way %zu-shot: acc=%.4f +/- %.4f over %zu episodes\n", r.strategy.c_str(), r.ways, r.shots,
              r.mean_accuracy, r.ci95_halfwidth, r.eval_episodes);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptation-agnostic few-shot meta-learning"};
  app.require_subcommand(1);

  std::string config_path, checkpoint_path;
  Overrides overrides;
  const auto common = [&](CLI::App* sub, const char* out_help) {
    sub->add_option("--config", config_path, "Experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", overrides.seed, "Override the run seed");
    sub->add_option("--out", overrides.out, out_help);
  };

  auto* train = app.add_subcommand("train", "Meta-train and write a checkpoint");
  common(train, "Checkpoint path (overrides checkpoint_path)");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint and append a results row");
  common(eval, "Results CSV path (overrides results_path)");
  eval->add_option("--checkpoint", checkpoint_path, "Checkpoint to evaluate")->required();
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate every component subset");
  common(ablate, "Results CSV path (overrides results_path)");
  auto* bench = app.add_subcommand("bench", "Time meta-training and meta-testing per episode");
  common(bench, "Bench CSV path (overrides bench_path)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);  // --help
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: usage_error: " << one_line(e.what()) << '\n';
    return 1;
  }

  try {
    if (train->parsed()) {
      const auto cfg = load(config_path, overrides, false);
      const auto result = a2m::run_train(cfg);
      for (const auto& line : result.log) std::cout << line << '\n';
      std::cout << "checkpoint: " << cfg.checkpoint_path << '\n';
    } else if (eval->parsed()) {
      print_record(a2m::run_eval(checkpoint_path, load(config_path, overrides, true)));
    } else if (ablate->parsed()) {
      for (const auto& r : a2m::run_ablation(load(config_path, overrides, true))) print_record(r);
    } else if (bench->parsed()) {
      auto cfg = load(config_path, {overrides.seed, ""}, false);
      if (!overrides.out.empty()) cfg.bench_path = overrides.out;
      for (const auto& r : a2m::run_bench(cfg))
        std::printf("%-18s train %.3f ms/ep  eval %.3f ms/ep\n", r.variant.c_str(), r.train_ms_per_ep, r.eval_ms_per_ep);
    }
  } catch (const a2m::Error& e) {
    std::cerr << "error: " << e.kind() << ": " << one_line(e.what()) << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << one_line(e.what()) << '\n';
    return 2;
  }
  return 0;
}
