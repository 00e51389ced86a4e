// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "oracles.hpp"

using namespace a2m;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

const fs::path& scratch() {
  static const fs::path dir = [] {
    auto d = fs::temp_directory_path() / ("a2m_acceptance_" + std::to_string(std::random_device{}()));
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

ExperimentConfig reference_config(const std::string& name) {
  auto c = load_config(std::string(A2M_SOURCE_DIR) + "/configs/" + name);
  c.checkpoint_path = (scratch() / "ref.ckpt").string();
  c.results_path = (scratch() / "ref_results.csv").string();
  c.bench_path.clear();
  return c;
}

std::vector<double> gradient_of(const MetaModel& model, const std::function<Tensor(const MetaModel&)>& loss) {
  auto tape = Tape::create();
  const auto live = track(model, *tape);
  const auto params = live.parameters();
  const auto grads = backward(loss(live), params);
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(grads.at(p));
  return oracle::flatten(out);
}

Verdict gradient_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> width(2, 7);
    const std::size_t in = width(rng), hidden = width(rng), emb = width(rng), ways = width(rng) % 4 + 2, n = 8;
    const std::vector<std::size_t> dims{in, hidden, emb};
    auto model = MetaModel::create(dims, ways, 0.01, seed);
    auto p = model.parameters();
    for (auto& t : p) t = Tensor(t.shape(), oracle::flatten(std::vector{oracle::random_matrix(1, t.size(), rng, -1, 1)}));
    model = model.with_parameters(p);
    const auto x = oracle::random_matrix(n, in, rng);
    std::vector<std::size_t> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = i % ways;
    const auto loss = [&](const MetaModel& m) {
      return softmax_cross_entropy(head_logits(m.shared_head, embed(m.embedding, x)), y);
    };
    const auto g = gradient_of(model, loss);
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<Tensor>& q) { return loss(model.with_parameters(q)).item(); }, model.parameters());
    worst = std::max(worst, oracle::max_rel_err(g, fd));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 10.0, fmt("max rel err %.3g over 20 seeds (< 1e-4), %.2f s (< 10 s)", worst, secs)};
}

Verdict second_order_exactness() {
  const std::vector<Tensor> w{Tensor::vector({1.5, -0.4, 2.2, 0.7})};
  const ParamLoss half_sq = [](std::span<const Tensor> p) { return scale(sum_all(mul(p[0], p[0])), 0.5); };
  double worst_second = 0.0, worst_first = 0.0;
  for (double alpha : {0.1, 0.5, 1.0}) {
    const auto second = maml_meta_gradient(w, half_sq, half_sq, alpha, MamlOrder::second).meta_grads[0];
    const auto first = maml_meta_gradient(w, half_sq, half_sq, alpha, MamlOrder::first).meta_grads[0];
    for (std::size_t i = 0; i < w[0].size(); ++i) {
      worst_second = std::max(worst_second, std::abs(second[i] - (1 - alpha) * (1 - alpha) * w[0][i]));
      worst_first = std::max(worst_first, std::abs(first[i] - (1 - alpha) * w[0][i]));
    }
  }
  return {worst_second <= 1e-10 && worst_first <= 1e-10,
          fmt("|g2 - (1-a)^2 w| = %.3g, |g1 - (1-a) w| = %.3g for a in {0.1,0.5,1.0} (<= 1e-10)", worst_second,
              worst_first)};
}

Verdict ridge_oracle() {
  double worst = 0.0;
  for (std::uint64_t s = 0; s < 10; ++s) {
    std::mt19937_64 rng(100 + s);
    const auto x = oracle::random_matrix(20, 8, rng, -1, 1);
    const auto y = oracle::random_matrix(20, 5, rng, -1, 1);
    const double lambda = 0.5 + 0.25 * static_cast<double>(s);
    const auto got = ridge_fit(x, y, lambda).weight;
    const auto want = oracle::ridge_by_gradient_descent(x, y, lambda);
    worst = std::max(worst, oracle::max_abs_diff(got.values(), want));
  }
  return {worst < 1e-6, fmt("max |W_ridge - W_gd| = %.3g on 10 random 20x8 systems (< 1e-6)", worst)};
}

Verdict detachment_invariant() {
  constexpr std::size_t ways = 3;
  double worst_fd = 0.0, worst_split = 0.0, min_support_branch = 1e300;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const std::vector<std::size_t> dims{4, 6, 5};
    auto model = MetaModel::create(dims, ways, 0.05, seed + 1);
    std::mt19937_64 rng(seed + 50);
    auto p = model.parameters();
    for (std::size_t i = 1; i < p.size(); i += 2) p[i] = oracle::random_vector(p[i].size(), rng, -0.3, 0.3);
    model = model.with_parameters(p);
    const auto ep = sample_episode(make_gaussian_dist(4, 2.0, 1.0, 6, seed), ways, 2, 3, seed + 7);

    StrategyConfig cfg;
    cfg.components = {Component::mean_centroid, Component::mlp, Component::init_based};
    cfg.inner_steps = 3;
    cfg.inner_lr = 0.3;
    const auto got = oracle::flatten(a2m_meta_gradient(model, ep, cfg).grads);

    // Task parameters frozen at their adapted values.
    const auto support = embed(model.embedding, ep.support_x);
    const auto centers = mean_centroid(support, ep.support_y, ways).centers;
    const auto mlp = mlp_adapt({5, cfg.mlp_hidden, ways}, support, ep.support_y, cfg.inner_steps, cfg.inner_lr,
                               derive_seed(ep.seed, seed_salt::mlp_head));
    const auto adapted = init_based_adapt(model.shared_head, support, ep.support_y, cfg.inner_steps, cfg.inner_lr,
                                          AnilMode::first_order);
    const auto dw = sub(adapted.head.weight, adapted.source.weight);
    const auto db = sub(adapted.head.bias, adapted.source.bias);
    const auto frozen_loss = [&](const std::vector<Tensor>& q) {
      const auto m = model.with_parameters(q);
      const auto emb = embed(m.embedding, ep.query_x);
      const LinearHead head{add(m.shared_head.weight, dw), add(m.shared_head.bias, db)};
      const auto logits = add(add(neg(sq_dist(emb, centers)), head_logits(mlp.head, emb)), head_logits(head, emb));
      return softmax_cross_entropy(logits, ep.query_y).item();
    };
    worst_fd = std::max(worst_fd, oracle::max_rel_err(got, oracle::fd_gradient(frozen_loss, model.parameters())));

    // coupled ProtoNet = A2M(mean_centroid) + support branch.
    cfg.components = {Component::mean_centroid};
    const auto decoupled = oracle::flatten(a2m_meta_gradient(model, ep, cfg).grads);
    const auto coupled = oracle::flatten(coupled_protonet_meta_gradient(model, ep).grads);
    const auto support_branch = gradient_of(model, [&](const MetaModel& live) {
      const auto c = mean_centroid(embed(live.embedding, ep.support_x), ep.support_y, ways).centers;
      return softmax_cross_entropy(neg(sq_dist(detach(embed(live.embedding, ep.query_x)), c)), ep.query_y);
    });
    double branch_norm = 0.0;
    for (std::size_t i = 0; i < coupled.size(); ++i) {
      worst_split = std::max(worst_split, std::abs(coupled[i] - decoupled[i] - support_branch[i]));
      branch_norm += std::abs(support_branch[i]);
    }
    min_support_branch = std::min(min_support_branch, branch_norm);
  }
  return {worst_fd < 1e-4 && worst_split < 1e-12 && min_support_branch > 1e-6,
          fmt("frozen-task FD rel err %.3g (< 1e-4); |coupled - a2m - support branch| = %.3g, support branch L1 >= %.3g",
              worst_fd, worst_split, min_support_branch)};
}

Verdict reference_learning() {
  const auto c = reference_config("gaussian_5way_1shot.cfg");
  const auto t0 = std::chrono::steady_clock::now();
  const auto sources = make_sources(c);
  const auto trained = train_model(c, sources);
  const auto eval = evaluate_model(trained.model, sources.eval, c, c.eval_episodes, c.effective_eval_seed());
  const double secs = seconds_since(t0);
  const std::size_t episodes = c.epochs * c.episodes_per_epoch;
  return {eval.mean_accuracy >= 0.85 && secs < 300.0 && episodes == 2000 && eval.accuracies.size() == 600,
          fmt("mean acc %.4f over %zu eval episodes after %zu training episodes (>= 0.85), %.1f s (< 300 s)",
              eval.mean_accuracy, eval.accuracies.size(), episodes, secs)};
}

Verdict ablation() {
  auto c = reference_config("gaussian_5way_1shot.cfg");
  c.results_path = (scratch() / "ablation.csv").string();
  const auto rows = run_ablation(c);
  const RunRecord* best_single = nullptr;
  for (std::size_t i = 0; i < 3; ++i)
    if (!best_single || rows[i].mean_accuracy > best_single->mean_accuracy) best_single = &rows[i];
  const auto& triple = rows.back();
  const double bound = best_single->mean_accuracy - best_single->ci95_halfwidth;
  return {rows.size() == 7 && triple.mean_accuracy >= bound,
          fmt("triple %.6f vs best singleton %s %.6f - %.6f = %.6f", triple.mean_accuracy,
              best_single->strategy.c_str(), best_single->mean_accuracy, best_single->ci95_halfwidth, bound)};
}

Verdict efficiency() {
  auto c = reference_config("bench_5way_1shot.cfg");
  const auto rows = run_bench(c);
  const auto find = [&](const std::string& name) {
    for (const auto& r : rows)
      if (r.variant == name) return r;
    throw UsageError("bench variant missing: " + name);
  };
  const auto proto = find("a2m_protonet"), ensemble = find("a2m_ensemble");
  const auto first = find("maml_first_order"), second = find("maml_second_order");
  const double train_ratio = ensemble.train_ms_per_ep / proto.train_ms_per_ep;
  const double eval_ratio = ensemble.eval_ms_per_ep / proto.eval_ms_per_ep;
  return {train_ratio <= 3.0 && eval_ratio <= 3.0 && second.train_ms_per_ep >= first.train_ms_per_ep &&
              c.bench_episodes == 100,
          fmt("ensemble/protonet train %.2fx eval %.2fx (<= 3x); maml train second %.4f ms >= first %.4f ms",
              train_ratio, eval_ratio, second.train_ms_per_ep, first.train_ms_per_ep)};
}

Verdict determinism() {
  std::vector<std::string> checkpoints, rows, logs;
  for (int run = 0; run < 2; ++run) {
    auto c = reference_config("gaussian_5way_1shot.cfg");
    c.record_timing = false;
    const auto dir = scratch() / ("determinism_" + std::to_string(run));
    fs::create_directories(dir);
    c.checkpoint_path = (dir / "model.ckpt").string();
    c.results_path = (dir / "results.csv").string();
    run_train(c);
    run_eval(c.checkpoint_path, c);
    checkpoints.push_back(read_file(c.checkpoint_path));
    rows.push_back(read_file(c.results_path));
    logs.push_back(read_file(c.effective_log_path()));
  }
  const bool same = checkpoints[0] == checkpoints[1] && rows[0] == rows[1] && logs[0] == logs[1];
  return {same && !checkpoints[0].empty() && !rows[0].empty(),
          fmt("checkpoints %s (%zu bytes), results rows %s, training logs %s",
              checkpoints[0] == checkpoints[1] ? "identical" : "DIFFER", checkpoints[0].size(),
              rows[0] == rows[1] ? "identical" : "DIFFER", logs[0] == logs[1] ? "identical" : "DIFFER")};
}

Verdict data_pipeline() {
  constexpr std::size_t classes = 12, per_class = 9, dim = 3, ways = 5, shots = 2, queries = 4;
  std::mt19937_64 rng(77);
  std::ostringstream csv;
  csv << "label,f0,f1,f2\n";
  for (std::size_t i = 0; i < per_class; ++i)
    for (std::size_t k = 0; k < classes; ++k) {
      csv << "class_" << char('a' + k);
      for (double v : oracle::random_vector(dim, rng).values()) csv << ',' << v;
      csv << '\n';
    }
  const auto path = (scratch() / "pipeline.csv").string();
  std::ofstream(path, std::ios::binary) << csv.str();
  const auto table = load_dataset_csv(path);

  std::size_t violations = 0;
  for (std::uint64_t s = 0; s < 1000; ++s) {
    const auto ep = sample_episode(table, ways, shots, queries, s);
    std::set<std::size_t> support(ep.support_rows.begin(), ep.support_rows.end());
    violations += support.size() != ep.support_rows.size();
    std::set<std::size_t> query(ep.query_rows.begin(), ep.query_rows.end());
    violations += query.size() != ep.query_rows.size();
    for (auto r : ep.query_rows) violations += support.count(r);
    violations += std::set<std::size_t>(ep.classes.begin(), ep.classes.end()).size() != ways;
    std::vector<std::size_t> s_count(ways, 0), q_count(ways, 0);
    for (std::size_t i = 0; i < ep.support_y.size(); ++i) {
      if (ep.support_y[i] >= ways) {
        ++violations;
        continue;
      }
      ++s_count[ep.support_y[i]];
      violations += table.labels[ep.support_rows[i]] != ep.classes[ep.support_y[i]];
    }
    for (std::size_t i = 0; i < ep.query_y.size(); ++i) {
      if (ep.query_y[i] >= ways) {
        ++violations;
        continue;
      }
      ++q_count[ep.query_y[i]];
      violations += table.labels[ep.query_rows[i]] != ep.classes[ep.query_y[i]];
    }
    for (std::size_t k = 0; k < ways; ++k) violations += (s_count[k] != shots) + (q_count[k] != queries);
  }
  return {violations == 0, fmt("%zu violations over 1000 CSV-backed episodes", violations)};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, Verdict (*)()>> criteria{
      {"gradient exactness", gradient_exactness},   {"second-order exactness", second_order_exactness},
      {"ridge oracle", ridge_oracle},               {"detachment invariant", detachment_invariant},
      {"reference learning", reference_learning},   {"component ablation", ablation},
      {"efficiency", efficiency},                   {"determinism", determinism},
      {"data pipeline", data_pipeline},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failures += !v.pass;
    std::printf("criterion %zu (%s): %s  %s\n", i + 1, criteria[i].first, v.pass ? "PASS" : "FAIL", v.detail.c_str());
    std::fflush(stdout);
  }
  fs::remove_all(scratch());
  return failures == 0 ? 0 : 1;
}
