#pragma once

// Meta-training strategies.
//
// Coupled strategies (ProtoNet, MAML) compute task parameters as a
// differentiable function of θ and back-propagate the query loss through
// them. The adaptation-agnostic strategy (A2M) runs inner adaptation with θ
// held fixed, then updates θ from the query loss with the task parameters
// held fixed, so any inner solver can be plugged in.

#include <chrono>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "a2m/autodiff.hpp"
#include "a2m/episodes.hpp"
#include "a2m/inner_algorithms.hpp"
#include "a2m/networks.hpp"
#include "a2m/rng.hpp"

namespace a2m {

/// θ = {θ′, φ}: the embedding network plus the shared head used by the
/// init-based component.
struct MetaModel {
  EmbeddingNet embedding;
  LinearHead shared_head;
  double meta_lr = 0.01;

  static MetaModel create(std::span<const std::size_t> embedding_dims, std::size_t ways, double meta_lr,
                          std::uint64_t seed) {
    auto net = EmbeddingNet::create(embedding_dims, derive_seed(seed, seed_salt::embedding_init));
    Rng rng(derive_seed(seed, seed_salt::head_init));
    auto head = LinearHead::create(net.out_dim(), ways, rng);
    return {std::move(net), std::move(head), meta_lr};
  }

  std::vector<Tensor> parameters() const {
    auto p = embedding.parameters();
    p.push_back(shared_head.weight);
    p.push_back(shared_head.bias);
    return p;
  }

  MetaModel with_parameters(std::span<const Tensor> p) const {
    const auto n = embedding.parameters().size();
    if (p.size() != n + 2) throw UsageError("meta model parameter count mismatch");
    return {embedding.with_parameters(p.first(n)), shared_head.with_parameters(p.subspan(n)), meta_lr};
  }
};

enum class Strategy { a2m_ensemble, a2m_single, coupled_protonet, coupled_maml };
enum class Component { mean_centroid, mlp, init_based };
enum class MamlOrder { first, second };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::a2m_ensemble: return "a2m_ensemble";
    case Strategy::a2m_single: return "a2m_single";
    case Strategy::coupled_protonet: return "coupled_protonet";
    case Strategy::coupled_maml: return "coupled_maml";
  }
  return "?";
}

inline std::string to_string(Component c) {
  switch (c) {
    case Component::mean_centroid: return "mean_centroid";
    case Component::mlp: return "mlp";
    case Component::init_based: return "init_based";
  }
  return "?";
}

inline std::string to_string(AnilMode m) {
  switch (m) {
    case AnilMode::detached: return "detached";
    case AnilMode::first_order: return "first_order";
    case AnilMode::second_order: return "second_order";
  }
  return "?";
}

inline std::string to_string(MamlOrder o) { return o == MamlOrder::first ? "first" : "second"; }

struct StrategyConfig {
  Strategy strategy = Strategy::a2m_ensemble;
  std::vector<Component> components{Component::mean_centroid, Component::mlp, Component::init_based};
  std::size_t inner_steps = 5;
  double inner_lr = 0.01;
  AnilMode anil_mode = AnilMode::first_order;
  MamlOrder maml_order = MamlOrder::second;
  bool detach_task_params = true;
  std::size_t mlp_hidden = 32;
};

struct EpisodeOutcome {
  double query_loss = 0.0;
  double query_accuracy = 0.0;
  std::chrono::nanoseconds wall_time{0};
  bool grads_applied = false;
};

/// Meta-gradient aligned with MetaModel::parameters().
struct MetaGradient {
  std::vector<Tensor> grads;
  EpisodeOutcome outcome;
};

inline double accuracy(const Tensor& logits, std::span<const std::size_t> labels) {
  const auto pred = argmax_rows(logits);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

namespace detail {

using Clock = std::chrono::steady_clock;

inline bool is_a2m(Strategy s) { return s == Strategy::a2m_ensemble || s == Strategy::a2m_single; }

inline void check_ways(const MetaModel& model, const Episode& ep) {
  if (model.shared_head.ways() != ep.ways) {
    throw DimensionError("shared head has " + std::to_string(model.shared_head.ways()) + " outputs but episode is " +
                         std::to_string(ep.ways) + "-way");
  }
  if (model.embedding.in_dim() != ep.support_x.shape()[1]) {
    throw DimensionError("embedding expects width " + std::to_string(model.embedding.in_dim()) +
                         " but episode features have width " + std::to_string(ep.support_x.shape()[1]));
  }
}

inline void check_components(const StrategyConfig& cfg) {
  if (cfg.components.empty()) throw ValidationError(to_string(cfg.strategy) + ": components must be non-empty");
  if (cfg.strategy == Strategy::a2m_single && cfg.components.size() != 1) {
    throw ValidationError("a2m_single: exactly one component required, got " + std::to_string(cfg.components.size()));
  }
}

inline std::uint64_t mlp_seed(const Episode& ep) { return derive_seed(ep.seed, seed_salt::mlp_head); }

inline std::vector<Tensor> grads_in_order(const GradMap& grads, std::span<const Tensor> params) {
  std::vector<Tensor> out;
  for (const auto& p : params) out.push_back(grads.at(p));
  return out;
}

/// The shared head as seen by the meta-update for one adapted task head.
inline LinearHead head_for_meta_update(const AdaptedHead& adapted, const LinearHead& shared, AnilMode mode) {
  switch (mode) {
    case AnilMode::detached:
      return detach(adapted.head);
    case AnilMode::second_order:
      return adapted.head;
    case AnilMode::first_order:
      break;
  }
  // shared + (adapted - source) as a constant displacement: values equal the
  // adapted head, gradient lands on the shared head unchanged.
  const auto displaced = [](const Tensor& live, const Tensor& to, const Tensor& from) {
    return add(live, sub(detach(to), detach(from)));
  };
  return {displaced(shared.weight, adapted.head.weight, adapted.source.weight),
          displaced(shared.bias, adapted.head.bias, adapted.source.bias)};
}

/// Inner adaptation (θ fixed) then ensemble query logits. `live` may be
/// tracked (training) or constant (evaluation).
inline Tensor a2m_query_logits(const MetaModel& live, const Episode& ep, const StrategyConfig& cfg) {
  const bool detach_task = cfg.detach_task_params;
  const Tensor support_emb = embed(detach_task ? detach(live.embedding) : live.embedding, ep.support_x);
  const Tensor query_emb = embed(live.embedding, ep.query_x);
  const MlpHeadConfig mlp_arch{live.embedding.out_dim(), cfg.mlp_hidden, ep.ways};

  std::vector<Tensor> parts;
  for (const auto component : cfg.components) {
    switch (component) {
      case Component::mean_centroid: {
        auto protos = mean_centroid(support_emb, ep.support_y, ep.ways);
        if (detach_task) protos.centers = detach(protos.centers);
        parts.push_back(predict_logits(protos, query_emb));
        break;
      }
      case Component::init_based: {
        const auto adapted =
            init_based_adapt(live.shared_head, support_emb, ep.support_y, cfg.inner_steps, cfg.inner_lr, cfg.anil_mode);
        parts.push_back(head_logits(head_for_meta_update(adapted, live.shared_head, cfg.anil_mode), query_emb));
        break;
      }
      case Component::mlp: {
        auto adapted = mlp_adapt(mlp_arch, support_emb, ep.support_y, cfg.inner_steps, cfg.inner_lr, mlp_seed(ep));
        if (detach_task) adapted.head = detach(adapted.head);
        parts.push_back(predict_logits(adapted, query_emb));
        break;
      }
    }
  }
  return ensemble_logits(parts);
}

inline Tensor protonet_query_logits(const MetaModel& live, const Episode& ep) {
  const auto protos = mean_centroid(embed(live.embedding, ep.support_x), ep.support_y, ep.ways);
  return predict_logits(protos, embed(live.embedding, ep.query_x));
}

inline Tensor network_logits(const MetaModel& m, const Tensor& x) { return head_logits(m.shared_head, embed(m.embedding, x)); }

}  // namespace detail

struct BilevelGradient {
  std::vector<Tensor> meta_grads;   // aligned with the initial parameters
  std::vector<Tensor> adapted;      // post-inner-step parameters, constants
  double outer_loss = 0.0;
};

using ParamLoss = std::function<Tensor(std::span<const Tensor>)>;

/// MAML meta-gradient: one inner step θ_a = θ − α∇L_in(θ), then ∇_θ L_out(θ_a).
/// `second` differentiates through the inner step; `first` treats the step
/// as a constant displacement.
inline BilevelGradient maml_meta_gradient(std::span<const Tensor> init, const ParamLoss& inner_loss,
                                          const ParamLoss& outer_loss, double inner_lr, MamlOrder order) {
  if (inner_lr < 0.0) throw ValidationError("maml: inner learning rate must be non-negative");
  auto tape = Tape::create();
  std::vector<Tensor> live;
  for (const auto& p : init) live.push_back(tape->track(p));

  const bool second = order == MamlOrder::second;
  const auto inner_grads = backward(inner_loss(live), live, /*create_graph=*/second);
  std::vector<Tensor> adapted;
  for (const auto& p : live) {
    const auto& g = inner_grads.at(p);
    adapted.push_back(second ? sub(p, scale(g, inner_lr)) : add(p, scale(detach(g), -inner_lr)));
  }
  const auto outer = outer_loss(adapted);
  BilevelGradient out;
  out.meta_grads = detail::grads_in_order(backward(outer, live), live);
  for (const auto& a : adapted) out.adapted.push_back(detach(a));
  out.outer_loss = outer.item();
  return out;
}

inline MetaGradient a2m_meta_gradient(const MetaModel& model, const Episode& ep, const StrategyConfig& cfg) {
  detail::check_components(cfg);
  detail::check_ways(model, ep);
  const auto start = detail::Clock::now();
  auto tape = Tape::create();
  const auto live = track(model, *tape);
  const auto params = live.parameters();
  const auto logits = detail::a2m_query_logits(live, ep, cfg);
  const auto loss = softmax_cross_entropy(logits, ep.query_y);
  MetaGradient out{detail::grads_in_order(backward(loss, params), params), {}};
  out.outcome = {loss.item(), accuracy(logits, ep.query_y), detail::Clock::now() - start, false};
  return out;
}

inline MetaGradient coupled_protonet_meta_gradient(const MetaModel& model, const Episode& ep) {
  detail::check_ways(model, ep);
  const auto start = detail::Clock::now();
  auto tape = Tape::create();
  const auto live = track(model, *tape);
  const auto params = live.parameters();
  const auto logits = detail::protonet_query_logits(live, ep);
  const auto loss = softmax_cross_entropy(logits, ep.query_y);
  MetaGradient out{detail::grads_in_order(backward(loss, params), params), {}};
  out.outcome = {loss.item(), accuracy(logits, ep.query_y), detail::Clock::now() - start, false};
  return out;
}

/// MAML over the whole network θ = {θ′, φ}: support loss for the inner step,
/// query loss at the adapted parameters for the meta-gradient.
inline MetaGradient coupled_maml_meta_gradient(const MetaModel& model, const Episode& ep, double inner_lr,
                                               MamlOrder order) {
  detail::check_ways(model, ep);
  const auto start = detail::Clock::now();
  const auto init = model.parameters();
  const auto loss_on = [m = &model](const Tensor& x, std::span<const std::size_t> y) -> ParamLoss {
    return [m, px = &x, y](std::span<const Tensor> p) {
      return softmax_cross_entropy(detail::network_logits(m->with_parameters(p), *px), y);
    };
  };
  const auto result =
      maml_meta_gradient(init, loss_on(ep.support_x, ep.support_y), loss_on(ep.query_x, ep.query_y), inner_lr, order);
  const auto logits = detail::network_logits(model.with_parameters(result.adapted), ep.query_x);
  MetaGradient out{result.meta_grads, {}};
  out.outcome = {result.outer_loss, accuracy(logits, ep.query_y), detail::Clock::now() - start, false};
  return out;
}

inline MetaGradient compute_meta_gradient(const MetaModel& model, const Episode& ep, const StrategyConfig& cfg) {
  switch (cfg.strategy) {
    case Strategy::a2m_ensemble:
    case Strategy::a2m_single:
      return a2m_meta_gradient(model, ep, cfg);
    case Strategy::coupled_protonet:
      return coupled_protonet_meta_gradient(model, ep);
    case Strategy::coupled_maml:
      return coupled_maml_meta_gradient(model, ep, cfg.inner_lr, cfg.maml_order);
  }
  throw UsageError("unknown strategy");
}

/// θ ← θ − meta_lr · g.
inline MetaModel apply_sgd(const MetaModel& model, std::span<const Tensor> grads) {
  const auto params = model.parameters();
  if (grads.size() != params.size()) throw UsageError("apply_sgd: gradient count mismatch");
  GradMap map;
  for (std::size_t i = 0; i < params.size(); ++i) map.insert(params[i], grads[i]);
  return model.with_parameters(sgd_step(params, map, model.meta_lr));
}

namespace detail {
inline std::pair<MetaModel, EpisodeOutcome> step_with(const MetaModel& model, MetaGradient mg) {
  const auto start = Clock::now();
  auto next = apply_sgd(model, mg.grads);
  mg.outcome.wall_time += Clock::now() - start;
  mg.outcome.grads_applied = true;
  return {std::move(next), mg.outcome};
}
}  // namespace detail

/// One decoupled iteration: adapt with θ fixed, then update θ with the task
/// parameters fixed.
inline std::pair<MetaModel, EpisodeOutcome> a2m_episode_step(const MetaModel& model, const Episode& ep,
                                                             const StrategyConfig& cfg) {
  if (!detail::is_a2m(cfg.strategy)) throw UsageError("a2m_episode_step: strategy is " + to_string(cfg.strategy));
  return detail::step_with(model, a2m_meta_gradient(model, ep, cfg));
}

/// Ensemble form: every configured component adapts independently and their
/// query logits are summed for a single meta-update.
inline std::pair<MetaModel, EpisodeOutcome> a2m_ensemble_step(const MetaModel& model, const Episode& ep,
                                                              const StrategyConfig& cfg) {
  return a2m_episode_step(model, ep, cfg);
}

inline std::pair<MetaModel, EpisodeOutcome> coupled_protonet_step(const MetaModel& model, const Episode& ep) {
  return detail::step_with(model, coupled_protonet_meta_gradient(model, ep));
}

inline std::pair<MetaModel, EpisodeOutcome> coupled_maml_step(const MetaModel& model, const Episode& ep,
                                                              double inner_lr, MamlOrder order) {
  return detail::step_with(model, coupled_maml_meta_gradient(model, ep, inner_lr, order));
}

inline std::pair<MetaModel, EpisodeOutcome> meta_step(const MetaModel& model, const Episode& ep,
                                                      const StrategyConfig& cfg) {
  return detail::step_with(model, compute_meta_gradient(model, ep, cfg));
}

/// Inner adaptation and query scoring only; `model` is never modified.
inline EpisodeOutcome evaluate_episode(const MetaModel& model, const Episode& ep, const StrategyConfig& cfg) {
  detail::check_ways(model, ep);
  const auto start = detail::Clock::now();
  Tensor logits = [&] {
    switch (cfg.strategy) {
      case Strategy::a2m_ensemble:
      case Strategy::a2m_single:
        detail::check_components(cfg);
        return detail::a2m_query_logits(model, ep, cfg);
      case Strategy::coupled_protonet:
        return detail::protonet_query_logits(model, ep);
      case Strategy::coupled_maml: {
        auto tape = Tape::create();
        const auto live = track(model, *tape);
        const auto params = live.parameters();
        const auto loss = softmax_cross_entropy(detail::network_logits(live, ep.support_x), ep.support_y);
        const auto adapted = model.with_parameters(sgd_step(params, backward(loss, params), cfg.inner_lr));
        return detail::network_logits(adapted, ep.query_x);
      }
    }
    throw UsageError("unknown strategy");
  }();
  const auto loss = softmax_cross_entropy(logits, ep.query_y);
  return {loss.item(), accuracy(logits, ep.query_y), detail::Clock::now() - start, false};
}

}  // namespace a2m
