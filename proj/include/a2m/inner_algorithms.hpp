#pragma once

// Inner-task algorithms. Each consumes an embedded support set and yields
// task-specific parameters plus a way to score query embeddings with them.

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "a2m/autodiff.hpp"
#include "a2m/networks.hpp"

namespace a2m {

struct Prototypes {
  Tensor centers;  // [K×emb_dim]
};

struct AdaptedHead {
  LinearHead head;
  std::size_t steps_taken = 0;
  LinearHead source;  // the shared head the adaptation started from
};

struct MlpHeadParams {
  MlpHead head;
  std::uint64_t seed = 0;
  std::size_t steps_taken = 0;
};

struct RidgeWeights {
  Tensor weight;  // [emb_dim×K]
  double lambda = 1.0;
};

struct TaskParams;

struct EnsembleParams {
  std::vector<TaskParams> members;
};

struct TaskParams : std::variant<Prototypes, AdaptedHead, MlpHeadParams, RidgeWeights, EnsembleParams> {
  using variant::variant;
};

/// How the meta-update reaches the shared head after init-based adaptation.
enum class AnilMode {
  detached,      // shared head receives no meta-gradient
  first_order,   // query-loss gradient at the adapted head is applied to the shared head
  second_order,  // differentiate through the inner steps
};

inline Tensor one_hot(std::span<const std::size_t> labels, std::size_t ways) {
  std::vector<double> v(labels.size() * ways, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= ways) throw ValidationError("one_hot: label " + std::to_string(labels[i]) + " >= ways " + std::to_string(ways));
    v[i * ways + labels[i]] = 1.0;
  }
  return Tensor::matrix(labels.size(), ways, std::move(v));
}

/// Per-class mean embedding. Computed as A·emb with A the constant [K×n]
/// averaging matrix, so the centers stay differentiable w.r.t. `emb`.
inline Prototypes mean_centroid(const Tensor& emb, std::span<const std::size_t> labels, std::size_t ways) {
  detail::require_rank(emb, 2, "mean_centroid", "embeddings");
  const std::size_t n = emb.shape()[0];
  if (labels.size() != n) {
    throw DimensionError("mean_centroid: " + std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  }
  std::vector<std::size_t> count(ways, 0);
  for (auto y : labels) {
    if (y >= ways) throw ValidationError("mean_centroid: label " + std::to_string(y) + " >= ways " + std::to_string(ways));
    ++count[y];
  }
  for (std::size_t k = 0; k < ways; ++k) {
    if (count[k] == 0) throw ValidationError("mean_centroid: class " + std::to_string(k) + " has no support samples");
  }
  std::vector<double> avg(ways * n, 0.0);
  for (std::size_t j = 0; j < n; ++j) avg[labels[j] * n + j] = 1.0 / static_cast<double>(count[labels[j]]);
  return {matmul(Tensor::matrix(ways, n, std::move(avg)), emb)};
}

namespace detail {

/// `steps` gradient-descent steps on support cross-entropy. When the head or
/// the embeddings are tracked, the steps are recorded (create_graph) so the
/// result stays differentiable; otherwise each step runs on a scratch tape.
template <ParameterModule Head>
Head descend_support_loss(Head head, const Tensor& emb, std::span<const std::size_t> labels, std::size_t steps,
                          double lr) {
  for (std::size_t s = 0; s < steps; ++s) {
    if (any_tracked(head) || emb.tracked()) {
      const auto params = head.parameters();
      const auto loss = softmax_cross_entropy(head_logits(head, emb), labels);
      const auto grads = backward(loss, params, /*create_graph=*/true);
      std::vector<Tensor> next;
      for (const auto& p : params) next.push_back(sub(p, scale(grads.at(p), lr)));
      head = head.with_parameters(next);
    } else {
      auto tape = Tape::create();
      const auto live = track(head, *tape);
      const auto params = live.parameters();
      const auto loss = softmax_cross_entropy(head_logits(live, emb), labels);
      head = head.with_parameters(sgd_step(params, backward(loss, params), lr));
    }
  }
  return head;
}

}  // namespace detail

/// Init-based (ANIL-style) adaptation of the shared linear head. Only in
/// second_order mode is the result connected to `shared` on its tape.
inline AdaptedHead init_based_adapt(const LinearHead& shared, const Tensor& emb, std::span<const std::size_t> labels,
                                    std::size_t steps, double lr, AnilMode mode) {
  if (lr < 0.0) throw ValidationError("init_based_adapt: learning rate must be non-negative");
  const LinearHead source = detach(shared);
  const LinearHead start = mode == AnilMode::second_order ? shared : source;
  return {detail::descend_support_loss(start, emb, labels, steps, lr), steps, source};
}

/// Freshly seeded two-layer head trained by SGD on the support set.
inline MlpHeadParams mlp_adapt(const MlpHeadConfig& arch, const Tensor& emb, std::span<const std::size_t> labels,
                               std::size_t steps, double lr, std::uint64_t seed) {
  if (lr < 0.0) throw ValidationError("mlp_adapt: learning rate must be non-negative");
  return {detail::descend_support_loss(MlpHead::create(arch, seed), emb, labels, steps, lr), seed, steps};
}

/// Closed-form ridge regression W = (XᵀX + λI)⁻¹XᵀY via a Cholesky solve.
inline RidgeWeights ridge_fit(const Tensor& emb, const Tensor& targets, double lambda) {
  detail::require_rank(emb, 2, "ridge_fit", "embeddings");
  detail::require_rank(targets, 2, "ridge_fit", "targets");
  if (!(lambda > 0.0)) throw ValidationError("ridge_fit: lambda must be positive");
  const std::size_t n = emb.shape()[0], d = emb.shape()[1], k = targets.shape()[1];
  if (targets.shape()[0] != n) {
    throw DimensionError("ridge_fit: " + std::to_string(targets.shape()[0]) + " target rows for " +
                         std::to_string(n) + " embeddings");
  }
  for (double v : emb.values())
    if (!std::isfinite(v)) throw NumericError("ridge_fit: non-finite embedding value");
  for (double v : targets.values())
    if (!std::isfinite(v)) throw NumericError("ridge_fit: non-finite target value");

  using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMat> x(emb.values().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  const Eigen::Map<const RowMat> y(targets.values().data(), static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
  Eigen::MatrixXd gram = x.transpose() * x;
  gram.diagonal().array() += lambda;
  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success) throw NumericError("ridge_fit: normal equations are not positive definite");
  const RowMat w = llt.solve(x.transpose() * y);
  if (!w.allFinite()) throw NumericError("ridge_fit: solution is not finite");
  return {Tensor::matrix(d, k, std::vector<double>(w.data(), w.data() + w.size())), lambda};
}

/// Elementwise sum of per-component logits.
inline Tensor ensemble_logits(std::span<const Tensor> per_component) {
  if (per_component.empty()) throw ValidationError("ensemble_logits: no components");
  Tensor total = per_component.front();
  for (std::size_t i = 1; i < per_component.size(); ++i) {
    if (per_component[i].shape() != total.shape()) {
      throw ValidationError("ensemble_logits: component " + std::to_string(i) + " has shape " +
                            per_component[i].shape().to_string() + ", expected " + total.shape().to_string());
    }
    total = add(total, per_component[i]);
  }
  return total;
}

inline Tensor predict_logits(const TaskParams& params, const Tensor& query_emb) {
  return std::visit(
      [&](const auto& p) -> Tensor {
        using T = std::decay_t<decltype(p)>;
        if constexpr (std::is_same_v<T, Prototypes>) {
          return neg(pairwise_sq_dist(query_emb, p.centers));
        } else if constexpr (std::is_same_v<T, AdaptedHead> || std::is_same_v<T, MlpHeadParams>) {
          return head_logits(p.head, query_emb);
        } else if constexpr (std::is_same_v<T, RidgeWeights>) {
          return matmul(query_emb, p.weight);
        } else {
          std::vector<Tensor> parts;
          for (const auto& m : p.members) parts.push_back(predict_logits(m, query_emb));
          return ensemble_logits(parts);
        }
      },
      static_cast<const TaskParams::variant&>(params));
}

/// Row-wise argmax; ties go to the lowest class index.
inline std::vector<std::size_t> argmax_rows(const Tensor& logits) {
  const std::size_t n = logits.shape()[0], k = logits.shape()[1];
  std::vector<std::size_t> out(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 1; j < k; ++j)
      if (logits.at(i, j) > logits.at(i, out[i])) out[i] = j;
  }
  return out;
}

}  // namespace a2m
