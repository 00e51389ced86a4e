#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "a2m/autodiff.hpp"
#include "a2m/rng.hpp"

namespace a2m {

/// A parameterized function family whose parameters can be listed in a
/// fixed order and replaced wholesale.
template <class M>
concept ParameterModule = requires(const M& m, std::span<const Tensor> params) {
  { m.parameters() } -> std::same_as<std::vector<Tensor>>;
  { m.with_parameters(params) } -> std::same_as<M>;
};

template <ParameterModule M>
M track(const M& module, Tape& tape) {
  std::vector<Tensor> tracked;
  for (const auto& p : module.parameters()) tracked.push_back(tape.track(p));
  return module.with_parameters(tracked);
}

template <ParameterModule M>
M detach(const M& module) {
  std::vector<Tensor> out;
  for (const auto& p : module.parameters()) out.push_back(detach(p));
  return module.with_parameters(out);
}

template <ParameterModule M>
bool any_tracked(const M& module) {
  for (const auto& p : module.parameters())
    if (p.tracked()) return true;
  return false;
}

/// Glorot-uniform weights in ±sqrt(6 / (fan_in + fan_out)).
inline Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(fan_in * fan_out);
  for (auto& x : v) x = uniform(rng, -limit, limit);
  return Tensor::matrix(fan_in, fan_out, std::move(v));
}

struct DenseLayer {
  Tensor weight;  // [in×out]
  Tensor bias;    // [out]

  static DenseLayer create(std::size_t in, std::size_t out, Rng& rng) {
    return {glorot_uniform(in, out, rng), Tensor::zeros(Shape{out})};
  }

  std::size_t in_dim() const { return weight.shape()[0]; }
  std::size_t out_dim() const { return weight.shape()[1]; }
  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
};

/// Dense ReLU network f_θ′: linear layers with ReLU between them (none after
/// the last). Zero layers is the identity map.
class EmbeddingNet {
 public:
  EmbeddingNet(std::size_t in_dim, std::vector<DenseLayer> layers) : in_dim_(in_dim), layers_(std::move(layers)) {
    std::size_t width = in_dim_;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      if (layers_[i].in_dim() != width || layers_[i].bias.shape() != Shape{layers_[i].out_dim()}) {
        throw DimensionError("embedding layer " + std::to_string(i) + " expects input width " +
                             std::to_string(layers_[i].in_dim()) + " but receives " + std::to_string(width));
      }
      width = layers_[i].out_dim();
    }
  }

  /// `dims` = {in_dim, h1, ..., out_dim}; a single entry builds the identity.
  static EmbeddingNet create(std::span<const std::size_t> dims, std::uint64_t seed) {
    if (dims.empty()) throw ValidationError("embedding dims must contain at least the input width");
    Rng rng(seed);
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) layers.push_back(DenseLayer::create(dims[i], dims[i + 1], rng));
    return EmbeddingNet(dims.front(), std::move(layers));
  }

  std::size_t in_dim() const noexcept { return in_dim_; }
  std::size_t out_dim() const noexcept { return layers_.empty() ? in_dim_ : layers_.back().out_dim(); }
  const std::vector<DenseLayer>& layers() const noexcept { return layers_; }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> p;
    for (const auto& l : layers_) {
      p.push_back(l.weight);
      p.push_back(l.bias);
    }
    return p;
  }

  EmbeddingNet with_parameters(std::span<const Tensor> params) const {
    if (params.size() != 2 * layers_.size()) {
      throw UsageError("embedding net has " + std::to_string(2 * layers_.size()) + " parameters, got " +
                       std::to_string(params.size()));
    }
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i < layers_.size(); ++i) layers.push_back({params[2 * i], params[2 * i + 1]});
    return EmbeddingNet(in_dim_, std::move(layers));
  }

 private:
  std::size_t in_dim_;
  std::vector<DenseLayer> layers_;
};

inline Tensor embed(const EmbeddingNet& net, const Tensor& batch) {
  detail::require_rank(batch, 2, "embed", "batch");
  if (batch.shape()[1] != net.in_dim()) {
    throw DimensionError("embed: batch width " + std::to_string(batch.shape()[1]) + " does not match in_dim " +
                         std::to_string(net.in_dim()));
  }
  Tensor h = batch;
  const auto& layers = net.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = layers[i].forward(h);
    if (i + 1 < layers.size()) h = relu(h);
  }
  return h;
}

/// Linear head g_φ: [emb_dim] -> K logits.
struct LinearHead {
  Tensor weight;  // [emb_dim×K]
  Tensor bias;    // [K]

  static LinearHead create(std::size_t emb_dim, std::size_t ways, Rng& rng) {
    return {glorot_uniform(emb_dim, ways, rng), Tensor::zeros(Shape{ways})};
  }

  std::size_t in_dim() const { return weight.shape()[0]; }
  std::size_t ways() const { return weight.shape()[1]; }

  std::vector<Tensor> parameters() const { return {weight, bias}; }
  LinearHead with_parameters(std::span<const Tensor> p) const {
    if (p.size() != 2) throw UsageError("linear head has 2 parameters, got " + std::to_string(p.size()));
    return {p[0], p[1]};
  }
};

struct MlpHeadConfig {
  std::size_t in_dim = 0;
  std::size_t hidden = 32;
  std::size_t ways = 0;
};

/// Two-layer perceptron head: linear, ReLU, linear.
struct MlpHead {
  DenseLayer hidden;
  DenseLayer output;

  static MlpHead create(const MlpHeadConfig& cfg, std::uint64_t seed) {
    if (cfg.in_dim == 0 || cfg.hidden == 0 || cfg.ways == 0) throw ValidationError("mlp head extents must be positive");
    Rng rng(seed);
    auto h = DenseLayer::create(cfg.in_dim, cfg.hidden, rng);
    auto o = DenseLayer::create(cfg.hidden, cfg.ways, rng);
    return {std::move(h), std::move(o)};
  }

  std::size_t ways() const { return output.out_dim(); }

  std::vector<Tensor> parameters() const { return {hidden.weight, hidden.bias, output.weight, output.bias}; }
  MlpHead with_parameters(std::span<const Tensor> p) const {
    if (p.size() != 4) throw UsageError("mlp head has 4 parameters, got " + std::to_string(p.size()));
    return {{p[0], p[1]}, {p[2], p[3]}};
  }
};

inline Tensor head_logits(const LinearHead& head, const Tensor& emb) { return linear(emb, head.weight, head.bias); }

inline Tensor head_logits(const MlpHead& head, const Tensor& emb) {
  return head.output.forward(relu(head.hidden.forward(emb)));
}

/// Squared Euclidean distances [n×K] between query rows and center rows.
inline Tensor pairwise_sq_dist(const Tensor& queries, const Tensor& centers) { return sq_dist(queries, centers); }

}  // namespace a2m
