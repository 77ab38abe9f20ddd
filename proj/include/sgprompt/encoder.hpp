#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "sgprompt/autograd.hpp"
#include "sgprompt/graph.hpp"
#include "sgprompt/tensor.hpp"

namespace sgprompt {

/// Two-layer perceptron of one GIN layer: relu(relu(x·w1 + b1)·w2 + b2).
struct GinLayer {
  Tensor w1;  // in x hidden
  Tensor b1;  // 1 x hidden
  Tensor w2;  // hidden x hidden
  Tensor b2;  // 1 x hidden

  bool operator==(const GinLayer&) const = default;
};

struct EncoderParams {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::vector<GinLayer> layers;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t parameter_count() const;
  // Tensors in a fixed order (layer by layer: w1, b1, w2, b2).
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;

  bool operator==(const EncoderParams&) const = default;
};

inline constexpr std::size_t kDefaultLayers = 3;
inline constexpr std::size_t kDefaultHidden = 32;
inline constexpr std::size_t kDefaultDelta = 1;

/// Glorot-uniform weights drawn from `seed`, zero biases.
EncoderParams init_encoder(std::size_t input_dim, std::size_t hidden_dim, std::size_t layers,
                           std::uint64_t seed);

/// Several graphs laid out as one block-diagonal graph. Node i of member m
/// is row offsets[m] + i.
struct GraphBatch {
  std::shared_ptr<const Tensor> features;
  std::shared_ptr<const Csr> adjacency;
  std::vector<std::size_t> offsets{0};  // size = members + 1

  std::size_t num_members() const { return offsets.size() - 1; }
  std::size_t num_nodes() const { return offsets.back(); }
};

GraphBatch make_batch(std::span<const Graph* const> graphs);
GraphBatch make_batch(const Graph& g);

/// Encoder weights as expression leaves: trainable parameters during
/// pre-training, constants when the encoder is frozen.
struct EncoderExprs {
  struct Layer {
    ag::Expr w1, b1, w2, b2;
  };
  std::vector<Layer> layers;

  std::vector<ag::Expr> leaves() const;
};

EncoderExprs encoder_exprs(const EncoderParams& p, bool trainable);

/// Layer outputs H⁰ (the input) through Hᴸ. When `prompt` is set, the
/// output of layer `prompt_layer` is replaced by prompt ⊙ Hˡ before the
/// next layer consumes it.
std::vector<ag::Expr> gin_forward(const EncoderExprs& enc, const ag::Expr& features,
                                  const std::shared_ptr<const Csr>& adjacency,
                                  const ag::Expr* prompt = nullptr, std::size_t prompt_layer = 0);

/// Σ_l w_l · (output of a pass prompted at layer l) for l = 0..L. `weights`
/// is 1 x (L+1).
ag::Expr fused_prompt_forward(const EncoderExprs& enc, const ag::Expr& features,
                              const std::shared_ptr<const Csr>& adjacency,
                              std::span<const ag::Expr> prompts, const ag::Expr& weights);

/// Sum-pooling plan: output row s is the sum of the rows listed in sets[s].
struct ReadoutPlan {
  std::shared_ptr<const ag::Index> rows;
  std::shared_ptr<const ag::Index> segments;
  std::size_t count = 0;
};

ReadoutPlan make_readout_plan(const std::vector<std::vector<std::size_t>>& sets);
ag::Expr readout_expr(const ag::Expr& h, const ReadoutPlan& plan);

// Tensor-level operations. All run the same expressions the training code
// differentiates.
Tensor encode(const Graph& g, const EncoderParams& p);
std::vector<Tensor> encode_layers(const Graph& g, const EncoderParams& p);
Tensor encode_with_layer_prompt(const Graph& g, const EncoderParams& p, const Tensor& prompt,
                                std::size_t layer);
Tensor fused_prompt_embeddings(const Graph& g, const EncoderParams& p,
                               std::span<const Tensor> prompts, const Tensor& weights);
Tensor readout(const Tensor& h, const Subgraph& s);
Tensor prompted_readout(const Tensor& h, const Subgraph& s, const Tensor& prompt);

}  // namespace sgprompt
