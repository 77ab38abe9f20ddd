#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sgprompt/adam.hpp"
#include "sgprompt/contrastive.hpp"
#include "sgprompt/encoder.hpp"

namespace sgprompt {

enum class PretrainKind { LinkPred, Dgi, InfoGraph, GraphCl, Gcc };

std::string to_string(PretrainKind kind);
PretrainKind parse_pretrain_kind(const std::string& text);

struct PretrainConfig {
  PretrainKind kind = PretrainKind::LinkPred;
  double tau = 0.5;
  std::size_t epochs = 100;
  std::size_t triplets_per_graph = 50;
  std::size_t negatives_per_target = 5;
  double aug_ratio = 0.2;
  std::size_t gcc_r = 1;
  std::size_t gcc_r_prime = 2;
  std::size_t walk_len = 8;
  std::size_t hidden_dim = kDefaultHidden;
  std::size_t layers = kDefaultLayers;
  std::size_t delta = kDefaultDelta;
  std::uint64_t seed = 0;
  AdamConfig adam;

  // Throws ConfigError naming the first invalid field.
  void validate() const;
};

/// A pre-training objective with its sampled data fixed: loss(params)
/// rebuilds the expression over fresh parameter leaves.
class PretrainObjective {
 public:
  PretrainObjective(const GraphCollection& c, const PretrainConfig& cfg);

  struct Evaluation {
    double loss = 0.0;
    std::vector<Tensor> grads;  // aligned with EncoderParams::tensors()
  };
  double loss(const EncoderParams& p) const;
  Evaluation loss_and_gradients(const EncoderParams& p) const;
  /// The loss as an expression whose trainable leaves are the encoder
  /// weights, for gradient checking.
  ag::Expr expression(const EncoderParams& p) const;

  std::size_t skipped() const { return skipped_; }

 private:
  ag::Expr build(const EncoderExprs& enc) const;

  PretrainConfig cfg_;
  GraphBatch batch_;
  ReadoutPlan plan_;
  TripletRows triplet_rows_;
  std::vector<ContrastiveBatch> batches_;
  std::size_t skipped_ = 0;
};

struct PretrainResult {
  EncoderParams params;
  // Loss before each epoch's update, then the loss of the final parameters:
  // epochs + 1 entries.
  std::vector<double> curve;
  std::size_t skipped = 0;
};

PretrainResult pretrain(const GraphCollection& c, const PretrainConfig& cfg);

}  // namespace sgprompt
