#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "sgprompt/adam.hpp"
#include "sgprompt/encoder.hpp"
#include "sgprompt/task.hpp"

namespace sgprompt {

enum class PromptMode { Single, Layerwise, Linear };

std::string to_string(PromptMode mode);
PromptMode parse_prompt_mode(const std::string& text);

/// Learnable prompt parameters. Only the payload of `mode` is populated.
struct PromptState {
  PromptMode mode = PromptMode::Single;
  Tensor single;                     // 1 x hidden
  std::vector<Tensor> layer_prompts;  // p⁰ (1 x input) .. pᴸ (1 x hidden)
  Tensor weights;                    // 1 x (L+1)
  Tensor matrix;                     // hidden x hidden

  std::size_t parameter_count() const;
  std::vector<Tensor*> tensors();
  std::vector<const Tensor*> tensors() const;

  bool operator==(const PromptState&) const = default;
};

/// All-ones prompts, uniform weights 1/(L+1), identity matrix.
PromptState init_prompt(PromptMode mode, const EncoderParams& encoder);

/// Graphs touched by a list of task instances, batched, with one readout
/// set per instance: the δ-hop contextual subgraph for nodes, the whole
/// graph for graphs.
struct InstanceBatch {
  GraphBatch batch;
  ReadoutPlan plan;
};

InstanceBatch make_instance_batch(const GraphCollection& c, TaskLevel level,
                                  std::span<const LabeledInstance> instances, std::size_t delta);

/// Prompted representations of a batch's instances, with the encoder frozen.
/// Single and linear modes encode the batch once at construction; layerwise
/// mode runs its prompted passes inside every expression.
class PromptedRepresentation {
 public:
  PromptedRepresentation(const InstanceBatch& batch, const EncoderParams& encoder,
                         PromptMode mode);

  /// Expression over the given prompt leaves (ordered as PromptState::tensors()).
  ag::Expr build(std::span<const ag::Expr> prompt_leaves) const;
  Tensor evaluate(const PromptState& ps) const;

 private:
  const InstanceBatch* batch_;
  PromptMode mode_;
  EncoderExprs encoder_;
  ag::Expr h_;  // frozen Hᴸ, single and linear modes only
};

Tensor task_representations(const GraphCollection& c, TaskLevel level,
                            std::span<const LabeledInstance> instances,
                            const EncoderParams& encoder, const PromptState& ps,
                            std::size_t delta = kDefaultDelta);

/// Mean support representation per class of task.classes. Rows of
/// support_reps follow task.support.
Tensor compute_prototypes(const FewShotTask& task, const Tensor& support_reps);
ag::Expr prototypes_expr(const FewShotTask& task, const ag::Expr& support_reps);

/// Position in `prototypes` of the most cosine-similar row; ties resolve to
/// the lowest position.
std::size_t nearest_prototype(const Tensor& rep, const Tensor& prototypes);
/// Label of the nearest prototype, prototype rows following task.classes.
int classify(const Tensor& rep, const Tensor& prototypes, std::span<const int> classes);

/// Σ_i [ln Σ_c exp(sim(s_i, p_c)/τ) − sim(s_i, p_{y_i})/τ] over the support.
ag::Expr prompt_loss_expr(const FewShotTask& task, const ag::Expr& support_reps,
                          const ag::Expr& prototypes, double tau);
double prompt_loss(const FewShotTask& task, const Tensor& support_reps, const Tensor& prototypes,
                   double tau);

struct TuneConfig {
  double tau = 0.5;
  std::size_t max_steps = 200;
  double tolerance = 1e-5;
  std::size_t patience = 10;
  AdamConfig adam{0.01, 0.9, 0.999, 1e-8};
  std::size_t delta = kDefaultDelta;
  // Parameters excluded from the update, by position in PromptState::tensors().
  std::vector<std::size_t> frozen;

  void validate() const;
};

struct TuneResult {
  PromptState state;
  std::vector<double> losses;  // loss before each update
  std::size_t steps = 0;       // updates applied
  double final_loss = 0.0;     // loss of the returned state
};

/// Algorithm: repeat {support representations, prototypes, loss, update
/// prompts} until the loss improves by less than `tolerance` for `patience`
/// consecutive steps or max_steps updates were made.
TuneResult tune_prompt(const GraphCollection& c, const FewShotTask& task,
                       const EncoderParams& encoder, PromptState initial, const TuneConfig& cfg);
TuneResult tune_prompt(const GraphCollection& c, const FewShotTask& task,
                       const EncoderParams& encoder, PromptMode mode, const TuneConfig& cfg);

/// Fraction of query instances classified correctly against prototypes of
/// the support representations.
double evaluate_task(const GraphCollection& c, const FewShotTask& task,
                     const EncoderParams& encoder, const PromptState& ps,
                     std::size_t delta = kDefaultDelta);

}  // namespace sgprompt
