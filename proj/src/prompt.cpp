#include "sgprompt/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "sgprompt/errors.hpp"

namespace sgprompt {

std::string to_string(PromptMode mode) {
  switch (mode) {
    case PromptMode::Single: return "single";
    case PromptMode::Layerwise: return "layerwise";
    case PromptMode::Linear: return "linear";
  }
  return "?";
}

PromptMode parse_prompt_mode(const std::string& text) {
  for (auto m : {PromptMode::Single, PromptMode::Layerwise, PromptMode::Linear}) {
    if (to_string(m) == text) return m;
  }
  throw ConfigError("unknown prompt mode '" + text + "' (expected single, layerwise or linear)");
}

std::vector<Tensor*> PromptState::tensors() {
  switch (mode) {
    case PromptMode::Single: return {&single};
    case PromptMode::Linear: return {&matrix};
    case PromptMode::Layerwise: break;
  }
  std::vector<Tensor*> out;
  for (Tensor& p : layer_prompts) out.push_back(&p);
  out.push_back(&weights);
  return out;
}

std::vector<const Tensor*> PromptState::tensors() const {
  std::vector<const Tensor*> out;
  for (Tensor* t : const_cast<PromptState*>(this)->tensors()) out.push_back(t);
  return out;
}

std::size_t PromptState::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

PromptState init_prompt(PromptMode mode, const EncoderParams& encoder) {
  PromptState ps;
  ps.mode = mode;
  const std::size_t hidden = encoder.hidden_dim;
  const std::size_t layers = encoder.num_layers();
  switch (mode) {
    case PromptMode::Single: ps.single = Tensor(1, hidden, 1.0); break;
    case PromptMode::Linear:
      ps.matrix = Tensor(hidden, hidden);
      for (std::size_t i = 0; i < hidden; ++i) ps.matrix(i, i) = 1.0;
      break;
    case PromptMode::Layerwise:
      ps.layer_prompts.emplace_back(1, encoder.input_dim, 1.0);
      for (std::size_t l = 0; l < layers; ++l) ps.layer_prompts.emplace_back(1, hidden, 1.0);
      ps.weights = Tensor(1, layers + 1, 1.0 / static_cast<double>(layers + 1));
      break;
  }
  return ps;
}

InstanceBatch make_instance_batch(const GraphCollection& c, TaskLevel level,
                                  std::span<const LabeledInstance> instances, std::size_t delta) {
  if (instances.empty()) throw TaskError("no instances to represent");
  std::vector<NodeRef> refs;
  for (const auto& inst : instances) {
    if (level == TaskLevel::Graph) {
      if (inst.id >= c.size()) throw IndexError("graph instance " + std::to_string(inst.id) + " out of range");
      refs.push_back({inst.id, 0});
    } else {
      refs.push_back(c.locate(inst.id));
    }
  }
  std::vector<std::size_t> members;
  for (const auto& r : refs) members.push_back(r.graph);
  std::sort(members.begin(), members.end());
  members.erase(std::unique(members.begin(), members.end()), members.end());

  std::vector<const Graph*> graphs;
  for (std::size_t g : members) graphs.push_back(&c.graph(g));
  InstanceBatch out;
  out.batch = make_batch(graphs);

  std::vector<std::vector<std::size_t>> sets;
  for (const auto& r : refs) {
    const std::size_t member = static_cast<std::size_t>(
        std::lower_bound(members.begin(), members.end(), r.graph) - members.begin());
    const std::size_t base = out.batch.offsets[member];
    const Graph& g = c.graph(r.graph);
    std::vector<std::size_t> s;
    if (level == TaskLevel::Graph) {
      for (std::size_t v = 0; v < g.num_nodes(); ++v) s.push_back(base + v);
    } else {
      s = contextual_subgraph(g, r.node, delta).nodes;
      for (std::size_t& v : s) v += base;
    }
    sets.push_back(std::move(s));
  }
  out.plan = make_readout_plan(sets);
  return out;
}

PromptedRepresentation::PromptedRepresentation(const InstanceBatch& batch,
                                               const EncoderParams& encoder, PromptMode mode)
    : batch_(&batch), mode_(mode), encoder_(encoder_exprs(encoder, false)) {
  if (batch.batch.features->cols() != encoder.input_dim) {
    throw ShapeError("prompted representation: batch has " +
                     std::to_string(batch.batch.features->cols()) + " features, encoder expects " +
                     std::to_string(encoder.input_dim));
  }
  if (mode_ != PromptMode::Layerwise) {
    const ag::Expr x = ag::constant(batch.batch.features, "x");
    h_ = ag::constant(ag::evaluate(gin_forward(encoder_, x, batch.batch.adjacency).back()), "h");
  }
}

ag::Expr PromptedRepresentation::build(std::span<const ag::Expr> leaves) const {
  switch (mode_) {
    case PromptMode::Single:
      if (leaves.size() != 1) throw ContractError("single prompt expects one leaf");
      return readout_expr(ag::mul_row(h_, leaves[0]), batch_->plan);
    case PromptMode::Linear:
      if (leaves.size() != 1) throw ContractError("linear prompt expects one leaf");
      return readout_expr(ag::matmul(h_, leaves[0]), batch_->plan);
    case PromptMode::Layerwise: break;
  }
  const std::size_t passes = encoder_.layers.size() + 1;
  if (leaves.size() != passes + 1) {
    throw ContractError("layerwise prompt expects " + std::to_string(passes + 1) + " leaves");
  }
  const ag::Expr x = ag::constant(batch_->batch.features, "x");
  const ag::Expr fused = fused_prompt_forward(encoder_, x, batch_->batch.adjacency,
                                              leaves.first(passes), leaves[passes]);
  return readout_expr(fused, batch_->plan);
}

Tensor PromptedRepresentation::evaluate(const PromptState& ps) const {
  if (ps.mode != mode_) throw ContractError("prompt state mode does not match representation");
  std::vector<ag::Expr> leaves;
  for (const Tensor* t : ps.tensors()) leaves.push_back(ag::constant(*t, "prompt"));
  return ag::evaluate(build(leaves));
}

Tensor task_representations(const GraphCollection& c, TaskLevel level,
                            std::span<const LabeledInstance> instances,
                            const EncoderParams& encoder, const PromptState& ps,
                            std::size_t delta) {
  const InstanceBatch batch = make_instance_batch(c, level, instances, delta);
  return PromptedRepresentation(batch, encoder, ps.mode).evaluate(ps);
}

namespace {

// Position of each support row's label within task.classes; validates the
// k-per-class shape of the support set.
std::shared_ptr<ag::Index> class_positions(const FewShotTask& task, std::size_t rows) {
  if (task.classes.empty()) throw TaskError("task has no classes");
  if (rows != task.support.size()) {
    throw ShapeError("support representations have " + std::to_string(rows) + " rows for " +
                     std::to_string(task.support.size()) + " support instances");
  }
  std::map<int, std::size_t> position;
  for (std::size_t i = 0; i < task.classes.size(); ++i) position[task.classes[i]] = i;
  std::vector<std::size_t> count(task.classes.size(), 0);
  auto out = std::make_shared<ag::Index>();
  for (const auto& s : task.support) {
    auto it = position.find(s.label);
    if (it == position.end()) throw TaskError("support label " + std::to_string(s.label) + " not in task classes");
    out->push_back(it->second);
    ++count[it->second];
  }
  for (std::size_t i = 0; i < count.size(); ++i) {
    if (count[i] != task.k) {
      throw TaskError("class " + std::to_string(task.classes[i]) + " has " +
                      std::to_string(count[i]) + " support instances, expected " +
                      std::to_string(task.k));
    }
  }
  return out;
}

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ConfigError("temperature must be positive, got " + std::to_string(tau));
  }
}

}  // namespace

ag::Expr prototypes_expr(const FewShotTask& task, const ag::Expr& support_reps) {
  const auto seg = class_positions(task, support_reps.rows());
  return ag::divide(ag::segment_sum(support_reps, seg, task.classes.size()),
                    static_cast<double>(task.k));
}

Tensor compute_prototypes(const FewShotTask& task, const Tensor& support_reps) {
  return ag::evaluate(prototypes_expr(task, ag::constant(support_reps, "support")));
}

std::size_t nearest_prototype(const Tensor& rep, const Tensor& prototypes) {
  if (prototypes.rows() == 0) throw TaskError("classify: no prototypes");
  if (rep.rows() != 1) throw ShapeError("classify: representation must be one row");
  auto ia = std::make_shared<ag::Index>(prototypes.rows(), 0);
  auto ib = std::make_shared<ag::Index>(prototypes.rows());
  for (std::size_t c = 0; c < prototypes.rows(); ++c) (*ib)[c] = c;
  const Tensor sims = ag::evaluate(ag::cosine_pairs(ag::constant(rep, "rep"),
                                                    ag::constant(prototypes, "protos"), ia, ib));
  std::size_t best = 0;
  for (std::size_t c = 1; c < sims.rows(); ++c) {
    if (sims[c] > sims[best]) best = c;
  }
  return best;
}

int classify(const Tensor& rep, const Tensor& prototypes, std::span<const int> classes) {
  if (classes.size() != prototypes.rows()) {
    throw ShapeError("classify: " + std::to_string(classes.size()) + " classes for " +
                     std::to_string(prototypes.rows()) + " prototypes");
  }
  return classes[nearest_prototype(rep, prototypes)];
}

ag::Expr prompt_loss_expr(const FewShotTask& task, const ag::Expr& support_reps,
                          const ag::Expr& prototypes, double tau) {
  check_tau(tau);
  const auto positions = class_positions(task, support_reps.rows());
  const std::size_t n = task.support.size();
  const std::size_t classes = task.classes.size();
  if (prototypes.rows() != classes) {
    throw ShapeError("prompt loss: " + std::to_string(prototypes.rows()) + " prototypes for " +
                     std::to_string(classes) + " classes");
  }
  auto ia = std::make_shared<ag::Index>();
  auto ib = std::make_shared<ag::Index>();
  auto seg = std::make_shared<ag::Index>();
  auto correct = std::make_shared<ag::Index>();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < classes; ++c) {
      if (c == (*positions)[i]) correct->push_back(ia->size());
      ia->push_back(i);
      ib->push_back(c);
      seg->push_back(i);
    }
  }
  const ag::Expr logits =
      ag::scale(ag::cosine_pairs(support_reps, prototypes, ia, ib), 1.0 / tau);
  const ag::Expr log_partition = ag::log(ag::segment_sum(ag::exp(logits), seg, n));
  return ag::sum(ag::sub(log_partition, ag::gather_rows(logits, correct)));
}

double prompt_loss(const FewShotTask& task, const Tensor& support_reps, const Tensor& prototypes,
                   double tau) {
  return ag::evaluate(prompt_loss_expr(task, ag::constant(support_reps, "support"),
                                       ag::constant(prototypes, "protos"), tau))
      .item();
}

void TuneConfig::validate() const {
  check_tau(tau);
  if (!(tolerance >= 0.0)) throw ConfigError("tune: tolerance must be non-negative");
  if (patience == 0) throw ConfigError("tune: patience must be positive");
  if (!(adam.learning_rate > 0.0)) throw ConfigError("tune: learning rate must be positive");
}

TuneResult tune_prompt(const GraphCollection& c, const FewShotTask& task,
                       const EncoderParams& encoder, PromptState initial, const TuneConfig& cfg) {
  cfg.validate();
  const InstanceBatch support = make_instance_batch(c, task.level, task.support, cfg.delta);
  const PromptedRepresentation repr(support, encoder, initial.mode);

  TuneResult result;
  result.state = std::move(initial);
  const auto params = result.state.tensors();
  for (std::size_t f : cfg.frozen) {
    if (f >= params.size()) throw ConfigError("tune: frozen index " + std::to_string(f) + " out of range");
  }
  std::vector<std::size_t> trained;
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (std::find(cfg.frozen.begin(), cfg.frozen.end(), i) == cfg.frozen.end()) trained.push_back(i);
  }

  const auto loss_of = [&](bool with_grad, std::vector<Tensor>* grads) {
    std::vector<ag::Expr> leaves;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const bool train = with_grad && std::find(trained.begin(), trained.end(), i) != trained.end();
      leaves.push_back(train ? ag::parameter(*params[i], "prompt" + std::to_string(i))
                             : ag::constant(*params[i], "prompt" + std::to_string(i)));
    }
    const ag::Expr reps = repr.build(leaves);
    const ag::Expr loss = prompt_loss_expr(task, reps, prototypes_expr(task, reps), cfg.tau);
    if (!with_grad) return ag::evaluate(loss).item();
    ag::ValueAndGrad vg = ag::value_and_gradients(loss);
    for (std::size_t i : trained) grads->push_back(vg.grads[leaves[i]]);
    return vg.value;
  };

  std::vector<Tensor> values;
  for (std::size_t i : trained) values.push_back(*params[i]);
  AdamState state(cfg.adam, values);

  std::size_t stall = 0;
  try {
    while (result.steps < cfg.max_steps) {
      std::vector<Tensor> grads;
      const double loss = loss_of(true, &grads);
      if (!result.losses.empty()) {
        stall = result.losses.back() - loss < cfg.tolerance ? stall + 1 : 0;
      }
      result.losses.push_back(loss);
      if (stall >= cfg.patience) break;
      if (trained.empty()) break;
      adam_step(values, grads, state);
      for (std::size_t j = 0; j < trained.size(); ++j) *params[trained[j]] = values[j];
      ++result.steps;
    }
    result.final_loss = loss_of(false, nullptr);
  } catch (const NumericError& e) {
    std::string dump = "prompt tuning failed after " + std::to_string(result.steps) +
                       " steps (" + to_string(result.state.mode) + " mode";
    if (!result.losses.empty()) dump += ", last loss " + std::to_string(result.losses.back());
    dump += "): ";
    throw NumericError(dump + e.what());
  }
  return result;
}

TuneResult tune_prompt(const GraphCollection& c, const FewShotTask& task,
                       const EncoderParams& encoder, PromptMode mode, const TuneConfig& cfg) {
  return tune_prompt(c, task, encoder, init_prompt(mode, encoder), cfg);
}

double evaluate_task(const GraphCollection& c, const FewShotTask& task,
                     const EncoderParams& encoder, const PromptState& ps, std::size_t delta) {
  if (task.query.empty()) throw TaskError("evaluate: empty query set");
  std::vector<LabeledInstance> all = task.support;
  all.insert(all.end(), task.query.begin(), task.query.end());
  const Tensor reps = task_representations(c, task.level, all, encoder, ps, delta);

  const std::size_t n_support = task.support.size();
  Tensor support(n_support, reps.cols());
  std::copy_n(reps.values().begin(), n_support * reps.cols(), support.values().begin());
  const Tensor protos = compute_prototypes(task, support);

  std::size_t correct = 0;
  for (std::size_t q = 0; q < task.query.size(); ++q) {
    Tensor row(1, reps.cols());
    const auto src = reps.row_span(n_support + q);
    std::copy(src.begin(), src.end(), row.values().begin());
    if (classify(row, protos, task.classes) == task.query[q].label) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(task.query.size());
}

}  // namespace sgprompt
