#include "sgprompt/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <utility>

#include "sgprompt/errors.hpp"
#include "sgprompt/rng.hpp"

namespace sgprompt {

std::string to_string(PretrainKind kind) {
  switch (kind) {
    case PretrainKind::LinkPred: return "link_pred";
    case PretrainKind::Dgi: return "dgi";
    case PretrainKind::InfoGraph: return "infograph";
    case PretrainKind::GraphCl: return "graphcl";
    case PretrainKind::Gcc: return "gcc";
  }
  return "?";
}

PretrainKind parse_pretrain_kind(const std::string& text) {
  for (auto k : {PretrainKind::LinkPred, PretrainKind::Dgi, PretrainKind::InfoGraph,
                 PretrainKind::GraphCl, PretrainKind::Gcc}) {
    if (to_string(k) == text) return k;
  }
  throw ConfigError("unknown pretrain kind '" + text +
                    "' (expected link_pred, dgi, infograph, graphcl or gcc)");
}

void PretrainConfig::validate() const {
  const auto fail = [](const std::string& what) { throw ConfigError("pretrain: " + what); };
  if (!(tau > 0.0) || !std::isfinite(tau)) fail("tau must be positive");
  if (triplets_per_graph == 0) fail("triplets_per_graph must be positive");
  if (negatives_per_target == 0) fail("negatives_per_target must be positive");
  if (!(aug_ratio >= 0.0 && aug_ratio < 1.0)) fail("aug_ratio must be in [0, 1)");
  if (gcc_r == gcc_r_prime) fail("gcc_r and gcc_r_prime must differ");
  if (walk_len == 0) fail("walk_len must be positive");
  if (hidden_dim == 0) fail("hidden_dim must be positive");
  if (layers == 0) fail("layers must be positive");
  if (!(adam.learning_rate > 0.0)) fail("learning rate must be positive");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0)) fail("beta1 must be in [0, 1)");
  if (!(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) fail("beta2 must be in [0, 1)");
  if (!(adam.epsilon > 0.0)) fail("adam epsilon must be positive");
}

namespace {

std::vector<const Graph*> pointers(const std::vector<Graph>& graphs) {
  std::vector<const Graph*> out;
  for (const Graph& g : graphs) out.push_back(&g);
  return out;
}

}  // namespace

PretrainObjective::PretrainObjective(const GraphCollection& c, const PretrainConfig& cfg)
    : cfg_(cfg) {
  cfg_.validate();
  if (c.size() == 0) throw ConfigError("pretrain: empty collection");

  if (cfg_.kind == PretrainKind::LinkPred) {
    const TripletSet ts =
        sample_triplets(c, cfg_.triplets_per_graph, derive_seed(cfg_.seed, "triplets"));
    if (ts.triplets.empty()) throw BatchError("pretrain: no graph admits a triplet");
    skipped_ = ts.skipped_graphs;
    batch_ = make_batch(pointers(c.graphs()));

    // Contextual subgraphs only for the nodes that appear in a triplet.
    std::vector<std::size_t> nodes;
    for (const auto& t : ts.triplets) {
      for (std::size_t v : {t.v, t.a, t.b}) nodes.push_back(c.global_id(t.graph, v));
    }
    std::sort(nodes.begin(), nodes.end());
    nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
    const auto slot = [&](std::size_t global) {
      return static_cast<std::size_t>(std::lower_bound(nodes.begin(), nodes.end(), global) -
                                      nodes.begin());
    };

    std::vector<std::vector<std::size_t>> sets;
    sets.reserve(nodes.size());
    for (std::size_t global : nodes) {
      const NodeRef ref = c.locate(global);
      auto s = contextual_subgraph(c.graph(ref.graph), ref.node, cfg_.delta).nodes;
      for (std::size_t& u : s) u += batch_.offsets[ref.graph];
      sets.push_back(std::move(s));
    }
    plan_ = make_readout_plan(sets);

    auto v = std::make_shared<ag::Index>();
    auto a = std::make_shared<ag::Index>();
    auto b = std::make_shared<ag::Index>();
    for (const auto& t : ts.triplets) {
      v->push_back(slot(c.global_id(t.graph, t.v)));
      a->push_back(slot(c.global_id(t.graph, t.a)));
      b->push_back(slot(c.global_id(t.graph, t.b)));
    }
    triplet_rows_ = {v, a, b};
    return;
  }

  const std::uint64_t seed = derive_seed(cfg_.seed, "augment");
  ContrastiveProblem problem;
  switch (cfg_.kind) {
    case PretrainKind::Dgi: problem = make_dgi_batches(c, seed); break;
    case PretrainKind::InfoGraph:
      problem = make_infograph_batches(c, cfg_.negatives_per_target, seed);
      break;
    case PretrainKind::GraphCl: problem = make_graphcl_batches(c, cfg_.aug_ratio, seed); break;
    case PretrainKind::Gcc:
      problem = make_gcc_batches(c, cfg_.gcc_r, cfg_.gcc_r_prime, cfg_.walk_len,
                                 cfg_.negatives_per_target, seed);
      break;
    case PretrainKind::LinkPred: break;
  }
  skipped_ = problem.skipped;
  batch_ = make_batch(pointers(problem.graphs));
  std::vector<std::vector<std::size_t>> sets;
  sets.reserve(problem.views.size());
  for (const View& view : problem.views) {
    std::vector<std::size_t> s = view.nodes;
    for (std::size_t& u : s) u += batch_.offsets[view.graph];
    sets.push_back(std::move(s));
  }
  plan_ = make_readout_plan(sets);
  batches_ = std::move(problem.batches);
}

ag::Expr PretrainObjective::build(const EncoderExprs& enc) const {
  const ag::Expr x = ag::constant(batch_.features, "x");
  const ag::Expr h = gin_forward(enc, x, batch_.adjacency).back();
  const ag::Expr reps = readout_expr(h, plan_);
  if (cfg_.kind == PretrainKind::LinkPred) return link_pred_loss_expr(reps, triplet_rows_, cfg_.tau);
  return contrastive_loss_expr(reps, batches_, cfg_.tau);
}

ag::Expr PretrainObjective::expression(const EncoderParams& p) const {
  return build(encoder_exprs(p, true));
}

double PretrainObjective::loss(const EncoderParams& p) const {
  return ag::evaluate(build(encoder_exprs(p, false))).item();
}

PretrainObjective::Evaluation PretrainObjective::loss_and_gradients(const EncoderParams& p) const {
  const EncoderExprs enc = encoder_exprs(p, true);
  ag::ValueAndGrad vg = ag::value_and_gradients(build(enc));
  Evaluation out;
  out.loss = vg.value;
  for (const ag::Expr& leaf : enc.leaves()) out.grads.push_back(vg.grads[leaf]);
  return out;
}

PretrainResult pretrain(const GraphCollection& c, const PretrainConfig& cfg) {
  cfg.validate();
  PretrainResult result;
  result.params = init_encoder(c.feature_dim(), cfg.hidden_dim, cfg.layers,
                               derive_seed(cfg.seed, "init"));
  const PretrainObjective objective(c, cfg);
  result.skipped = objective.skipped();

  std::vector<Tensor> params;
  for (const Tensor* t : std::as_const(result.params).tensors()) params.push_back(*t);
  AdamState state(cfg.adam, params);

  const auto checked = [](double loss, std::size_t epoch) {
    if (!std::isfinite(loss)) {
      std::ostringstream msg;
      msg << "pretrain: non-finite loss " << loss << " at epoch " << epoch;
      throw NumericError(msg.str());
    }
    return loss;
  };
  const auto store = [&] {
    const auto dst = result.params.tensors();
    for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = params[i];
  };

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    PretrainObjective::Evaluation ev;
    try {
      ev = objective.loss_and_gradients(result.params);
    } catch (const NumericError& e) {
      throw NumericError("pretrain epoch " + std::to_string(epoch) + ": " + e.what());
    }
    result.curve.push_back(checked(ev.loss, epoch));
    adam_step(params, ev.grads, state);
    store();
  }
  try {
    result.curve.push_back(checked(objective.loss(result.params), cfg.epochs));
  } catch (const NumericError& e) {
    throw NumericError("pretrain final evaluation: " + std::string(e.what()));
  }
  return result;
}

}  // namespace sgprompt
