#include "sgprompt/encoder.hpp"

#include <cmath>
#include <string>

#include "sgprompt/errors.hpp"
#include "sgprompt/rng.hpp"

namespace sgprompt {

std::size_t EncoderParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : tensors()) n += t->size();
  return n;
}

std::vector<Tensor*> EncoderParams::tensors() {
  std::vector<Tensor*> out;
  for (auto& l : layers) out.insert(out.end(), {&l.w1, &l.b1, &l.w2, &l.b2});
  return out;
}

std::vector<const Tensor*> EncoderParams::tensors() const {
  std::vector<const Tensor*> out;
  for (const auto& l : layers) out.insert(out.end(), {&l.w1, &l.b1, &l.w2, &l.b2});
  return out;
}

namespace {

Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  Tensor w(fan_in, fan_out);
  for (double& x : w.values()) x = rng.uniform_real(-a, a);
  return w;
}

void check_input(const Graph& g, const EncoderParams& p) {
  if (g.feature_dim() != p.input_dim) {
    throw ShapeError("encode: graph has " + std::to_string(g.feature_dim()) +
                     " features, encoder expects " + std::to_string(p.input_dim));
  }
}

}  // namespace

EncoderParams init_encoder(std::size_t input_dim, std::size_t hidden_dim, std::size_t layers,
                           std::uint64_t seed) {
  if (input_dim == 0 || hidden_dim == 0 || layers == 0) {
    throw ConfigError("encoder dimensions and layer count must be positive");
  }
  Rng rng(seed);
  EncoderParams p;
  p.input_dim = input_dim;
  p.hidden_dim = hidden_dim;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::size_t in = l == 0 ? input_dim : hidden_dim;
    GinLayer layer;
    layer.w1 = glorot(in, hidden_dim, rng);
    layer.b1 = Tensor(1, hidden_dim);
    layer.w2 = glorot(hidden_dim, hidden_dim, rng);
    layer.b2 = Tensor(1, hidden_dim);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

GraphBatch make_batch(std::span<const Graph* const> graphs) {
  if (graphs.empty()) throw ContractError("make_batch: no graphs");
  const std::size_t dim = graphs.front()->feature_dim();
  GraphBatch b;
  std::size_t nodes = 0;
  std::size_t entries = 0;
  for (const Graph* g : graphs) {
    if (g->feature_dim() != dim) throw ShapeError("make_batch: mixed feature widths");
    nodes += g->num_nodes();
    entries += 2 * g->num_edges();
  }
  Tensor x(nodes, dim);
  auto csr = std::make_shared<Csr>();
  csr->offsets.reserve(nodes + 1);
  csr->indices.reserve(entries);
  std::size_t row = 0;
  for (const Graph* g : graphs) {
    const std::size_t base = row;
    const auto src = g->features().values();
    std::copy(src.begin(), src.end(), x.values().begin() + static_cast<std::ptrdiff_t>(base * dim));
    for (std::size_t v = 0; v < g->num_nodes(); ++v) {
      for (std::size_t u : g->neighbors(v)) csr->indices.push_back(base + u);
      csr->offsets.push_back(csr->indices.size());
    }
    row += g->num_nodes();
    b.offsets.push_back(row);
  }
  b.features = std::make_shared<const Tensor>(std::move(x));
  b.adjacency = std::move(csr);
  return b;
}

GraphBatch make_batch(const Graph& g) {
  const Graph* one[] = {&g};
  return make_batch(one);
}

std::vector<ag::Expr> EncoderExprs::leaves() const {
  std::vector<ag::Expr> out;
  for (const auto& l : layers) out.insert(out.end(), {l.w1, l.b1, l.w2, l.b2});
  return out;
}

EncoderExprs encoder_exprs(const EncoderParams& p, bool trainable) {
  const auto leaf = [trainable](const Tensor& t, const std::string& name) {
    return trainable ? ag::parameter(t, name) : ag::constant(t, name);
  };
  EncoderExprs e;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    const std::string tag = "gin" + std::to_string(l + 1) + ".";
    e.layers.push_back({leaf(layer.w1, tag + "w1"), leaf(layer.b1, tag + "b1"),
                        leaf(layer.w2, tag + "w2"), leaf(layer.b2, tag + "b2")});
  }
  return e;
}

std::vector<ag::Expr> gin_forward(const EncoderExprs& enc, const ag::Expr& features,
                                  const std::shared_ptr<const Csr>& adjacency,
                                  const ag::Expr* prompt, std::size_t prompt_layer) {
  if (prompt && prompt_layer > enc.layers.size()) {
    throw IndexError("gin_forward: prompt layer " + std::to_string(prompt_layer) + " beyond " +
                     std::to_string(enc.layers.size()) + " layers");
  }
  std::vector<ag::Expr> hs;
  ag::Expr h = features;
  if (prompt && prompt_layer == 0) h = ag::mul_row(h, *prompt);
  hs.push_back(h);
  for (std::size_t l = 0; l < enc.layers.size(); ++l) {
    const auto& layer = enc.layers[l];
    const ag::Expr agg = ag::add(h, ag::adjacency_sum(h, adjacency));
    const ag::Expr z = ag::relu(ag::add_row(ag::matmul(agg, layer.w1), layer.b1));
    h = ag::relu(ag::add_row(ag::matmul(z, layer.w2), layer.b2));
    if (prompt && prompt_layer == l + 1) h = ag::mul_row(h, *prompt);
    hs.push_back(h);
  }
  return hs;
}

ag::Expr fused_prompt_forward(const EncoderExprs& enc, const ag::Expr& features,
                              const std::shared_ptr<const Csr>& adjacency,
                              std::span<const ag::Expr> prompts, const ag::Expr& weights) {
  const std::size_t passes = enc.layers.size() + 1;
  if (prompts.size() != passes) {
    throw ShapeError("fused_prompt_forward: " + std::to_string(prompts.size()) +
                     " prompts for " + std::to_string(passes) + " layers");
  }
  std::vector<ag::Expr> outputs;
  for (std::size_t l = 0; l < passes; ++l) {
    outputs.push_back(gin_forward(enc, features, adjacency, &prompts[l], l).back());
  }
  return ag::weighted_sum(outputs, weights);
}

ReadoutPlan make_readout_plan(const std::vector<std::vector<std::size_t>>& sets) {
  auto rows = std::make_shared<ag::Index>();
  auto segments = std::make_shared<ag::Index>();
  for (std::size_t s = 0; s < sets.size(); ++s) {
    for (std::size_t v : sets[s]) {
      rows->push_back(v);
      segments->push_back(s);
    }
  }
  return {std::move(rows), std::move(segments), sets.size()};
}

ag::Expr readout_expr(const ag::Expr& h, const ReadoutPlan& plan) {
  return ag::segment_sum(ag::gather_rows(h, plan.rows), plan.segments, plan.count);
}

namespace {

struct Frozen {
  EncoderExprs enc;
  ag::Expr x;
  std::shared_ptr<const Csr> adjacency;
};

Frozen frozen(const Graph& g, const EncoderParams& p) {
  check_input(g, p);
  return {encoder_exprs(p, false), ag::constant(g.shared_features(), "x"), g.adjacency()};
}

}  // namespace

Tensor encode(const Graph& g, const EncoderParams& p) {
  const Frozen f = frozen(g, p);
  return ag::evaluate(gin_forward(f.enc, f.x, f.adjacency).back());
}

std::vector<Tensor> encode_layers(const Graph& g, const EncoderParams& p) {
  const Frozen f = frozen(g, p);
  std::vector<Tensor> out;
  for (const auto& h : gin_forward(f.enc, f.x, f.adjacency)) out.push_back(ag::evaluate(h));
  return out;
}

Tensor encode_with_layer_prompt(const Graph& g, const EncoderParams& p, const Tensor& prompt,
                                std::size_t layer) {
  const Frozen f = frozen(g, p);
  const ag::Expr pe = ag::constant(prompt, "prompt");
  return ag::evaluate(gin_forward(f.enc, f.x, f.adjacency, &pe, layer).back());
}

Tensor fused_prompt_embeddings(const Graph& g, const EncoderParams& p,
                               std::span<const Tensor> prompts, const Tensor& weights) {
  const Frozen f = frozen(g, p);
  std::vector<ag::Expr> pe;
  for (const Tensor& t : prompts) pe.push_back(ag::constant(t, "prompt"));
  return ag::evaluate(
      fused_prompt_forward(f.enc, f.x, f.adjacency, pe, ag::constant(weights, "w")));
}

Tensor readout(const Tensor& h, const Subgraph& s) {
  const ReadoutPlan plan = make_readout_plan({s.nodes});
  return ag::evaluate(readout_expr(ag::constant(h, "h"), plan));
}

Tensor prompted_readout(const Tensor& h, const Subgraph& s, const Tensor& prompt) {
  const ReadoutPlan plan = make_readout_plan({s.nodes});
  const ag::Expr rows = ag::gather_rows(ag::constant(h, "h"), plan.rows);
  return ag::evaluate(
      ag::segment_sum(ag::mul_row(rows, ag::constant(prompt, "prompt")), plan.segments, 1));
}

}  // namespace sgprompt
