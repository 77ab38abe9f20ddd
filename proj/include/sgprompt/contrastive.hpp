#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <vector>

#include "sgprompt/autograd.hpp"
#include "sgprompt/graph.hpp"
#include "sgprompt/rng.hpp"

namespace sgprompt {

/// (v, a, b) in graph `graph`: (v, a) is an edge, (v, b) is not.
struct Triplet {
  std::size_t graph = 0;
  std::size_t v = 0;
  std::size_t a = 0;
  std::size_t b = 0;

  bool operator==(const Triplet&) const = default;
};

struct TripletSet {
  std::vector<Triplet> triplets;
  std::size_t skipped_graphs = 0;  // graphs without an edge or a non-edge

  bool operator==(const TripletSet&) const = default;
};

/// per_graph triplets from each graph: v uniform over nodes that have both
/// a neighbour and a non-neighbour, a uniform over v's neighbours, b uniform
/// over v's non-neighbours.
TripletSet sample_triplets(const GraphCollection& c, std::size_t per_graph, std::uint64_t seed);

/// Row indices of (v, a, b) into a representation matrix.
struct TripletRows {
  std::shared_ptr<const ag::Index> v, a, b;
};

/// Σ_t [ln(exp(sim(v,a)/τ) + exp(sim(v,b)/τ)) − sim(v,a)/τ] with cosine sim,
/// i.e. the negative log-softmax of the positive over {a, b}.
ag::Expr link_pred_loss_expr(const ag::Expr& reps, const TripletRows& rows, double tau);
double link_pred_loss(const Tensor& reps, const std::vector<std::array<std::size_t, 3>>& vab,
                      double tau);

/// Target o with its positive and negative subgraphs, as row indices into a
/// representation matrix.
struct ContrastiveBatch {
  std::size_t target = 0;
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;

  bool operator==(const ContrastiveBatch&) const = default;
};

/// −Σ_o ln[Σ_pos exp(sim(a,o)/τ) / Σ_neg exp(sim(b,o)/τ)]. The denominator
/// sums over negatives only, so the value may be negative.
ag::Expr contrastive_loss_expr(const ag::Expr& reps, const std::vector<ContrastiveBatch>& batches,
                               double tau);
double generalized_contrastive_loss(const Tensor& reps,
                                    const std::vector<ContrastiveBatch>& batches, double tau);

/// Node subset of graphs[graph] whose sum readout is one subgraph embedding.
struct View {
  std::size_t graph = 0;
  std::vector<std::size_t> nodes;

  bool operator==(const View&) const = default;
};

/// Everything a contrastive objective needs: the graphs to encode together,
/// the views read out from their node embeddings, and the batches over view
/// indices.
struct ContrastiveProblem {
  std::vector<Graph> graphs;
  std::vector<View> views;
  std::vector<ContrastiveBatch> batches;
  std::size_t skipped = 0;

  bool operator==(const ContrastiveProblem&) const = default;
};

/// Target: whole graph. Positives: each node of G. Negatives: each node of
/// G with its feature rows permuted.
ContrastiveProblem make_dgi_batches(const GraphCollection& c, std::uint64_t seed);

/// Target: whole graph. Positives: each node of G. Negatives: nodes drawn
/// from other graphs (graph uniform, then node uniform).
ContrastiveProblem make_infograph_batches(const GraphCollection& c,
                                          std::size_t negatives_per_target, std::uint64_t seed);

/// Target: node-dropped view of G. Positive: edge-perturbed view of G.
/// Negatives: edge-perturbed views of every other graph.
ContrastiveProblem make_graphcl_batches(const GraphCollection& c, double ratio,
                                        std::uint64_t seed);

/// Per node v: target and positive are two distinct random-walk subgraphs of
/// v's r-egonet; negatives are random-walk subgraphs of its r'-egonet.
ContrastiveProblem make_gcc_batches(const GraphCollection& c, std::size_t r,
                                    std::size_t r_prime, std::size_t walk_len,
                                    std::size_t negatives, std::uint64_t seed);

// Augmentations, exposed for testing.
Graph drop_nodes(const Graph& g, double ratio, Rng& rng);
Graph perturb_edges(const Graph& g, double ratio, Rng& rng);
Graph permute_features(const Graph& g, Rng& rng);
/// Nodes visited by a simple random walk of walk_len nodes from `start`
/// that never leaves `allowed` (sorted). Sorted, deduplicated.
std::vector<std::size_t> random_walk_nodes(const Graph& g, std::size_t start,
                                           const std::vector<std::size_t>& allowed,
                                           std::size_t walk_len, Rng& rng);

}  // namespace sgprompt
