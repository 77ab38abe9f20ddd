#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgprompt/csr.hpp"
#include "sgprompt/tensor.hpp"

namespace sgprompt {

/// Undirected edge stored once with first < second.
using Edge = std::pair<std::size_t, std::size_t>;

/// Undirected, unweighted graph with a node feature matrix and optional
/// labels. Immutable after construction.
class Graph {
 public:
  Graph() = default;
  // Edges may be given in either orientation and may repeat; they are
  // canonicalised and deduplicated. Self-loops and out-of-range endpoints
  // are rejected.
  Graph(std::size_t num_nodes, std::vector<Edge> edges, Tensor features,
        std::optional<std::vector<int>> node_labels = std::nullopt,
        std::optional<int> graph_label = std::nullopt);

  std::size_t num_nodes() const { return num_nodes_; }
  std::size_t num_edges() const { return edges_.size(); }
  std::size_t feature_dim() const { return features_->cols(); }

  const std::vector<Edge>& edges() const { return edges_; }
  std::span<const std::size_t> neighbors(std::size_t v) const { return adjacency_->row(v); }
  std::size_t degree(std::size_t v) const { return adjacency_->row(v).size(); }
  bool has_edge(std::size_t u, std::size_t v) const;

  const Tensor& features() const { return *features_; }
  const std::shared_ptr<const Tensor>& shared_features() const { return features_; }
  const std::shared_ptr<const Csr>& adjacency() const { return adjacency_; }

  const std::optional<std::vector<int>>& node_labels() const { return node_labels_; }
  std::optional<int> graph_label() const { return graph_label_; }

  /// Same topology and labels, different features (same shape).
  Graph with_features(Tensor features) const;

  bool operator==(const Graph& o) const;

 private:
  std::size_t num_nodes_ = 0;
  std::vector<Edge> edges_;
  std::shared_ptr<const Csr> adjacency_ = std::make_shared<Csr>();
  std::shared_ptr<const Tensor> features_ = std::make_shared<Tensor>();
  std::optional<std::vector<int>> node_labels_;
  std::optional<int> graph_label_;
};

/// Global node addressing across a collection.
struct NodeRef {
  std::size_t graph = 0;
  std::size_t node = 0;
};

/// Ordered set of graphs sharing a feature width.
class GraphCollection {
 public:
  GraphCollection() = default;
  // Class counts are derived from the labels present: a count is set only
  // when every graph (or node) carries a label.
  GraphCollection(std::string name, std::vector<Graph> graphs);

  const std::string& name() const { return name_; }
  const std::vector<Graph>& graphs() const { return graphs_; }
  const Graph& graph(std::size_t i) const { return graphs_.at(i); }
  std::size_t size() const { return graphs_.size(); }
  std::size_t feature_dim() const { return feature_dim_; }
  std::optional<std::size_t> node_class_count() const { return node_class_count_; }
  std::optional<std::size_t> graph_class_count() const { return graph_class_count_; }

  std::size_t total_nodes() const { return offsets_.back(); }
  std::size_t total_edges() const;
  std::size_t global_id(std::size_t graph, std::size_t node) const;
  NodeRef locate(std::size_t global_node) const;

  bool operator==(const GraphCollection& o) const;

 private:
  std::string name_;
  std::vector<Graph> graphs_;
  std::size_t feature_dim_ = 0;
  std::optional<std::size_t> node_class_count_;
  std::optional<std::size_t> graph_class_count_;
  std::vector<std::size_t> offsets_{0};
};

/// Node subset of a parent graph with its induced edges.
struct Subgraph {
  const Graph* parent = nullptr;
  std::vector<std::size_t> nodes;  // sorted, non-empty
  std::vector<Edge> edges;         // induced, canonical, sorted
};

/// Shortest-path hop distance from v to every node, capped: nodes farther
/// than max_depth (or unreachable) get SIZE_MAX.
std::vector<std::size_t> hop_distances(const Graph& g, std::size_t v, std::size_t max_depth);

Subgraph induced_subgraph(const Graph& g, std::vector<std::size_t> nodes);

/// All nodes within `delta` hops of v and the edges among them.
Subgraph contextual_subgraph(const Graph& g, std::size_t v, std::size_t delta);

/// Node lists of contextual_subgraph(g, v, delta) for every v, without the
/// edge sets.
std::vector<std::vector<std::size_t>> contextual_node_sets(const Graph& g, std::size_t delta);

}  // namespace sgprompt
