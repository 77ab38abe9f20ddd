#include "sgprompt/graph.hpp"

#include <algorithm>
#include <deque>
#include <limits>
#include <set>

#include "sgprompt/errors.hpp"

namespace sgprompt {

Graph::Graph(std::size_t num_nodes, std::vector<Edge> edges, Tensor features,
             std::optional<std::vector<int>> node_labels, std::optional<int> graph_label)
    : num_nodes_(num_nodes),
      node_labels_(std::move(node_labels)),
      graph_label_(graph_label) {
  if (features.rows() != num_nodes) {
    throw ShapeError("graph: feature matrix has " + std::to_string(features.rows()) +
                     " rows for " + std::to_string(num_nodes) + " nodes");
  }
  if (node_labels_ && node_labels_->size() != num_nodes) {
    throw ShapeError("graph: " + std::to_string(node_labels_->size()) + " node labels for " +
                     std::to_string(num_nodes) + " nodes");
  }
  for (auto& [u, v] : edges) {
    if (u >= num_nodes || v >= num_nodes) {
      throw IndexError("graph: edge (" + std::to_string(u) + "," + std::to_string(v) +
                       ") outside " + std::to_string(num_nodes) + " nodes");
    }
    if (u == v) throw IntegrityError("graph: self-loop at node " + std::to_string(u));
    if (u > v) std::swap(u, v);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  edges_ = std::move(edges);

  std::vector<std::size_t> degree(num_nodes, 0);
  for (const auto& [u, v] : edges_) {
    ++degree[u];
    ++degree[v];
  }
  auto csr = std::make_shared<Csr>();
  csr->offsets.assign(num_nodes + 1, 0);
  for (std::size_t i = 0; i < num_nodes; ++i) csr->offsets[i + 1] = csr->offsets[i] + degree[i];
  csr->indices.resize(csr->offsets.back());
  std::vector<std::size_t> fill(csr->offsets.begin(), csr->offsets.end() - 1);
  for (const auto& [u, v] : edges_) {
    csr->indices[fill[u]++] = v;
    csr->indices[fill[v]++] = u;
  }
  for (std::size_t i = 0; i < num_nodes; ++i) {
    std::sort(csr->indices.begin() + static_cast<std::ptrdiff_t>(csr->offsets[i]),
              csr->indices.begin() + static_cast<std::ptrdiff_t>(csr->offsets[i + 1]));
  }
  adjacency_ = std::move(csr);
  features_ = std::make_shared<const Tensor>(std::move(features));
}

bool Graph::has_edge(std::size_t u, std::size_t v) const {
  if (u >= num_nodes_ || v >= num_nodes_) return false;
  auto row = neighbors(u);
  return std::binary_search(row.begin(), row.end(), v);
}

Graph Graph::with_features(Tensor features) const {
  if (!features.same_shape(*features_)) {
    throw ShapeError("graph: replacement features " + features.shape_string() + " vs " +
                     features_->shape_string());
  }
  Graph g = *this;
  g.features_ = std::make_shared<const Tensor>(std::move(features));
  return g;
}

bool Graph::operator==(const Graph& o) const {
  return num_nodes_ == o.num_nodes_ && edges_ == o.edges_ && *features_ == *o.features_ &&
         node_labels_ == o.node_labels_ && graph_label_ == o.graph_label_;
}

GraphCollection::GraphCollection(std::string name, std::vector<Graph> graphs)
    : name_(std::move(name)), graphs_(std::move(graphs)) {
  if (!graphs_.empty()) feature_dim_ = graphs_.front().feature_dim();
  bool all_graph_labels = !graphs_.empty();
  bool all_node_labels = !graphs_.empty();
  std::set<int> graph_classes;
  std::set<int> node_classes;
  for (std::size_t i = 0; i < graphs_.size(); ++i) {
    const Graph& g = graphs_[i];
    if (g.feature_dim() != feature_dim_) {
      throw ShapeError("collection " + name_ + ": graph " + std::to_string(i) + " has " +
                       std::to_string(g.feature_dim()) + " features, expected " +
                       std::to_string(feature_dim_));
    }
    offsets_.push_back(offsets_.back() + g.num_nodes());
    if (g.graph_label()) graph_classes.insert(*g.graph_label());
    else all_graph_labels = false;
    if (g.node_labels()) node_classes.insert(g.node_labels()->begin(), g.node_labels()->end());
    else all_node_labels = false;
  }
  auto contiguous = [](const std::set<int>& s) {
    return !s.empty() && *s.begin() == 0 && *s.rbegin() == static_cast<int>(s.size()) - 1;
  };
  if (all_graph_labels) {
    if (!contiguous(graph_classes)) {
      throw IntegrityError("collection " + name_ + ": graph labels are not 0..C-1");
    }
    graph_class_count_ = graph_classes.size();
  }
  if (all_node_labels && !node_classes.empty()) {
    if (!contiguous(node_classes)) {
      throw IntegrityError("collection " + name_ + ": node labels are not 0..C-1");
    }
    node_class_count_ = node_classes.size();
  }
}

std::size_t GraphCollection::total_edges() const {
  std::size_t n = 0;
  for (const auto& g : graphs_) n += g.num_edges();
  return n;
}

std::size_t GraphCollection::global_id(std::size_t graph, std::size_t node) const {
  if (graph >= graphs_.size() || node >= graphs_[graph].num_nodes()) {
    throw IndexError("collection: node " + std::to_string(node) + " of graph " +
                     std::to_string(graph) + " out of range");
  }
  return offsets_[graph] + node;
}

NodeRef GraphCollection::locate(std::size_t global_node) const {
  if (global_node >= total_nodes()) {
    throw IndexError("collection: global node " + std::to_string(global_node) + " out of range");
  }
  auto it = std::upper_bound(offsets_.begin(), offsets_.end(), global_node);
  const std::size_t graph = static_cast<std::size_t>(it - offsets_.begin()) - 1;
  return {graph, global_node - offsets_[graph]};
}

bool GraphCollection::operator==(const GraphCollection& o) const {
  return name_ == o.name_ && feature_dim_ == o.feature_dim_ && graphs_ == o.graphs_ &&
         node_class_count_ == o.node_class_count_ && graph_class_count_ == o.graph_class_count_;
}

std::vector<std::size_t> hop_distances(const Graph& g, std::size_t v, std::size_t max_depth) {
  if (v >= g.num_nodes()) {
    throw IndexError("hop_distances: node " + std::to_string(v) + " out of range " +
                     std::to_string(g.num_nodes()));
  }
  constexpr std::size_t kFar = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist(g.num_nodes(), kFar);
  std::deque<std::size_t> frontier{v};
  dist[v] = 0;
  while (!frontier.empty()) {
    const std::size_t u = frontier.front();
    frontier.pop_front();
    if (dist[u] == max_depth) continue;
    for (std::size_t w : g.neighbors(u)) {
      if (dist[w] != kFar) continue;
      dist[w] = dist[u] + 1;
      frontier.push_back(w);
    }
  }
  return dist;
}

Subgraph induced_subgraph(const Graph& g, std::vector<std::size_t> nodes) {
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  if (nodes.empty()) throw IndexError("induced_subgraph: empty node set");
  if (nodes.back() >= g.num_nodes()) {
    throw IndexError("induced_subgraph: node " + std::to_string(nodes.back()) + " out of range");
  }
  Subgraph s;
  s.parent = &g;
  for (std::size_t u : nodes) {
    for (std::size_t w : g.neighbors(u)) {
      if (w > u && std::binary_search(nodes.begin(), nodes.end(), w)) s.edges.emplace_back(u, w);
    }
  }
  s.nodes = std::move(nodes);
  return s;
}

Subgraph contextual_subgraph(const Graph& g, std::size_t v, std::size_t delta) {
  if (v >= g.num_nodes()) {
    throw IndexError("contextual_subgraph: node " + std::to_string(v) + " out of range " +
                     std::to_string(g.num_nodes()));
  }
  const auto dist = hop_distances(g, v, delta);
  std::vector<std::size_t> nodes;
  for (std::size_t u = 0; u < g.num_nodes(); ++u) {
    if (dist[u] <= delta) nodes.push_back(u);
  }
  return induced_subgraph(g, std::move(nodes));
}

std::vector<std::vector<std::size_t>> contextual_node_sets(const Graph& g, std::size_t delta) {
  std::vector<std::vector<std::size_t>> sets(g.num_nodes());
  if (delta == 1) {
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
      auto row = g.neighbors(v);
      auto& s = sets[v];
      s.assign(row.begin(), row.end());
      s.insert(std::lower_bound(s.begin(), s.end(), v), v);
    }
    return sets;
  }
  for (std::size_t v = 0; v < g.num_nodes(); ++v) sets[v] = contextual_subgraph(g, v, delta).nodes;
  return sets;
}

}  // namespace sgprompt
