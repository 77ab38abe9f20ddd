#include "sgprompt/contrastive.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "sgprompt/errors.hpp"

namespace sgprompt {
namespace {

void check_tau(double tau) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ConfigError("temperature must be positive, got " + std::to_string(tau));
  }
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), std::size_t{0});
  return v;
}

}  // namespace

TripletSet sample_triplets(const GraphCollection& c, std::size_t per_graph, std::uint64_t seed) {
  TripletSet out;
  Rng rng(seed);
  for (std::size_t gi = 0; gi < c.size(); ++gi) {
    const Graph& g = c.graph(gi);
    const std::size_t n = g.num_nodes();
    std::vector<std::size_t> eligible;
    for (std::size_t v = 0; v < n; ++v) {
      if (g.degree(v) >= 1 && g.degree(v) + 1 < n) eligible.push_back(v);
    }
    if (eligible.empty()) {
      ++out.skipped_graphs;
      continue;
    }
    for (std::size_t t = 0; t < per_graph; ++t) {
      const std::size_t v = eligible[rng.uniform_index(eligible.size())];
      const auto nbrs = g.neighbors(v);
      const std::size_t a = nbrs[rng.uniform_index(nbrs.size())];
      // j-th node that is neither v nor a neighbour of v.
      std::size_t j = rng.uniform_index(n - 1 - nbrs.size());
      std::size_t b = 0;
      std::size_t next_nbr = 0;
      for (std::size_t u = 0; u < n; ++u) {
        if (next_nbr < nbrs.size() && nbrs[next_nbr] == u) {
          ++next_nbr;
          continue;
        }
        if (u == v) continue;
        if (j-- == 0) {
          b = u;
          break;
        }
      }
      out.triplets.push_back({gi, v, a, b});
    }
  }
  return out;
}

ag::Expr link_pred_loss_expr(const ag::Expr& reps, const TripletRows& rows, double tau) {
  check_tau(tau);
  if (rows.v->empty()) throw BatchError("link prediction loss: no triplets");
  const ag::Expr pos = ag::scale(ag::cosine_pairs(reps, reps, rows.v, rows.a), 1.0 / tau);
  const ag::Expr neg = ag::scale(ag::cosine_pairs(reps, reps, rows.v, rows.b), 1.0 / tau);
  const ag::Expr log_partition = ag::log(ag::add(ag::exp(pos), ag::exp(neg)));
  return ag::sum(ag::sub(log_partition, pos));
}

double link_pred_loss(const Tensor& reps, const std::vector<std::array<std::size_t, 3>>& vab,
                      double tau) {
  auto v = std::make_shared<ag::Index>();
  auto a = std::make_shared<ag::Index>();
  auto b = std::make_shared<ag::Index>();
  for (const auto& t : vab) {
    v->push_back(t[0]);
    a->push_back(t[1]);
    b->push_back(t[2]);
  }
  return ag::evaluate(link_pred_loss_expr(ag::constant(reps, "reps"), {v, a, b}, tau)).item();
}

ag::Expr contrastive_loss_expr(const ag::Expr& reps, const std::vector<ContrastiveBatch>& batches,
                               double tau) {
  check_tau(tau);
  if (batches.empty()) throw BatchError("contrastive loss: no batches");
  auto pos_target = std::make_shared<ag::Index>();
  auto pos_other = std::make_shared<ag::Index>();
  auto pos_segment = std::make_shared<ag::Index>();
  auto neg_target = std::make_shared<ag::Index>();
  auto neg_other = std::make_shared<ag::Index>();
  auto neg_segment = std::make_shared<ag::Index>();
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const auto& b = batches[i];
    if (b.positives.empty() || b.negatives.empty()) {
      throw BatchError("contrastive batch " + std::to_string(i) + " has " +
                       std::to_string(b.positives.size()) + " positives and " +
                       std::to_string(b.negatives.size()) + " negatives");
    }
    for (std::size_t p : b.positives) {
      pos_target->push_back(b.target);
      pos_other->push_back(p);
      pos_segment->push_back(i);
    }
    for (std::size_t q : b.negatives) {
      neg_target->push_back(b.target);
      neg_other->push_back(q);
      neg_segment->push_back(i);
    }
  }
  const auto log_mass = [&](const auto& other, const auto& target, const auto& segment) {
    const ag::Expr sims = ag::scale(ag::cosine_pairs(reps, reps, other, target), 1.0 / tau);
    return ag::log(ag::segment_sum(ag::exp(sims), segment, batches.size()));
  };
  const ag::Expr pos = log_mass(pos_other, pos_target, pos_segment);
  const ag::Expr neg = log_mass(neg_other, neg_target, neg_segment);
  return ag::sum(ag::sub(neg, pos));
}

double generalized_contrastive_loss(const Tensor& reps,
                                    const std::vector<ContrastiveBatch>& batches, double tau) {
  return ag::evaluate(contrastive_loss_expr(ag::constant(reps, "reps"), batches, tau)).item();
}

Graph drop_nodes(const Graph& g, double ratio, Rng& rng) {
  const std::size_t n = g.num_nodes();
  std::size_t drop = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n)));
  drop = std::min(drop, n - 1);
  std::vector<std::size_t> order = iota(n);
  rng.partial_shuffle(order, drop);
  std::vector<std::size_t> keep(order.begin() + static_cast<std::ptrdiff_t>(drop), order.end());
  std::sort(keep.begin(), keep.end());

  std::vector<std::size_t> new_id(n, n);
  for (std::size_t i = 0; i < keep.size(); ++i) new_id[keep[i]] = i;
  std::vector<Edge> edges;
  for (const auto& [u, v] : g.edges()) {
    if (new_id[u] < n && new_id[v] < n) edges.emplace_back(new_id[u], new_id[v]);
  }
  Tensor x(keep.size(), g.feature_dim());
  for (std::size_t i = 0; i < keep.size(); ++i) {
    const auto src = g.features().row_span(keep[i]);
    std::copy(src.begin(), src.end(), x.row_span(i).begin());
  }
  std::optional<std::vector<int>> labels;
  if (g.node_labels()) {
    labels.emplace();
    for (std::size_t v : keep) labels->push_back((*g.node_labels())[v]);
  }
  return Graph(keep.size(), std::move(edges), std::move(x), std::move(labels), g.graph_label());
}

Graph perturb_edges(const Graph& g, double ratio, Rng& rng) {
  const std::size_t n = g.num_nodes();
  const std::size_t m = g.num_edges();
  const std::size_t pairs = n * (n - 1) / 2;
  const std::size_t free_pairs = pairs - m;
  const auto count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(m)));

  std::vector<Edge> edges = g.edges();
  rng.partial_shuffle(edges, count);
  edges.erase(edges.begin(), edges.begin() + static_cast<std::ptrdiff_t>(count));

  const std::size_t add = std::min(count, free_pairs);
  std::vector<Edge> added;
  if (add > 0 && 2 * free_pairs >= pairs) {
    std::set<Edge> chosen;
    while (chosen.size() < add) {
      std::size_t u = rng.uniform_index(n);
      std::size_t v = rng.uniform_index(n);
      if (u == v) continue;
      if (u > v) std::swap(u, v);
      if (g.has_edge(u, v)) continue;
      if (chosen.insert({u, v}).second) added.emplace_back(u, v);
    }
  } else if (add > 0) {
    std::vector<Edge> candidates;
    for (std::size_t u = 0; u < n; ++u) {
      for (std::size_t v = u + 1; v < n; ++v) {
        if (!g.has_edge(u, v)) candidates.emplace_back(u, v);
      }
    }
    rng.partial_shuffle(candidates, add);
    added.assign(candidates.begin(), candidates.begin() + static_cast<std::ptrdiff_t>(add));
  }
  edges.insert(edges.end(), added.begin(), added.end());
  return Graph(n, std::move(edges), g.features(), g.node_labels(), g.graph_label());
}

Graph permute_features(const Graph& g, Rng& rng) {
  std::vector<std::size_t> perm = iota(g.num_nodes());
  rng.shuffle(perm);
  Tensor x(g.num_nodes(), g.feature_dim());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    const auto src = g.features().row_span(perm[i]);
    std::copy(src.begin(), src.end(), x.row_span(i).begin());
  }
  return g.with_features(std::move(x));
}

std::vector<std::size_t> random_walk_nodes(const Graph& g, std::size_t start,
                                           const std::vector<std::size_t>& allowed,
                                           std::size_t walk_len, Rng& rng) {
  if (walk_len == 0) throw ConfigError("random walk length must be positive");
  if (!std::binary_search(allowed.begin(), allowed.end(), start)) {
    throw IndexError("random walk start " + std::to_string(start) + " outside its egonet");
  }
  std::vector<std::size_t> visited{start};
  std::vector<std::size_t> options;
  std::size_t cur = start;
  for (std::size_t step = 1; step < walk_len; ++step) {
    options.clear();
    for (std::size_t u : g.neighbors(cur)) {
      if (std::binary_search(allowed.begin(), allowed.end(), u)) options.push_back(u);
    }
    if (options.empty()) break;
    cur = options[rng.uniform_index(options.size())];
    visited.push_back(cur);
  }
  std::sort(visited.begin(), visited.end());
  visited.erase(std::unique(visited.begin(), visited.end()), visited.end());
  return visited;
}

ContrastiveProblem make_dgi_batches(const GraphCollection& c, std::uint64_t seed) {
  ContrastiveProblem p;
  Rng rng(seed);
  const std::size_t count = c.size();
  for (const Graph& g : c.graphs()) p.graphs.push_back(g);
  for (const Graph& g : c.graphs()) p.graphs.push_back(permute_features(g, rng));
  for (std::size_t gi = 0; gi < count; ++gi) {
    const std::size_t n = c.graph(gi).num_nodes();
    ContrastiveBatch b;
    b.target = p.views.size();
    p.views.push_back({gi, iota(n)});
    for (std::size_t v = 0; v < n; ++v) {
      b.positives.push_back(p.views.size());
      p.views.push_back({gi, {v}});
    }
    for (std::size_t v = 0; v < n; ++v) {
      b.negatives.push_back(p.views.size());
      p.views.push_back({count + gi, {v}});
    }
    p.batches.push_back(std::move(b));
  }
  return p;
}

ContrastiveProblem make_infograph_batches(const GraphCollection& c,
                                          std::size_t negatives_per_target, std::uint64_t seed) {
  if (c.size() < 2) throw ConfigError("infograph needs at least two graphs for negatives");
  if (negatives_per_target == 0) throw ConfigError("negatives_per_target must be positive");
  ContrastiveProblem p;
  p.graphs = c.graphs();
  Rng rng(seed);
  // Singleton view of every node, shared by positives and negatives.
  std::vector<std::size_t> first_view(c.size());
  std::vector<std::size_t> whole_view(c.size());
  for (std::size_t gi = 0; gi < c.size(); ++gi) {
    whole_view[gi] = p.views.size();
    p.views.push_back({gi, iota(c.graph(gi).num_nodes())});
    first_view[gi] = p.views.size();
    for (std::size_t v = 0; v < c.graph(gi).num_nodes(); ++v) p.views.push_back({gi, {v}});
  }
  for (std::size_t gi = 0; gi < c.size(); ++gi) {
    ContrastiveBatch b;
    b.target = whole_view[gi];
    for (std::size_t v = 0; v < c.graph(gi).num_nodes(); ++v) b.positives.push_back(first_view[gi] + v);
    for (std::size_t i = 0; i < negatives_per_target; ++i) {
      std::size_t other = rng.uniform_index(c.size() - 1);
      if (other >= gi) ++other;
      const std::size_t v = rng.uniform_index(c.graph(other).num_nodes());
      b.negatives.push_back(first_view[other] + v);
    }
    p.batches.push_back(std::move(b));
  }
  return p;
}

ContrastiveProblem make_graphcl_batches(const GraphCollection& c, double ratio,
                                        std::uint64_t seed) {
  if (!(ratio >= 0.0 && ratio < 1.0)) {
    throw ConfigError("augmentation ratio must be in [0, 1), got " + std::to_string(ratio));
  }
  if (c.size() < 2) throw ConfigError("graphcl needs at least two graphs for negatives");
  ContrastiveProblem p;
  Rng rng(seed);
  const std::size_t count = c.size();
  for (const Graph& g : c.graphs()) p.graphs.push_back(drop_nodes(g, ratio, rng));
  for (const Graph& g : c.graphs()) p.graphs.push_back(perturb_edges(g, ratio, rng));
  for (std::size_t i = 0; i < p.graphs.size(); ++i) p.views.push_back({i, iota(p.graphs[i].num_nodes())});
  for (std::size_t gi = 0; gi < count; ++gi) {
    ContrastiveBatch b;
    b.target = gi;
    b.positives.push_back(count + gi);
    for (std::size_t o = 0; o < count; ++o) {
      if (o != gi) b.negatives.push_back(count + o);
    }
    p.batches.push_back(std::move(b));
  }
  return p;
}

ContrastiveProblem make_gcc_batches(const GraphCollection& c, std::size_t r,
                                    std::size_t r_prime, std::size_t walk_len,
                                    std::size_t negatives, std::uint64_t seed) {
  if (r == r_prime) throw ConfigError("gcc needs r != r'");
  if (negatives == 0) throw ConfigError("negatives_per_target must be positive");
  constexpr int kPositiveAttempts = 10;
  ContrastiveProblem p;
  p.graphs = c.graphs();
  Rng rng(seed);
  for (std::size_t gi = 0; gi < c.size(); ++gi) {
    const Graph& g = c.graph(gi);
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
      const auto ego = contextual_subgraph(g, v, r).nodes;
      if (ego.size() < 2) {
        ++p.skipped;
        continue;
      }
      const auto target = random_walk_nodes(g, v, ego, walk_len, rng);
      std::vector<std::size_t> positive;
      for (int attempt = 0; attempt < kPositiveAttempts && (positive.empty() || positive == target);
           ++attempt) {
        positive = random_walk_nodes(g, v, ego, walk_len, rng);
      }
      if (positive == target) {
        ++p.skipped;
        continue;
      }
      const auto far_ego = contextual_subgraph(g, v, r_prime).nodes;
      ContrastiveBatch b;
      b.target = p.views.size();
      p.views.push_back({gi, target});
      b.positives.push_back(p.views.size());
      p.views.push_back({gi, positive});
      for (std::size_t i = 0; i < negatives; ++i) {
        const std::size_t start = far_ego[rng.uniform_index(far_ego.size())];
        b.negatives.push_back(p.views.size());
        p.views.push_back({gi, random_walk_nodes(g, start, far_ego, walk_len, rng)});
      }
      p.batches.push_back(std::move(b));
    }
  }
  if (p.batches.empty()) throw BatchError("gcc: every node was skipped");
  return p;
}

}  // namespace sgprompt
