#include "sgprompt/selfcheck.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <sstream>

#include "sgprompt/adam.hpp"
#include "sgprompt/contrastive.hpp"
#include "sgprompt/encoder.hpp"
#include "sgprompt/experiment.hpp"
#include "sgprompt/pretrain.hpp"
#include "sgprompt/prompt.hpp"
#include "sgprompt/rng.hpp"

namespace sgprompt {

SelfcheckSummary run_checks(const CheckRegistry& registry, std::ostream& out) {
  SelfcheckSummary summary;
  if (registry.empty()) {
    out << "FAIL registry: no checks registered\n";
    summary.failures.push_back("registry");
    return summary;
  }
  for (const NamedCheck& check : registry.checks()) {
    CheckOutcome outcome;
    try {
      outcome = check.run();
    } catch (const std::exception& e) {
      outcome = {false, std::string("threw: ") + e.what()};
    }
    out << (outcome.passed ? "PASS " : "FAIL ") << check.name;
    if (!outcome.detail.empty()) out << ": " << outcome.detail;
    out << "\n";
    if (outcome.passed) ++summary.passed;
    else summary.failures.push_back(check.name);
  }
  out << summary.passed << " passed, " << summary.failures.size() << " failed\n";
  return summary;
}

CheckOutcome gradient_check(const std::string& op, const ag::Expr& root, double tolerance,
                            double step) {
  const ag::GradCheckReport r = ag::finite_diff_report(root, step);
  std::ostringstream detail;
  detail << op << " max relative error " << r.max_rel_error << " over " << r.checked
         << " scalars";
  if (!(r.max_rel_error < tolerance)) {
    detail << " (worst " << r.worst_leaf << "[" << r.worst_index << "]: analytic " << r.analytic
           << ", numeric " << r.numeric << ")";
  }
  return {r.checked > 0 && r.max_rel_error < tolerance, detail.str()};
}

namespace {

Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, double lo = -1.0,
                     double hi = 1.0) {
  Tensor t(rows, cols);
  for (double& x : t.values()) x = rng.uniform_real(lo, hi);
  return t;
}

// Values bounded away from zero, so relu kinks stay outside the stencil.
Tensor away_from_zero(Rng& rng, std::size_t rows, std::size_t cols) {
  Tensor t(rows, cols);
  for (double& x : t.values()) {
    const double m = rng.uniform_real(0.1, 1.0);
    x = rng.uniform_index(2) ? m : -m;
  }
  return t;
}

ag::Expr project(const ag::Expr& e, Rng& rng) {
  return ag::sum(ag::mul(e, ag::constant(random_tensor(rng, e.rows(), e.cols()), "proj")));
}

std::shared_ptr<const ag::Index> index_of(std::vector<std::size_t> v) {
  return std::make_shared<const ag::Index>(std::move(v));
}

Graph random_graph(Rng& rng, std::size_t n, std::size_t dim, double p) {
  std::vector<Edge> edges;
  for (std::size_t u = 0; u < n; ++u) {
    for (std::size_t v = u + 1; v < n; ++v) {
      if (rng.uniform_real(0.0, 1.0) < p) edges.emplace_back(u, v);
    }
  }
  return Graph(n, std::move(edges), random_tensor(rng, n, dim));
}

CheckOutcome expect(bool ok, const std::string& what, double value) {
  std::ostringstream s;
  s << what << " = " << value;
  return {ok, s.str()};
}

}  // namespace

std::vector<std::pair<std::string, ag::Expr>> primitive_gradient_cases(std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::pair<std::string, ag::Expr>> cases;
  const auto param = [&](std::size_t r, std::size_t c, const char* name) {
    return ag::parameter(random_tensor(rng, r, c), name);
  };
  const ag::Expr a = param(4, 3, "a");
  const ag::Expr b = param(4, 3, "b");
  const ag::Expr m = param(3, 5, "m");
  const ag::Expr row = param(1, 3, "row");

  cases.emplace_back("matmul", project(ag::matmul(a, m), rng));
  cases.emplace_back("add", project(ag::add(a, b), rng));
  cases.emplace_back("sub", project(ag::sub(a, b), rng));
  cases.emplace_back("mul", project(ag::mul(a, b), rng));
  cases.emplace_back("add_row", project(ag::add_row(a, row), rng));
  cases.emplace_back("mul_row", project(ag::mul_row(a, row), rng));
  cases.emplace_back("relu", project(ag::relu(ag::parameter(away_from_zero(rng, 4, 3), "x")), rng));
  cases.emplace_back("gather_rows", project(ag::gather_rows(a, index_of({3, 0, 3, 1})), rng));
  cases.emplace_back("segment_sum", project(ag::segment_sum(a, index_of({1, 0, 1, 2}), 3), rng));
  {
    auto csr = std::make_shared<Csr>();
    csr->offsets = {0, 2, 3, 5, 6};
    csr->indices = {1, 2, 0, 0, 3, 2};
    cases.emplace_back("adjacency_sum", project(ag::adjacency_sum(a, csr), rng));
  }
  cases.emplace_back("row_norm", project(ag::row_norm(a), rng));
  cases.emplace_back("cosine_pairs",
                     project(ag::cosine_pairs(a, b, index_of({0, 1, 3, 3}), index_of({2, 1, 0, 3})),
                             rng));
  cases.emplace_back("cosine_rows", project(ag::cosine_rows(a, b), rng));
  cases.emplace_back("scale", project(ag::scale(a, -2.5), rng));
  cases.emplace_back("divide", project(ag::divide(a, 3.0), rng));
  cases.emplace_back("exp", project(ag::exp(a), rng));
  cases.emplace_back("log",
                     project(ag::log(ag::parameter(random_tensor(rng, 4, 3, 0.5, 2.0), "pos")), rng));
  cases.emplace_back("sum", ag::scale(ag::sum(a), 1.5));
  cases.emplace_back("mean", ag::scale(ag::mean(a), 1.5));
  cases.emplace_back("weighted_sum", project(ag::weighted_sum({a, b}, param(1, 2, "w")), rng));
  {
    // cos(u, v) / τ on 4-vectors.
    const ag::Expr u = param(1, 4, "u");
    const ag::Expr v = param(1, 4, "v");
    cases.emplace_back("cosine_over_tau", ag::scale(ag::sum(ag::cosine_rows(u, v)), 1.0 / 0.5));
  }
  return cases;
}

ag::Expr encoder_link_pred_case(std::uint64_t seed) {
  Rng rng(seed);
  // Resample until the graph admits a triplet (an edge and a non-edge).
  for (;;) {
    Graph g = random_graph(rng, 6, 3, 0.4);
    bool ok = false;
    for (std::size_t v = 0; v < g.num_nodes(); ++v) {
      ok = ok || (g.degree(v) >= 1 && g.degree(v) + 1 < g.num_nodes());
    }
    if (!ok) continue;
    const GraphCollection c("random6", {g});
    PretrainConfig cfg;
    cfg.kind = PretrainKind::LinkPred;
    cfg.layers = 2;
    cfg.hidden_dim = 4;
    cfg.triplets_per_graph = 8;
    cfg.seed = seed;
    const PretrainObjective objective(c, cfg);
    EncoderParams p = init_encoder(3, 4, 2, derive_seed(seed, "init"));
    // Non-zero biases so every parameter takes part.
    for (auto& layer : p.layers) {
      layer.b1 = random_tensor(rng, 1, 4, -0.1, 0.1);
      layer.b2 = random_tensor(rng, 1, 4, -0.1, 0.1);
    }
    return objective.expression(p);
  }
}

ag::Expr random_expression(std::uint64_t seed, std::size_t depth, std::size_t max_dim) {
  Rng rng(seed);
  const auto dim = [&] { return 1 + rng.uniform_index(max_dim); };
  std::size_t counter = 0;
  std::function<ag::Expr(std::size_t, std::size_t, std::size_t)> build =
      [&](std::size_t d, std::size_t r, std::size_t c) -> ag::Expr {
    if (d == 0) {
      return ag::parameter(random_tensor(rng, r, c), "leaf" + std::to_string(counter++));
    }
    switch (rng.uniform_index(8)) {
      case 0: return ag::add(build(d - 1, r, c), build(d - 1, r, c));
      case 1: return ag::sub(build(d - 1, r, c), build(d - 1, r, c));
      case 2: return ag::mul(build(d - 1, r, c), build(d - 1, r, c));
      case 3: {
        const std::size_t k = dim();
        return ag::divide(ag::matmul(build(d - 1, r, k), build(d - 1, k, c)),
                          static_cast<double>(k));
      }
      case 4: return ag::mul_row(build(d - 1, r, c), build(d - 1, 1, c));
      case 5: return ag::add_row(build(d - 1, r, c), build(d - 1, 1, c));
      case 6: return ag::exp(ag::scale(build(d - 1, r, c), 0.25));
      default: return ag::relu(ag::add(build(d - 1, r, c), ag::constant(Tensor(r, c, 0.05))));
    }
  };
  const std::size_t r = dim();
  const std::size_t c = dim();
  return project(build(depth, r, c), rng);
}

CheckRegistry default_checks() {
  CheckRegistry reg;
  for (const auto& [name, expr] : primitive_gradient_cases(11)) {
    reg.add("grad/" + name, [name = name, expr = expr] { return gradient_check(name, expr); });
  }
  reg.add("grad/encoder_link_pred", [] {
    return gradient_check("encoder_link_pred", encoder_link_pred_case(5));
  });
  reg.add("grad/random_expressions", [] {
    for (std::uint64_t s = 0; s < 20; ++s) {
      const ag::Expr e = random_expression(100 + s, 1 + s % 4, 8);
      CheckOutcome o = gradient_check("random_expression#" + std::to_string(s), e);
      if (!o.passed) return o;
    }
    return CheckOutcome{true, "20 expressions"};
  });

  reg.add("identity/single_prompt_ones", [] {
    Rng rng(21);
    const Graph g = random_graph(rng, 8, 3, 0.3);
    const EncoderParams p = init_encoder(3, 6, 3, 1);
    const Tensor h = encode(g, p);
    const Subgraph s = contextual_subgraph(g, 2, 1);
    const double d = max_abs_diff(prompted_readout(h, s, Tensor(1, 6, 1.0)), readout(h, s));
    return expect(d < 1e-12, "max |delta|", d);
  });
  reg.add("identity/layer_prompt_ones", [] {
    Rng rng(22);
    const Graph g = random_graph(rng, 8, 3, 0.3);
    const EncoderParams p = init_encoder(3, 6, 3, 2);
    const Tensor base = encode(g, p);
    for (std::size_t l = 0; l <= 3; ++l) {
      const Tensor ones(1, l == 0 ? 3 : 6, 1.0);
      if (!(encode_with_layer_prompt(g, p, ones, l) == base)) {
        return CheckOutcome{false, "layer " + std::to_string(l) + " differs from encode"};
      }
    }
    return CheckOutcome{true, "bitwise equal at every layer"};
  });
  reg.add("identity/fused_convex_ones", [] {
    Rng rng(23);
    const Graph g = random_graph(rng, 8, 3, 0.3);
    const EncoderParams p = init_encoder(3, 6, 3, 3);
    std::vector<Tensor> prompts{Tensor(1, 3, 1.0)};
    for (int l = 0; l < 3; ++l) prompts.emplace_back(1, 6, 1.0);
    const double d =
        max_abs_diff(fused_prompt_embeddings(g, p, prompts, Tensor(1, 4, 0.25)), encode(g, p));
    return expect(d < 1e-10, "max |delta|", d);
  });

  reg.add("oracle/link_pred_equal_sims", [] {
    const Tensor reps = Tensor::from_rows({{1, 0}, {0, 1}, {0, -1}});
    const double loss = link_pred_loss(reps, {{0, 1, 2}}, 0.5);
    return expect(std::abs(loss - std::log(2.0)) < 1e-12, "loss", loss);
  });
  reg.add("oracle/link_pred_closed_form", [] {
    const Tensor reps = Tensor::from_rows({{1, 0}, {2, 0}, {-1, 0}});
    const double loss = link_pred_loss(reps, {{0, 1, 2}}, 1.0);
    return expect(std::abs(loss - std::log1p(std::exp(-2.0))) < 1e-10, "loss", loss);
  });
  reg.add("oracle/contrastive_pos_equals_neg", [] {
    Rng rng(24);
    const Tensor reps = random_tensor(rng, 5, 4);
    const double loss = generalized_contrastive_loss(reps, {{0, {1, 2}, {1, 2}}, {3, {4}, {4}}}, 0.5);
    return expect(std::abs(loss) < 1e-12, "loss", loss);
  });
  reg.add("oracle/prompt_loss_uniform", [] {
    FewShotTask task;
    task.classes = {0, 1, 2};
    task.k = 1;
    task.support = {{0, 0}, {1, 1}, {2, 2}};
    const Tensor reps(3, 4, 1.0);
    const double loss = prompt_loss(task, reps, Tensor(3, 4, 1.0), 0.5);
    return expect(std::abs(loss - 3.0 * std::log(3.0)) < 1e-9, "loss", loss);
  });
  reg.add("oracle/classify_brute_force", [] {
    Rng rng(25);
    for (int trial = 0; trial < 100; ++trial) {
      const std::size_t classes = 1 + rng.uniform_index(5);
      const Tensor protos = random_tensor(rng, classes, 4);
      const Tensor x = random_tensor(rng, 1, 4);
      std::size_t best = 0;
      double best_sim = -std::numeric_limits<double>::infinity();
      for (std::size_t c = 0; c < classes; ++c) {
        double dot = 0, nx = 0, np = 0;
        for (std::size_t j = 0; j < 4; ++j) {
          dot += x[j] * protos(c, j);
          nx += x[j] * x[j];
          np += protos(c, j) * protos(c, j);
        }
        const double sim = dot / ((std::sqrt(nx) + 1e-12) * (std::sqrt(np) + 1e-12));
        if (sim > best_sim) {
          best_sim = sim;
          best = c;
        }
      }
      if (nearest_prototype(x, protos) != best) {
        return CheckOutcome{false, "disagreement at trial " + std::to_string(trial)};
      }
    }
    return CheckOutcome{true, "100 cases agree"};
  });
  reg.add("oracle/contextual_subgraph_path", [] {
    const Graph path(5, {{0, 1}, {1, 2}, {2, 3}, {3, 4}}, Tensor(5, 1, 1.0));
    const Subgraph s = contextual_subgraph(path, 2, 1);
    const bool ok = s.nodes == std::vector<std::size_t>{1, 2, 3} &&
                    s.edges == std::vector<Edge>{{1, 2}, {2, 3}};
    return CheckOutcome{ok, ok ? "nodes {1,2,3}" : "unexpected subgraph"};
  });
  reg.add("oracle/adam_scalar", [] {
    std::vector<Tensor> params{Tensor::scalar(0.0)};
    const std::vector<Tensor> grads{Tensor::scalar(1.0)};
    AdamState st(AdamConfig{0.1, 0.9, 0.999, 1e-8}, params);
    adam_step(params, grads, st);
    adam_step(params, grads, st);
    double m = 0, v = 0, x = 0;
    for (int t = 1; t <= 2; ++t) {
      m = 0.9 * m + 0.1;
      v = 0.999 * v + 0.001;
      x -= 0.1 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    }
    const double d = std::abs(params[0].item() - x);
    return expect(d < 1e-15, "|delta|", d);
  });
  return reg;
}

}  // namespace sgprompt
