#include <cmath>
#include <random>

#include "doctest.h"
#include "sgprompt/checkpoint.hpp"
#include "sgprompt/errors.hpp"
#include "sgprompt/prompt.hpp"
#include "sgprompt/tu_dataset.hpp"
#include "tu_fixture.hpp"

using namespace sgprompt;

namespace {

const GraphCollection& collection() {
  static const GraphCollection c = [] {
    const auto dir = fixture::temp_dir("prompt_fixture");
    fixture::TuFixtureOptions opts;
    opts.graphs = 24;
    fixture::write_tu_fixture(dir, "FIX", opts);
    return parse_tu_dataset(dir, "FIX");
  }();
  return c;
}

EncoderParams encoder_for(const GraphCollection& c, std::size_t hidden = 8, std::size_t layers = 3) {
  EncoderParams p = init_encoder(c.feature_dim(), hidden, layers, 17);
  for (auto& l : p.layers) l.b1 = Tensor(1, hidden, 0.01);
  return p;
}

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(r, c);
  for (double& x : t.values()) x = u(rng);
  return t;
}

Tensor row_of(const Tensor& t, std::size_t i) {
  Tensor out(1, t.cols());
  for (std::size_t j = 0; j < t.cols(); ++j) out(0, j) = t(i, j);
  return out;
}

// Exhaustive argmax of cosine similarity, first maximum wins.
std::size_t brute_nearest(const Tensor& x, const Tensor& protos) {
  std::size_t best = 0;
  double best_sim = -2.0;
  for (std::size_t c = 0; c < protos.rows(); ++c) {
    double dot = 0, nx = 0, np = 0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      dot += x(0, j) * protos(c, j);
      nx += x(0, j) * x(0, j);
      np += protos(c, j) * protos(c, j);
    }
    const double sim = dot / ((std::sqrt(nx) + 1e-12) * (std::sqrt(np) + 1e-12));
    if (sim > best_sim) {
      best_sim = sim;
      best = c;
    }
  }
  return best;
}

FewShotTask hand_task(TaskLevel level, std::vector<int> classes, std::size_t k,
                      std::vector<LabeledInstance> support, std::vector<LabeledInstance> query = {}) {
  FewShotTask t;
  t.level = level;
  t.classes = std::move(classes);
  t.k = k;
  t.support = std::move(support);
  t.query = std::move(query);
  return t;
}

}  // namespace

TEST_CASE("parameter census") {
  const auto& c = collection();
  const EncoderParams p = encoder_for(c, 8, 3);
  CHECK(init_prompt(PromptMode::Single, p).parameter_count() == 8);
  CHECK(init_prompt(PromptMode::Layerwise, p).parameter_count() == c.feature_dim() + 3 * 8 + 3 + 1);
  CHECK(init_prompt(PromptMode::Linear, p).parameter_count() == 64);

  const PromptState lw = init_prompt(PromptMode::Layerwise, p);
  CHECK(lw.layer_prompts.size() == 4);
  CHECK(lw.weights == Tensor(1, 4, 0.25));
  CHECK(lw.single.empty());
  CHECK(lw.matrix.empty());
}

TEST_CASE("representations at initialization") {
  const auto& c = collection();
  const EncoderParams p = encoder_for(c);
  const FewShotTask task = sample_kshot_task(c, TaskLevel::Node, 2, 3, 5);
  std::vector<LabeledInstance> all = task.support;
  all.insert(all.end(), task.query.begin(), task.query.end());

  // Plain readout computed directly from per-graph encodings.
  Tensor plain(all.size(), 8);
  for (std::size_t i = 0; i < all.size(); ++i) {
    const NodeRef r = c.locate(all[i].id);
    const Tensor h = encode(c.graph(r.graph), p);
    const Tensor s = readout(h, contextual_subgraph(c.graph(r.graph), r.node, 1));
    for (std::size_t j = 0; j < 8; ++j) plain(i, j) = s(0, j);
  }
  const Tensor single = task_representations(c, TaskLevel::Node, all, p, init_prompt(PromptMode::Single, p));
  const Tensor linear = task_representations(c, TaskLevel::Node, all, p, init_prompt(PromptMode::Linear, p));
  const Tensor layerwise =
      task_representations(c, TaskLevel::Node, all, p, init_prompt(PromptMode::Layerwise, p));
  CHECK(max_abs_diff(single, plain) < 1e-12);
  CHECK(max_abs_diff(linear, plain) < 1e-12);
  CHECK(max_abs_diff(layerwise, plain) < 1e-10);

  SUBCASE("graph level reads out the whole graph") {
    const std::vector<LabeledInstance> graphs{{3, 0}, {8, 1}};
    const Tensor reps = task_representations(c, TaskLevel::Graph, graphs, p, init_prompt(PromptMode::Single, p));
    for (std::size_t i = 0; i < 2; ++i) {
      const Tensor h = encode(c.graph(graphs[i].id), p);
      Tensor sum(1, 8);
      for (std::size_t v = 0; v < h.rows(); ++v)
        for (std::size_t j = 0; j < 8; ++j) sum(0, j) += h(v, j);
      CHECK(max_abs_diff(row_of(reps, i), sum) < 1e-10);
    }
  }
}

TEST_CASE("mode consistency") {
  const auto& c = collection();
  const EncoderParams p = encoder_for(c);
  const FewShotTask task = sample_kshot_task(c, TaskLevel::Graph, 3, 2, 11);
  std::mt19937_64 rng(1);
  const Tensor prompt = random_tensor(rng, 1, 8);

  PromptState single = init_prompt(PromptMode::Single, p);
  single.single = prompt;
  PromptState lw = init_prompt(PromptMode::Layerwise, p);
  lw.layer_prompts[3] = prompt;
  lw.weights = Tensor::row({0, 0, 0, 1});

  CHECK(task_representations(c, TaskLevel::Graph, task.support, p, lw) ==
        task_representations(c, TaskLevel::Graph, task.support, p, single));

  TuneConfig cfg;
  cfg.max_steps = 25;
  const TuneResult a = tune_prompt(c, task, p, single, cfg);
  cfg.frozen = {0, 1, 2, 4};
  const TuneResult b = tune_prompt(c, task, p, lw, cfg);
  CHECK(a.losses == b.losses);
  CHECK(a.steps == b.steps);
  CHECK(b.state.layer_prompts[3] == a.state.single);
  CHECK(b.state.weights == Tensor::row({0, 0, 0, 1}));
}

TEST_CASE("prototypes") {
  const FewShotTask k1 = hand_task(TaskLevel::Graph, {0, 1}, 1, {{0, 0}, {1, 1}});
  const Tensor reps1 = Tensor::from_rows({{1, 2}, {3, 4}});
  CHECK(compute_prototypes(k1, reps1) == reps1);

  const FewShotTask k2 = hand_task(TaskLevel::Graph, {0}, 2, {{0, 0}, {1, 0}});
  CHECK(compute_prototypes(k2, Tensor::from_rows({{0, 2}, {2, 0}})) == Tensor::row({1, 1}));

  std::mt19937_64 rng(2);
  std::vector<LabeledInstance> support;
  for (int cls = 0; cls < 3; ++cls)
    for (std::size_t i = 0; i < 5; ++i) support.push_back({support.size(), cls});
  const FewShotTask k5 = hand_task(TaskLevel::Graph, {0, 1, 2}, 5, support);
  const Tensor reps = random_tensor(rng, 15, 4);
  const Tensor protos = compute_prototypes(k5, reps);
  for (std::size_t cls = 0; cls < 3; ++cls) {
    for (std::size_t j = 0; j < 4; ++j) {
      double s = 0;
      for (std::size_t i = 0; i < 5; ++i) s += reps(cls * 5 + i, j);
      CHECK(std::abs(protos(cls, j) - s / 5) < 1e-14);
    }
  }

  const FewShotTask missing = hand_task(TaskLevel::Graph, {0, 1}, 1, {{0, 0}, {1, 0}});
  CHECK_THROWS_AS(compute_prototypes(missing, reps1), TaskError);
}

TEST_CASE("classification") {
  const std::vector<int> one{4};
  CHECK(classify(Tensor::row({1, -1}), Tensor::row({0.3, 0.2}), one) == 4);

  const Tensor protos = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 2}});
  const std::vector<int> labels{0, 1, 2};
  CHECK(classify(Tensor::row({0, 0, 2}), protos, labels) == 2);
  // Tie resolves to the lowest index.
  CHECK(nearest_prototype(Tensor::row({1, 1, 0}), protos) == 0);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor ps = random_tensor(rng, 3, 5);
    const Tensor x = random_tensor(rng, 1, 5);
    CHECK(nearest_prototype(x, ps) == brute_nearest(x, ps));
    Tensor scaled = x;
    const double factor = 0.01 + 100.0 * std::abs(random_tensor(rng, 1, 1)(0, 0));
    for (double& v : scaled.values()) v *= factor;
    CHECK(nearest_prototype(scaled, ps) == nearest_prototype(x, ps));
  }
}

TEST_CASE("prompt loss") {
  SUBCASE("uniform similarities") {
    const FewShotTask t = hand_task(TaskLevel::Graph, {0, 1, 2}, 1, {{0, 0}, {1, 1}, {2, 2}});
    const Tensor reps = Tensor::from_rows({{1, 1, 1}, {1, 1, 1}, {1, 1, 1}});
    const Tensor protos = Tensor::from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
    CHECK(std::abs(prompt_loss(t, reps, protos, 0.5) - 3 * std::log(3.0)) < 1e-9);
  }
  SUBCASE("closed form with one orthogonal class") {
    // Each support row matches its own prototype and is orthogonal to the other.
    const FewShotTask t = hand_task(TaskLevel::Graph, {0, 1}, 1, {{0, 0}, {1, 1}});
    const Tensor reps = Tensor::from_rows({{2, 0}, {0, 5}});
    const Tensor protos = Tensor::from_rows({{2, 0}, {0, 3}});
    const double expect = std::log(1.0 + std::exp(-1.0));
    CHECK(std::abs(prompt_loss(t, reps, protos, 1.0) - 2 * expect) < 1e-10);
    CHECK(expect == doctest::Approx(0.313262).epsilon(1e-6));
  }
  SUBCASE("monotone in the correct-class similarity") {
    const FewShotTask t = hand_task(TaskLevel::Graph, {0, 1}, 1, {{0, 0}, {1, 1}});
    const Tensor reps = Tensor::from_rows({{1, 0, 0}, {0, 0, 1}});
    double previous = INFINITY;
    for (double angle = 1.5; angle >= 0.0; angle -= 0.1) {
      // Class 0 rotates toward its instance; every other similarity stays fixed.
      const Tensor protos = Tensor::from_rows({{std::cos(angle), std::sin(angle), 0}, {0, 0.6, 0.8}});
      const double loss = prompt_loss(t, reps, protos, 0.5);
      CHECK(loss < previous);
      previous = loss;
    }
  }
  SUBCASE("temperature") {
    const FewShotTask t = hand_task(TaskLevel::Graph, {0}, 1, {{0, 0}});
    CHECK_THROWS_AS(prompt_loss(t, Tensor::row({1}), Tensor::row({1}), 0.0), ConfigError);
  }
}

TEST_CASE("tuning") {
  const auto& c = collection();
  const EncoderParams p = encoder_for(c);
  const FewShotTask task = sample_kshot_task(c, TaskLevel::Graph, 1, 3, 2);

  SUBCASE("zero steps returns the initialization") {
    TuneConfig cfg;
    cfg.max_steps = 0;
    for (PromptMode mode : {PromptMode::Single, PromptMode::Layerwise, PromptMode::Linear}) {
      const TuneResult r = tune_prompt(c, task, p, mode, cfg);
      CHECK(r.state == init_prompt(mode, p));
      CHECK(r.steps == 0);
    }
  }
  SUBCASE("loss decreases, encoder untouched, replay") {
    const std::string before = serialize_encoder(p);
    for (PromptMode mode : {PromptMode::Single, PromptMode::Layerwise, PromptMode::Linear}) {
      CAPTURE(to_string(mode));
      TuneConfig cfg;
      cfg.max_steps = 60;
      const TuneResult a = tune_prompt(c, task, p, mode, cfg);
      CHECK(a.final_loss < a.losses.front());
      CHECK(serialize_encoder(p) == before);
      const TuneResult b = tune_prompt(c, task, p, mode, cfg);
      CHECK(a.state == b.state);
      CHECK(a.losses == b.losses);
      const double acc = evaluate_task(c, task, p, a.state);
      CHECK(acc >= 0.0);
      CHECK(acc <= 1.0);
    }
  }
  SUBCASE("convergence stops early") {
    TuneConfig cfg;
    cfg.max_steps = 500;
    cfg.tolerance = 1e9;  // every step counts as a stall
    cfg.patience = 3;
    const TuneResult r = tune_prompt(c, task, p, PromptMode::Single, cfg);
    CHECK(r.steps == 3);
    CHECK(r.losses.size() == 4);
  }
  SUBCASE("prompt gradients match finite differences") {
    const InstanceBatch batch = make_instance_batch(c, task.level, task.support, 1);
    for (PromptMode mode : {PromptMode::Single, PromptMode::Layerwise, PromptMode::Linear}) {
      CAPTURE(to_string(mode));
      PromptState ps = init_prompt(mode, p);
      std::mt19937_64 rng(4);
      for (Tensor* t : ps.tensors())
        for (double& v : t->values()) v += 0.1 * random_tensor(rng, 1, 1)(0, 0);
      const PromptedRepresentation repr(batch, p, mode);
      std::vector<ag::Expr> leaves;
      for (const Tensor* t : ps.tensors()) leaves.push_back(ag::parameter(*t));
      const ag::Expr reps = repr.build(leaves);
      const ag::Expr loss = prompt_loss_expr(task, reps, prototypes_expr(task, reps), 0.5);
      CHECK(ag::finite_diff_check(loss, 1e-5) < 1e-4);
    }
  }
}

TEST_CASE("accuracy counting") {
  const auto& c = collection();
  const EncoderParams p = encoder_for(c);
  const PromptState ps = init_prompt(PromptMode::Single, p);
  // Graphs 0 and 1 as the two prototypes; a query equal to a support graph
  // is nearest to its own prototype.
  const std::vector<LabeledInstance> support{{0, 0}, {1, 1}};
  const auto make = [&](std::vector<LabeledInstance> query) {
    return hand_task(TaskLevel::Graph, {0, 1}, 1, support, std::move(query));
  };
  CHECK(evaluate_task(c, make({{0, 0}, {1, 1}}), p, ps) == 1.0);
  CHECK(evaluate_task(c, make({{0, 1}, {1, 0}}), p, ps) == 0.0);
  CHECK(evaluate_task(c, make({{0, 0}, {1, 1}, {0, 0}, {0, 1}}), p, ps) == 0.75);
  CHECK_THROWS_AS(evaluate_task(c, make({}), p, ps), TaskError);
}
