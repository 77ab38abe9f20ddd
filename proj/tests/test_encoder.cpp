#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "sgprompt/checkpoint.hpp"
#include "sgprompt/encoder.hpp"
#include "sgprompt/errors.hpp"
#include "tu_fixture.hpp"

using namespace sgprompt;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

// Scalar-loop GIN-0 forward, independent of the expression engine.
Mat reference_layer(const Graph& g, const Mat& h, const GinLayer& l) {
  const std::size_t n = h.size(), in = h[0].size(), hid = l.b1.cols();
  Mat agg = h;
  for (const auto& [u, v] : g.edges()) {
    for (std::size_t j = 0; j < in; ++j) {
      agg[u][j] += h[v][j];
      agg[v][j] += h[u][j];
    }
  }
  Mat out(n, std::vector<double>(hid));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> mid(hid);
    for (std::size_t c = 0; c < hid; ++c) {
      double s = l.b1(0, c);
      for (std::size_t j = 0; j < in; ++j) s += agg[i][j] * l.w1(j, c);
      mid[c] = std::max(0.0, s);
    }
    for (std::size_t c = 0; c < hid; ++c) {
      double s = l.b2(0, c);
      for (std::size_t j = 0; j < hid; ++j) s += mid[j] * l.w2(j, c);
      out[i][c] = std::max(0.0, s);
    }
  }
  return out;
}

Mat reference_forward(const Graph& g, const EncoderParams& p, const std::vector<Tensor>& prompts = {},
                      std::size_t prompt_layer = 0) {
  Mat h = to_mat(g.features());
  auto apply = [&] {
    if (prompts.empty()) return;
    for (auto& row : h)
      for (std::size_t j = 0; j < row.size(); ++j) row[j] *= prompts[0](0, j);
  };
  if (prompt_layer == 0) apply();
  for (std::size_t l = 0; l < p.num_layers(); ++l) {
    h = reference_layer(g, h, p.layers[l]);
    if (prompt_layer == l + 1) apply();
  }
  return h;
}

double max_diff(const Tensor& t, const Mat& m) {
  double worst = 0.0;
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) worst = std::max(worst, std::abs(t(i, j) - m[i][j]));
  return worst;
}

Tensor random_tensor(std::mt19937_64& rng, std::size_t r, std::size_t c, double lo = -1.0,
                     double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(r, c);
  for (double& x : t.values()) x = u(rng);
  return t;
}

Graph random_graph(std::mt19937_64& rng, std::size_t n, std::size_t feat) {
  std::vector<Edge> edges;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (rng() % 3 == 0) edges.push_back({i, j});
  return Graph(n, edges, random_tensor(rng, n, feat));
}

EncoderParams with_random_biases(EncoderParams p, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : p.layers) {
    l.b1 = random_tensor(rng, 1, l.b1.cols(), -0.1, 0.1);
    l.b2 = random_tensor(rng, 1, l.b2.cols(), -0.1, 0.1);
  }
  return p;
}

Subgraph subgraph_of(const Graph& g, std::vector<std::size_t> nodes) {
  return induced_subgraph(g, std::move(nodes));
}

}  // namespace

TEST_CASE("initialization") {
  const EncoderParams p = init_encoder(5, 8, 3, 0);
  CHECK(p.num_layers() == 3);
  CHECK(p.layers[0].w1.rows() == 5);
  CHECK(p.layers[1].w1.rows() == 8);
  CHECK(p.parameter_count() == (5 * 8 + 8 + 8 * 8 + 8) + 2 * (8 * 8 + 8 + 8 * 8 + 8));
  const double a = std::sqrt(6.0 / 13.0);
  for (double w : p.layers[0].w1.values()) CHECK(std::abs(w) <= a);
  CHECK(p.layers[0].b1 == Tensor(1, 8));
  CHECK(init_encoder(5, 8, 3, 0) == p);
  CHECK_FALSE(init_encoder(5, 8, 3, 1) == p);
}

TEST_CASE("encode examples") {
  SUBCASE("zero propagation") {
    const Graph g(1, {}, Tensor(1, 3));
    CHECK(encode(g, init_encoder(3, 4, 3, 0)) == Tensor(1, 4));
  }
  SUBCASE("symmetry of isolated twins") {
    const Graph g(2, {}, Tensor::from_rows({{0.3, -0.7}, {0.3, -0.7}}));
    const Tensor h = encode(g, with_random_biases(init_encoder(2, 6, 3, 2), 3));
    for (std::size_t j = 0; j < h.cols(); ++j) CHECK(h(0, j) == h(1, j));
  }
  SUBCASE("star graph against a scalar forward") {
    const Graph star(4, {{0, 1}, {0, 2}, {0, 3}},
                     Tensor::from_rows({{1.0, 0.5}, {-0.2, 0.3}, {0.7, -1.0}, {0.1, 0.9}}));
    const EncoderParams p = with_random_biases(init_encoder(2, 5, 3, 0), 4);
    const Tensor h = encode(star, p);
    CHECK(max_diff(h, reference_forward(star, p)) < 1e-12);
  }
  SUBCASE("width mismatch") {
    CHECK_THROWS_AS(encode(Graph(1, {}, Tensor(1, 3)), init_encoder(2, 4, 1, 0)), ShapeError);
  }
  SUBCASE("layer outputs") {
    const Graph g(3, {{0, 1}}, Tensor(3, 2, 0.5));
    const auto layers = encode_layers(g, init_encoder(2, 4, 3, 0));
    CHECK(layers.size() == 4);
    CHECK(layers[0] == g.features());
    CHECK(layers[3] == encode(g, init_encoder(2, 4, 3, 0)));
  }
}

TEST_CASE("readout") {
  const Tensor h = Tensor::from_rows({{1, 2}, {3, 4}, {5, 6}});
  const Graph g(3, {{0, 1}}, Tensor(3, 1));
  CHECK(readout(h, subgraph_of(g, {1})) == Tensor::row({3, 4}));
  CHECK(readout(h, subgraph_of(g, {0, 1})) == Tensor::row({4, 6}));
  CHECK_THROWS(readout(h, Subgraph{&g, {3}, {}}));

  std::mt19937_64 rng(1);
  const Tensor big = random_tensor(rng, 10, 4);
  const Graph g10(10, {}, Tensor(10, 1));
  std::vector<std::size_t> nodes{0, 2, 5, 7, 9};
  Subgraph s{&g10, nodes, {}};
  std::vector<std::size_t> shuffled = nodes;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  Subgraph t{&g10, shuffled, {}};
  CHECK(max_abs_diff(readout(big, s), readout(big, t)) < 1e-14);
}

TEST_CASE("prompted readout") {
  std::mt19937_64 rng(2);
  const Tensor h = random_tensor(rng, 6, 4);
  const Graph g(6, {}, Tensor(6, 1));
  const Subgraph s{&g, {0, 3, 4}, {}};
  CHECK(prompted_readout(h, s, Tensor(1, 4, 1.0)) == readout(h, s));
  CHECK(prompted_readout(h, s, Tensor(1, 4, 0.0)) == Tensor(1, 4, 0.0));
  const Tensor p = random_tensor(rng, 1, 4);
  const Tensor plain = readout(h, s);
  const Tensor prompted = prompted_readout(h, s, p);
  for (std::size_t j = 0; j < 4; ++j) CHECK(std::abs(prompted(0, j) - p(0, j) * plain(0, j)) < 1e-12);
  CHECK_THROWS_AS(prompted_readout(h, s, Tensor(1, 3, 1.0)), ShapeError);
}

TEST_CASE("layer prompts") {
  std::mt19937_64 rng(3);
  const Graph g = random_graph(rng, 7, 3);
  const EncoderParams p = with_random_biases(init_encoder(3, 5, 3, 1), 6);
  const Tensor plain = encode(g, p);

  for (std::size_t l = 0; l <= 3; ++l) {
    const Tensor ones(1, l == 0 ? 3 : 5, 1.0);
    CHECK(encode_with_layer_prompt(g, p, ones, l) == plain);
    const Tensor prompt = random_tensor(rng, 1, l == 0 ? 3 : 5, 0.2, 1.5);
    CHECK(max_diff(encode_with_layer_prompt(g, p, prompt, l), reference_forward(g, p, {prompt}, l)) <
          1e-12);
  }
  SUBCASE("last layer scales the output") {
    const Tensor prompt = random_tensor(rng, 1, 5);
    const Tensor h = encode_with_layer_prompt(g, p, prompt, 3);
    for (std::size_t i = 0; i < h.rows(); ++i)
      for (std::size_t j = 0; j < 5; ++j) CHECK(h(i, j) == plain(i, j) * prompt(0, j));
  }
  SUBCASE("input layer equals scaled features") {
    const Graph iso(3, {}, random_tensor(rng, 3, 3));
    const Tensor prompt = random_tensor(rng, 1, 3);
    Tensor scaled = iso.features();
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) scaled(i, j) *= prompt(0, j);
    CHECK(encode_with_layer_prompt(iso, p, prompt, 0) == encode(iso.with_features(scaled), p));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(encode_with_layer_prompt(g, p, Tensor(1, 5, 1.0), 0), ShapeError);
    CHECK_THROWS(encode_with_layer_prompt(g, p, Tensor(1, 5, 1.0), 4));
  }
}

TEST_CASE("fused prompt embeddings") {
  std::mt19937_64 rng(4);
  const Graph g = random_graph(rng, 6, 3);
  const EncoderParams p = with_random_biases(init_encoder(3, 5, 2, 2), 8);
  std::vector<Tensor> prompts;
  for (std::size_t l = 0; l <= 2; ++l) prompts.push_back(random_tensor(rng, 1, l == 0 ? 3 : 5));

  SUBCASE("one-hot weights select a pass bitwise") {
    for (std::size_t l = 0; l <= 2; ++l) {
      Tensor w(1, 3);
      w(0, l) = 1.0;
      CHECK(fused_prompt_embeddings(g, p, prompts, w) == encode_with_layer_prompt(g, p, prompts[l], l));
    }
  }
  SUBCASE("ones with convex weights reproduce encode") {
    const std::vector<Tensor> ones{Tensor(1, 3, 1.0), Tensor(1, 5, 1.0), Tensor(1, 5, 1.0)};
    CHECK(max_abs_diff(fused_prompt_embeddings(g, p, ones, Tensor::row({0.2, 0.5, 0.3})),
                       encode(g, p)) < 1e-10);
  }
  SUBCASE("three-node path, one layer, brute force") {
    const Graph path(3, {{0, 1}, {1, 2}}, random_tensor(rng, 3, 2));
    const EncoderParams q = with_random_biases(init_encoder(2, 4, 1, 9), 10);
    const std::vector<Tensor> ps{random_tensor(rng, 1, 2), random_tensor(rng, 1, 4)};
    const Tensor w = random_tensor(rng, 1, 2);
    const Mat a = reference_forward(path, q, {ps[0]}, 0);
    const Mat b = reference_forward(path, q, {ps[1]}, 1);
    Mat expect = a;
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 4; ++j) expect[i][j] = w(0, 0) * a[i][j] + w(0, 1) * b[i][j];
    CHECK(max_diff(fused_prompt_embeddings(path, q, ps, w), expect) < 1e-12);
  }
}

TEST_CASE("node relabeling equivariance") {
  std::mt19937_64 rng(11);
  const EncoderParams p = with_random_biases(init_encoder(3, 6, 3, 5), 12);
  for (int trial = 0; trial < 20; ++trial) {
    const Graph g = random_graph(rng, 4 + rng() % 8, 3);
    const std::size_t n = g.num_nodes();
    std::vector<std::size_t> perm(n);  // old -> new
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Edge> edges;
    for (const auto& [u, v] : g.edges()) edges.push_back({perm[u], perm[v]});
    Tensor feats(n, 3);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 3; ++j) feats(perm[i], j) = g.features()(i, j);
    const Graph h(n, edges, feats);

    const Tensor a = encode(g, p), b = encode(h, p);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(a(i, j) - b(perm[i], j)) < 1e-10);
    for (std::size_t v = 0; v < n; ++v) {
      const Tensor ra = readout(a, contextual_subgraph(g, v, 1));
      const Tensor rb = readout(b, contextual_subgraph(h, perm[v], 1));
      CHECK(max_abs_diff(ra, rb) < 1e-10);
    }
  }
}

TEST_CASE("batched encoding matches per-graph encoding") {
  std::mt19937_64 rng(13);
  const Graph a = random_graph(rng, 5, 2), b = random_graph(rng, 4, 2);
  const EncoderParams p = init_encoder(2, 4, 2, 0);
  const std::vector<const Graph*> members{&a, &b};
  const GraphBatch batch = make_batch(members);
  CHECK(batch.offsets == std::vector<std::size_t>{0, 5, 9});
  const auto enc = encoder_exprs(p, false);
  const Tensor h = ag::evaluate(gin_forward(enc, ag::constant(batch.features), batch.adjacency).back());
  const Tensor ha = encode(a, p), hb = encode(b, p);
  for (std::size_t j = 0; j < 4; ++j) {
    for (std::size_t i = 0; i < 5; ++i) CHECK(h(i, j) == ha(i, j));
    for (std::size_t i = 0; i < 4; ++i) CHECK(h(5 + i, j) == hb(i, j));
  }
}

TEST_CASE("checkpoint round trip") {
  const EncoderParams p = with_random_biases(init_encoder(7, 5, 3, 21), 22);
  const std::string text = serialize_encoder(p);
  CHECK(deserialize_encoder(text) == p);
  CHECK(serialize_encoder(deserialize_encoder(text)) == text);

  const auto dir = fixture::temp_dir("ckpt");
  save_encoder(dir / "e.ckpt", p);
  CHECK(load_encoder(dir / "e.ckpt") == p);

  CHECK_THROWS_AS(deserialize_encoder("not a checkpoint\n"), IntegrityError);
  std::string truncated = text.substr(0, text.size() / 2);
  CHECK_THROWS_AS(deserialize_encoder(truncated), IntegrityError);
}
