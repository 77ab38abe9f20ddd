#include "tu_fixture.hpp"

#include <unistd.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <set>
#include <utility>
#include <vector>

namespace fixture {

namespace {

std::ofstream open(const std::filesystem::path& dir, const std::string& name,
                   const std::string& suffix) {
  std::ofstream out(dir / (name + "_" + suffix + ".txt"));
  out.precision(17);
  return out;
}

}  // namespace

void write_tu_fixture(const std::filesystem::path& dir, const std::string& name,
                      const TuFixtureOptions& opts) {
  std::filesystem::create_directories(dir);
  std::mt19937_64 rng(opts.seed);
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng() % n); };

  auto a = open(dir, name, "A");
  auto indicator = open(dir, name, "graph_indicator");
  auto glabels = open(dir, name, "graph_labels");
  std::ofstream nlabels, attrs;
  if (opts.node_labels) nlabels = open(dir, name, "node_labels");
  if (opts.attribute_dim > 0) attrs = open(dir, name, "node_attributes");

  std::size_t base = 0;
  for (std::size_t g = 0; g < opts.graphs; ++g) {
    const std::size_t cls = g % opts.graph_classes;
    const std::size_t n = opts.min_nodes + pick(opts.max_nodes - opts.min_nodes + 1);
    std::set<std::pair<std::size_t, std::size_t>> edges;
    for (std::size_t i = 0; i + 1 < n; ++i) edges.insert({i, i + 1});
    const std::size_t chords = n * (cls + 1) / 2;
    for (std::size_t c = 0; c < chords; ++c) {
      std::size_t u = pick(n), v = pick(n);
      if (u == v) continue;
      edges.insert({std::min(u, v), std::max(u, v)});
    }
    std::vector<std::size_t> degree(n, 0);
    for (const auto& [u, v] : edges) {
      ++degree[u];
      ++degree[v];
      a << base + u + 1 << ", " << base + v + 1 << "\n";
      a << base + v + 1 << ", " << base + u + 1 << "\n";
    }
    for (std::size_t i = 0; i < n; ++i) {
      indicator << g + 1 << "\n";
      const std::size_t label = std::min(degree[i] / 2, opts.node_classes - 1);
      if (opts.node_labels) nlabels << label + 1 << "\n";
      if (opts.attribute_dim > 0) {
        for (std::size_t d = 0; d < opts.attribute_dim; ++d) {
          const double noise = static_cast<double>(rng() % 1000) / 5000.0;
          attrs << (d == label % opts.attribute_dim ? 1.0 : 0.0) + noise
                << (d + 1 < opts.attribute_dim ? ", " : "\n");
        }
      }
    }
    glabels << static_cast<int>(cls) * 2 - 1 << "\n";
    base += n;
  }
}

void write_two_graph_fixture(const std::filesystem::path& dir, const std::string& name) {
  std::filesystem::create_directories(dir);
  open(dir, name, "A") << "1, 2\n2, 1\n2, 3\n3, 2\n1, 3\n3, 1\n4, 5\n5, 4\n";
  open(dir, name, "graph_indicator") << "1\n1\n1\n2\n2\n";
  open(dir, name, "graph_labels") << "0\n1\n";
  open(dir, name, "node_labels") << "0\n1\n0\n1\n0\n";
}

std::filesystem::path temp_dir(const std::string& tag) {
  const auto dir = std::filesystem::temp_directory_path() /
                   ("sgprompt_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace fixture
