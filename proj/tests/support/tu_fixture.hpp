#pragma once

// Small TU-format datasets written to disk for tests.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

namespace fixture {

struct TuFixtureOptions {
  std::size_t graphs = 40;
  std::size_t graph_classes = 2;
  std::size_t node_classes = 3;
  std::size_t min_nodes = 8;
  std::size_t max_nodes = 16;
  std::size_t attribute_dim = 4;  // 0 writes no attribute file
  bool node_labels = true;
  std::uint64_t seed = 1;
};

// Writes <dir>/<name>_*.txt. Graph class c gets denser chords as c grows and
// node labels follow degree, so both levels carry learnable signal.
void write_tu_fixture(const std::filesystem::path& dir, const std::string& name,
                      const TuFixtureOptions& opts);

// Triangle (graph label 0) and a single edge (graph label 1), with node
// labels and no attributes.
void write_two_graph_fixture(const std::filesystem::path& dir, const std::string& name);

// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& tag);

}  // namespace fixture
