#pragma once

#include <cstddef>
#include <filesystem>
#include <string>

#include "sgprompt/graph.hpp"

namespace sgprompt {

struct TuParseStats {
  std::size_t edge_rows = 0;
  std::size_t self_loops_dropped = 0;
};

/// Reads <dir>/<name>_A.txt, _graph_indicator.txt and _graph_labels.txt,
/// plus the optional _node_labels.txt and _node_attributes.txt.
///
/// Features come from the attribute file when present, else a one-hot of
/// the node labels, else a constant 1.0 column. Graph and node labels are
/// remapped to 0..C-1 in increasing order of their raw values.
GraphCollection parse_tu_dataset(const std::filesystem::path& dir, const std::string& name,
                                 TuParseStats* stats = nullptr);

}  // namespace sgprompt
