#include "sgprompt/tu_dataset.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <optional>
#include <string_view>
#include <vector>

#include "sgprompt/errors.hpp"

namespace sgprompt {
namespace {

struct LineFile {
  std::filesystem::path path;
  std::vector<std::string> lines;  // blank lines removed
  std::vector<std::size_t> line_numbers;
};

std::optional<LineFile> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) return std::nullopt;
  LineFile f;
  f.path = path;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    f.lines.push_back(std::move(line));
    f.line_numbers.push_back(number);
  }
  return f;
}

LineFile require_lines(const std::filesystem::path& path) {
  auto f = read_lines(path);
  if (!f) throw IngestError("missing dataset file: " + path.string());
  return std::move(*f);
}

std::string where(const LineFile& f, std::size_t row) {
  return f.path.filename().string() + ":" + std::to_string(f.line_numbers[row]);
}

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t");
  return s.substr(b, e - b + 1);
}

template <class T>
std::vector<T> split_numbers(const LineFile& f, std::size_t row) {
  std::vector<T> out;
  std::string_view rest = f.lines[row];
  while (true) {
    const auto comma = rest.find(',');
    const std::string_view field = trim(rest.substr(0, comma));
    T value{};
    const char* first = field.data();
    const char* last = field.data() + field.size();
    if (!field.empty() && *first == '+') ++first;
    const auto [ptr, ec] = std::from_chars(first, last, value);
    if (field.empty() || ec != std::errc() || ptr != last) {
      throw IntegrityError("malformed number '" + std::string(field) + "' at " + where(f, row));
    }
    out.push_back(value);
    if (comma == std::string_view::npos) break;
    rest = rest.substr(comma + 1);
  }
  return out;
}

long long single_integer(const LineFile& f, std::size_t row) {
  const auto v = split_numbers<long long>(f, row);
  if (v.size() != 1) throw IntegrityError("expected one integer at " + where(f, row));
  return v[0];
}

// Maps raw label values to 0..C-1 by sorted order.
std::vector<int> remap_labels(const std::vector<long long>& raw) {
  std::map<long long, int> code;
  for (long long v : raw) code.emplace(v, 0);
  int next = 0;
  for (auto& [value, c] : code) c = next++;
  std::vector<int> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = code[raw[i]];
  return out;
}

}  // namespace

GraphCollection parse_tu_dataset(const std::filesystem::path& dir, const std::string& name,
                                 TuParseStats* stats) {
  const auto file = [&](const char* suffix) { return dir / (name + suffix); };
  const LineFile adjacency = require_lines(file("_A.txt"));
  const LineFile indicator = require_lines(file("_graph_indicator.txt"));
  const LineFile graph_labels_file = require_lines(file("_graph_labels.txt"));
  const auto node_labels_file = read_lines(file("_node_labels.txt"));
  const auto attributes_file = read_lines(file("_node_attributes.txt"));

  const std::size_t num_nodes = indicator.lines.size();
  const std::size_t num_graphs = graph_labels_file.lines.size();

  std::vector<std::size_t> graph_of(num_nodes);
  for (std::size_t i = 0; i < num_nodes; ++i) {
    const long long g = single_integer(indicator, i);
    if (g < 1 || static_cast<std::size_t>(g) > num_graphs) {
      throw IntegrityError("graph id " + std::to_string(g) + " outside 1.." +
                           std::to_string(num_graphs) + " at " + where(indicator, i));
    }
    if (i > 0 && static_cast<std::size_t>(g) - 1 < graph_of[i - 1]) {
      throw IntegrityError("graph ids not non-decreasing at " + where(indicator, i));
    }
    graph_of[i] = static_cast<std::size_t>(g) - 1;
  }

  std::vector<std::size_t> first_node(num_graphs + 1, 0);
  for (std::size_t i = 0; i < num_nodes; ++i) ++first_node[graph_of[i] + 1];
  for (std::size_t g = 0; g < num_graphs; ++g) {
    if (first_node[g + 1] == 0) {
      throw IntegrityError("graph " + std::to_string(g + 1) + " has no nodes in " +
                           indicator.path.filename().string());
    }
    first_node[g + 1] += first_node[g];
  }

  std::vector<long long> raw_graph_labels(num_graphs);
  for (std::size_t g = 0; g < num_graphs; ++g) {
    raw_graph_labels[g] = single_integer(graph_labels_file, g);
  }
  const std::vector<int> graph_labels = remap_labels(raw_graph_labels);

  std::optional<std::vector<int>> node_labels;
  std::size_t node_classes = 0;
  if (node_labels_file) {
    if (node_labels_file->lines.size() != num_nodes) {
      const std::size_t row = std::min(node_labels_file->lines.size(), num_nodes);
      throw IntegrityError(
          node_labels_file->path.filename().string() + " has " +
          std::to_string(node_labels_file->lines.size()) + " rows, graph indicator has " +
          std::to_string(num_nodes) + "; first unmatched line " +
          std::to_string(row < node_labels_file->lines.size()
                             ? node_labels_file->line_numbers[row]
                             : indicator.line_numbers[row]));
    }
    std::vector<long long> raw(num_nodes);
    for (std::size_t i = 0; i < num_nodes; ++i) raw[i] = single_integer(*node_labels_file, i);
    node_labels = remap_labels(raw);
    for (int c : *node_labels) node_classes = std::max(node_classes, static_cast<std::size_t>(c) + 1);
  }

  Tensor features;
  if (attributes_file) {
    if (attributes_file->lines.size() != num_nodes) {
      const std::size_t row = std::min(attributes_file->lines.size(), num_nodes);
      throw IntegrityError(
          attributes_file->path.filename().string() + " has " +
          std::to_string(attributes_file->lines.size()) + " rows, graph indicator has " +
          std::to_string(num_nodes) + "; first unmatched line " +
          std::to_string(row < attributes_file->lines.size() ? attributes_file->line_numbers[row]
                                                             : indicator.line_numbers[row]));
    }
    std::size_t width = 0;
    std::vector<double> values;
    for (std::size_t i = 0; i < num_nodes; ++i) {
      const auto row = split_numbers<double>(*attributes_file, i);
      if (i == 0) width = row.size();
      if (row.size() != width) {
        throw IntegrityError("expected " + std::to_string(width) + " attributes, found " +
                             std::to_string(row.size()) + " at " + where(*attributes_file, i));
      }
      values.insert(values.end(), row.begin(), row.end());
    }
    features = Tensor(num_nodes, width, std::move(values));
  } else if (node_labels) {
    features = Tensor(num_nodes, node_classes, 0.0);
    for (std::size_t i = 0; i < num_nodes; ++i) features(i, static_cast<std::size_t>((*node_labels)[i])) = 1.0;
  } else {
    features = Tensor(num_nodes, 1, 1.0);
  }

  TuParseStats local;
  std::vector<std::vector<Edge>> edges(num_graphs);
  for (std::size_t r = 0; r < adjacency.lines.size(); ++r) {
    const auto pair = split_numbers<long long>(adjacency, r);
    if (pair.size() != 2) throw IntegrityError("expected 'i, j' at " + where(adjacency, r));
    for (long long v : pair) {
      if (v < 1 || static_cast<std::size_t>(v) > num_nodes) {
        throw IntegrityError("node id " + std::to_string(v) + " outside 1.." +
                             std::to_string(num_nodes) + " at " + where(adjacency, r));
      }
    }
    const std::size_t u = static_cast<std::size_t>(pair[0]) - 1;
    const std::size_t v = static_cast<std::size_t>(pair[1]) - 1;
    ++local.edge_rows;
    if (graph_of[u] != graph_of[v]) {
      throw IntegrityError("edge joins graphs " + std::to_string(graph_of[u] + 1) + " and " +
                           std::to_string(graph_of[v] + 1) + " at " + where(adjacency, r));
    }
    if (u == v) {
      ++local.self_loops_dropped;
      continue;
    }
    const std::size_t base = first_node[graph_of[u]];
    edges[graph_of[u]].emplace_back(u - base, v - base);
  }

  std::vector<Graph> graphs;
  graphs.reserve(num_graphs);
  for (std::size_t g = 0; g < num_graphs; ++g) {
    const std::size_t begin = first_node[g];
    const std::size_t n = first_node[g + 1] - begin;
    Tensor x(n, features.cols());
    std::copy_n(features.values().begin() + static_cast<std::ptrdiff_t>(begin * features.cols()),
                n * features.cols(), x.values().begin());
    std::optional<std::vector<int>> labels;
    if (node_labels) {
      labels.emplace(node_labels->begin() + static_cast<std::ptrdiff_t>(begin),
                     node_labels->begin() + static_cast<std::ptrdiff_t>(begin + n));
    }
    graphs.emplace_back(n, std::move(edges[g]), std::move(x), std::move(labels), graph_labels[g]);
  }
  if (stats) *stats = local;
  return GraphCollection(name, std::move(graphs));
}

}  // namespace sgprompt
