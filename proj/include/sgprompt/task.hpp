#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "sgprompt/graph.hpp"

namespace sgprompt {

enum class TaskLevel { Node, Graph };

std::string to_string(TaskLevel level);
TaskLevel parse_task_level(const std::string& text);

struct LabeledInstance {
  // Global node id (see GraphCollection::global_id) for node tasks, graph
  // index for graph tasks.
  std::size_t id = 0;
  int label = 0;

  bool operator==(const LabeledInstance&) const = default;
};

struct FewShotTask {
  TaskLevel level = TaskLevel::Node;
  std::vector<int> classes;
  std::size_t k = 0;
  std::vector<LabeledInstance> support;  // grouped by class, in class order
  std::vector<LabeledInstance> query;

  bool operator==(const FewShotTask&) const = default;
};

/// Labeled instances of a level, in id order. Node instances are pooled
/// across every graph of the collection.
std::vector<LabeledInstance> labeled_instances(const GraphCollection& c, TaskLevel level);

/// Draws k support and up to query_per_class query instances per class,
/// without replacement. A class with fewer than k + 1 instances is an
/// error; otherwise the query share is capped by what remains after the
/// support draw.
FewShotTask sample_kshot_task(const GraphCollection& c, TaskLevel level, std::size_t k,
                              std::size_t query_per_class, std::uint64_t seed);

}  // namespace sgprompt
