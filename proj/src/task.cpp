#include "sgprompt/task.hpp"

#include "sgprompt/errors.hpp"
#include "sgprompt/rng.hpp"

namespace sgprompt {

std::string to_string(TaskLevel level) { return level == TaskLevel::Node ? "node" : "graph"; }

TaskLevel parse_task_level(const std::string& text) {
  if (text == "node") return TaskLevel::Node;
  if (text == "graph") return TaskLevel::Graph;
  throw ConfigError("unknown task level '" + text + "' (expected node or graph)");
}

std::vector<LabeledInstance> labeled_instances(const GraphCollection& c, TaskLevel level) {
  std::vector<LabeledInstance> out;
  if (level == TaskLevel::Graph) {
    if (!c.graph_class_count()) throw TaskError("collection " + c.name() + " has no graph labels");
    for (std::size_t g = 0; g < c.size(); ++g) out.push_back({g, *c.graph(g).graph_label()});
    return out;
  }
  if (!c.node_class_count()) throw TaskError("collection " + c.name() + " has no node labels");
  std::size_t id = 0;
  for (const Graph& g : c.graphs()) {
    for (int label : *g.node_labels()) out.push_back({id++, label});
  }
  return out;
}

FewShotTask sample_kshot_task(const GraphCollection& c, TaskLevel level, std::size_t k,
                              std::size_t query_per_class, std::uint64_t seed) {
  if (k == 0) throw ConfigError("k must be positive");
  const auto instances = labeled_instances(c, level);
  const std::size_t num_classes =
      level == TaskLevel::Graph ? *c.graph_class_count() : *c.node_class_count();

  std::vector<std::vector<std::size_t>> by_class(num_classes);
  for (const auto& inst : instances) by_class[static_cast<std::size_t>(inst.label)].push_back(inst.id);

  FewShotTask task;
  task.level = level;
  task.k = k;
  Rng rng(seed);
  for (std::size_t cls = 0; cls < num_classes; ++cls) {
    auto& pool = by_class[cls];
    if (pool.size() < k + 1) {
      throw SamplingError("class " + std::to_string(cls) + " has " + std::to_string(pool.size()) +
                          " " + to_string(level) + " instances, need at least " +
                          std::to_string(k + 1));
    }
    const std::size_t q = std::min(query_per_class, pool.size() - k);
    rng.partial_shuffle(pool, k + q);
    task.classes.push_back(static_cast<int>(cls));
    for (std::size_t i = 0; i < k; ++i) task.support.push_back({pool[i], static_cast<int>(cls)});
    for (std::size_t i = k; i < k + q; ++i) task.query.push_back({pool[i], static_cast<int>(cls)});
  }
  return task;
}

}  // namespace sgprompt
