#include "sgprompt/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "sgprompt/errors.hpp"

namespace sgprompt {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& value) {
  std::vector<std::string> out;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& expected) {
  throw ConfigError("config key '" + key + "': invalid value '" + value + "' (" + expected + ")");
}

std::uint64_t to_unsigned(const std::string& key, const std::string& value) {
  std::uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size()) {
    bad_value(key, value, "expected a non-negative integer");
  }
  return v;
}

std::size_t to_size(const std::string& key, const std::string& value) {
  return static_cast<std::size_t>(to_unsigned(key, value));
}

double to_double(const std::string& key, const std::string& value) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (value.empty() || ec != std::errc() || ptr != value.data() + value.size() || !std::isfinite(v)) {
    bad_value(key, value, "expected a finite number");
  }
  return v;
}

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T, class F>
std::string join(const std::vector<T>& items, F to_text) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i) out += ',';
    out += to_text(items[i]);
  }
  return out;
}

// task_level and k are parallel lists; they are combined after all keys are
// applied.
struct Pending {
  std::vector<TaskLevel> levels;
  std::vector<std::size_t> ks;
};

struct KeyHandler {
  ConfigKey key;
  std::function<void(ExperimentConfig&, Pending&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

const std::vector<KeyHandler>& handlers() {
  using C = ExperimentConfig;
  using S = const std::string&;
  using P = Pending;
  static const std::vector<KeyHandler> table = {
      {{"dataset", "TU dataset name (file prefix)"},
       [](C& c, P&, S v) { c.dataset = v; }, [](const C& c) { return c.dataset; }},
      {{"data_dir", "directory holding <dataset>/ or the dataset files"},
       [](C& c, P&, S v) { c.data_dir = v; }, [](const C& c) { return c.data_dir.string(); }},
      {{"out", "output directory"},
       [](C& c, P&, S v) { c.out_dir = v; }, [](const C& c) { return c.out_dir.string(); }},
      {{"seed", "master seed for every random stream"},
       [](C& c, P&, S v) { c.seed = to_unsigned("seed", v); c.pretrain.seed = c.seed; },
       [](const C& c) { return std::to_string(c.seed); }},
      {{"pretrain_kind", "link_pred, dgi, infograph, graphcl or gcc"},
       [](C& c, P&, S v) { c.pretrain.kind = parse_pretrain_kind(v); },
       [](const C& c) { return to_string(c.pretrain.kind); }},
      {{"tau", "temperature of every loss"},
       [](C& c, P&, S v) { c.pretrain.tau = to_double("tau", v); c.tune.tau = c.pretrain.tau; },
       [](const C& c) { return fmt_double(c.pretrain.tau); }},
      {{"epochs", "pre-training epochs"},
       [](C& c, P&, S v) { c.pretrain.epochs = to_size("epochs", v); },
       [](const C& c) { return std::to_string(c.pretrain.epochs); }},
      {{"pretrain_lr", "pre-training learning rate"},
       [](C& c, P&, S v) { c.pretrain.adam.learning_rate = to_double("pretrain_lr", v); },
       [](const C& c) { return fmt_double(c.pretrain.adam.learning_rate); }},
      {{"beta1", "Adam first-moment decay (pre-training and tuning)"},
       [](C& c, P&, S v) { c.pretrain.adam.beta1 = c.tune.adam.beta1 = to_double("beta1", v); },
       [](const C& c) { return fmt_double(c.pretrain.adam.beta1); }},
      {{"beta2", "Adam second-moment decay (pre-training and tuning)"},
       [](C& c, P&, S v) { c.pretrain.adam.beta2 = c.tune.adam.beta2 = to_double("beta2", v); },
       [](const C& c) { return fmt_double(c.pretrain.adam.beta2); }},
      {{"adam_epsilon", "Adam denominator guard (pre-training and tuning)"},
       [](C& c, P&, S v) { c.pretrain.adam.epsilon = c.tune.adam.epsilon = to_double("adam_epsilon", v); },
       [](const C& c) { return fmt_double(c.pretrain.adam.epsilon); }},
      {{"triplets_per_graph", "link prediction triplets sampled per graph"},
       [](C& c, P&, S v) { c.pretrain.triplets_per_graph = to_size("triplets_per_graph", v); },
       [](const C& c) { return std::to_string(c.pretrain.triplets_per_graph); }},
      {{"negatives_per_target", "negatives per target (infograph, gcc)"},
       [](C& c, P&, S v) { c.pretrain.negatives_per_target = to_size("negatives_per_target", v); },
       [](const C& c) { return std::to_string(c.pretrain.negatives_per_target); }},
      {{"aug_ratio", "graphcl node-drop and edge-perturbation ratio"},
       [](C& c, P&, S v) { c.pretrain.aug_ratio = to_double("aug_ratio", v); },
       [](const C& c) { return fmt_double(c.pretrain.aug_ratio); }},
      {{"gcc_r", "gcc egonet radius for target and positive"},
       [](C& c, P&, S v) { c.pretrain.gcc_r = to_size("gcc_r", v); },
       [](const C& c) { return std::to_string(c.pretrain.gcc_r); }},
      {{"gcc_r_prime", "gcc egonet radius for negatives"},
       [](C& c, P&, S v) { c.pretrain.gcc_r_prime = to_size("gcc_r_prime", v); },
       [](const C& c) { return std::to_string(c.pretrain.gcc_r_prime); }},
      {{"walk_len", "gcc random walk length in nodes"},
       [](C& c, P&, S v) { c.pretrain.walk_len = to_size("walk_len", v); },
       [](const C& c) { return std::to_string(c.pretrain.walk_len); }},
      {{"hidden_dim", "encoder hidden width"},
       [](C& c, P&, S v) { c.pretrain.hidden_dim = to_size("hidden_dim", v); },
       [](const C& c) { return std::to_string(c.pretrain.hidden_dim); }},
      {{"layers", "encoder GIN layers"},
       [](C& c, P&, S v) { c.pretrain.layers = to_size("layers", v); },
       [](const C& c) { return std::to_string(c.pretrain.layers); }},
      {{"delta", "hop radius of contextual subgraphs"},
       [](C& c, P&, S v) { c.pretrain.delta = c.tune.delta = to_size("delta", v); },
       [](const C& c) { return std::to_string(c.pretrain.delta); }},
      {{"prompt_mode", "comma list of single, layerwise, linear"},
       [](C& c, P&, S v) {
         c.prompt_modes.clear();
         for (const auto& m : split_list(v)) c.prompt_modes.push_back(parse_prompt_mode(m));
       },
       [](const C& c) { return join(c.prompt_modes, [](PromptMode m) { return to_string(m); }); }},
      {{"task_level", "comma list of node, graph (paired with k)"},
       [](C&, P& pending, S v) {
         pending.levels.clear();
         for (const auto& l : split_list(v)) pending.levels.push_back(parse_task_level(l));
       },
       [](const C& c) { return join(c.settings, [](const Setting& s) { return to_string(s.level); }); }},
      {{"k", "comma list of shot counts (paired with task_level)"},
       [](C&, P& pending, S v) {
         pending.ks.clear();
         for (const auto& k : split_list(v)) pending.ks.push_back(to_size("k", k));
       },
       [](const C& c) { return join(c.settings, [](const Setting& s) { return std::to_string(s.k); }); }},
      {{"num_tasks", "tasks per downstream setting"},
       [](C& c, P&, S v) { c.num_tasks = to_size("num_tasks", v); },
       [](const C& c) { return std::to_string(c.num_tasks); }},
      {{"query_per_class", "query instances per class (capped by availability)"},
       [](C& c, P&, S v) { c.query_per_class = to_size("query_per_class", v); },
       [](const C& c) { return std::to_string(c.query_per_class); }},
      {{"prompt_lr", "prompt tuning learning rate"},
       [](C& c, P&, S v) { c.tune.adam.learning_rate = to_double("prompt_lr", v); },
       [](const C& c) { return fmt_double(c.tune.adam.learning_rate); }},
      {{"max_steps", "prompt tuning step limit"},
       [](C& c, P&, S v) { c.tune.max_steps = to_size("max_steps", v); },
       [](const C& c) { return std::to_string(c.tune.max_steps); }},
      {{"tolerance", "loss improvement counted as progress"},
       [](C& c, P&, S v) { c.tune.tolerance = to_double("tolerance", v); },
       [](const C& c) { return fmt_double(c.tune.tolerance); }},
      {{"patience", "consecutive non-improving steps before stopping"},
       [](C& c, P&, S v) { c.tune.patience = to_size("patience", v); },
       [](const C& c) { return std::to_string(c.tune.patience); }},
  };
  return table;
}

}  // namespace

void ExperimentConfig::validate() const {
  if (dataset.empty()) throw ConfigError("dataset must be set");
  if (num_tasks == 0) throw ConfigError("num_tasks must be at least 1");
  if (prompt_modes.empty()) throw ConfigError("prompt_mode must name at least one mode");
  if (settings.empty()) throw ConfigError("task_level/k must name at least one setting");
  for (const auto& s : settings) {
    if (s.k == 0) throw ConfigError("k must be positive");
  }
  if (pretrain.seed != seed) throw ConfigError("pretrain seed differs from master seed");
  pretrain.validate();
  tune.validate();
}

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::istringstream in(text);
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(number) + ": empty key");
    if (!kv.emplace(key, value).second) {
      throw ConfigError(origin + ":" + std::to_string(number) + ": duplicate key '" + key + "'");
    }
  }
  return kv;
}

KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_key_values(buf.str(), path.string());
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> out;
    for (const auto& h : handlers()) out.push_back(h.key);
    return out;
  }();
  return keys;
}

ExperimentConfig apply_key_values(ExperimentConfig base, const KeyValues& kv) {
  std::vector<std::string> unknown;
  for (const auto& [key, value] : kv) {
    bool known = false;
    for (const auto& h : handlers()) known = known || h.key.name == key;
    if (!known) unknown.push_back(key);
  }
  if (!unknown.empty()) {
    std::string list;
    for (const auto& k : unknown) list += (list.empty() ? "" : ", ") + k;
    throw ConfigError("unknown config keys: " + list);
  }

  Pending p;
  for (const auto& s : base.settings) {
    p.levels.push_back(s.level);
    p.ks.push_back(s.k);
  }
  for (const auto& h : handlers()) {
    auto it = kv.find(h.key.name);
    if (it != kv.end()) h.set(base, p, it->second);
  }

  if (p.levels.size() != p.ks.size()) {
    if (p.ks.size() == 1) p.ks.assign(p.levels.size(), p.ks.front());
    else if (p.levels.size() == 1) p.levels.assign(p.ks.size(), p.levels.front());
    else {
      throw ConfigError("task_level has " + std::to_string(p.levels.size()) + " entries but k has " +
                        std::to_string(p.ks.size()));
    }
  }
  base.settings.clear();
  for (std::size_t i = 0; i < p.levels.size(); ++i) base.settings.push_back({p.levels[i], p.ks[i]});
  return base;
}

std::string describe(const ExperimentConfig& cfg) {
  std::string out;
  for (const auto& h : handlers()) out += h.key.name + "=" + h.get(cfg) + "\n";
  return out;
}

}  // namespace sgprompt
