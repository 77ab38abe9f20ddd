#include "sgprompt/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include "sgprompt/checkpoint.hpp"
#include "sgprompt/errors.hpp"
#include "sgprompt/rng.hpp"
#include "sgprompt/tu_dataset.hpp"

namespace sgprompt {

std::string format_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_stddev(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

GraphCollection load_dataset(const ExperimentConfig& cfg) {
  const auto nested = cfg.data_dir / cfg.dataset;
  const auto dir = std::filesystem::is_directory(nested) ? nested : cfg.data_dir;
  return parse_tu_dataset(dir, cfg.dataset);
}

namespace {

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write " + path.string());
  out << text;
  if (!out) throw IngestError("failed writing " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

// Pre-training settings that determine the checkpoint.
std::string pretrain_identity(const ExperimentConfig& cfg) {
  static const char* keys[] = {"dataset", "seed", "pretrain_kind", "tau", "epochs",
                               "pretrain_lr", "beta1", "beta2", "adam_epsilon",
                               "triplets_per_graph", "negatives_per_target", "aug_ratio",
                               "gcc_r", "gcc_r_prime", "walk_len", "hidden_dim", "layers",
                               "delta"};
  const KeyValues all = parse_key_values(describe(cfg));
  std::string id;
  for (const char* k : keys) id += std::string(k) + "=" + all.at(k) + "\n";
  return id;
}

std::string hex16(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string curve_csv(const std::vector<double>& curve) {
  std::string out = "epoch,loss\n";
  for (std::size_t e = 0; e < curve.size(); ++e) {
    out += std::to_string(e) + "," + format_number(curve[e]) + "\n";
  }
  return out;
}

}  // namespace

PretrainOutcome pretrain_cached(const ExperimentConfig& cfg, const GraphCollection& c,
                                std::ostream* log) {
  const std::string stem = cfg.dataset + "_" + to_string(cfg.pretrain.kind) + "_seed" +
                           std::to_string(cfg.seed) + "_" +
                           hex16(derive_seed(0, pretrain_identity(cfg)));
  const auto cache = cfg.out_dir / "checkpoints";
  std::filesystem::create_directories(cache);

  PretrainOutcome out;
  out.checkpoint = cache / (stem + ".ckpt");
  const auto cached_curve = cache / (stem + "_curve.csv");
  out.curve = cfg.out_dir / ("curve_" + cfg.dataset + "_" + to_string(cfg.pretrain.kind) + ".csv");

  std::string curve_text;
  if (std::filesystem::exists(out.checkpoint) && std::filesystem::exists(cached_curve)) {
    out.params = load_encoder(out.checkpoint);
    if (out.params.input_dim != c.feature_dim()) {
      throw IntegrityError("cached checkpoint " + out.checkpoint.string() + " expects " +
                           std::to_string(out.params.input_dim) + " features, dataset has " +
                           std::to_string(c.feature_dim()));
    }
    curve_text = read_file(cached_curve);
    out.cached = true;
    if (log) *log << "pretrain: reusing " << out.checkpoint.string() << "\n";
  } else {
    PretrainConfig pc = cfg.pretrain;
    pc.seed = cfg.seed;
    if (log) {
      *log << "pretrain: " << to_string(pc.kind) << " on " << c.name() << " (" << c.size()
           << " graphs), " << pc.epochs << " epochs\n";
    }
    PretrainResult result = pretrain(c, pc);
    if (log) {
      *log << "pretrain: loss " << format_number(result.curve.front()) << " -> "
           << format_number(result.curve.back());
      if (result.skipped) *log << " (" << result.skipped << " skipped)";
      *log << "\n";
    }
    out.params = std::move(result.params);
    curve_text = curve_csv(result.curve);
    save_encoder(out.checkpoint, out.params);
    write_file(cached_curve, curve_text);
  }
  write_file(out.curve, curve_text);
  return out;
}

RunReport run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  cfg.validate();
  const GraphCollection c = load_dataset(cfg);
  std::filesystem::create_directories(cfg.out_dir);

  RunReport report;
  report.pretrain = pretrain_cached(cfg, c, log);
  const EncoderParams& encoder = report.pretrain.params;

  std::string summary = "dataset,pretrain_kind,level,k,mode,num_tasks,mean_accuracy,std_accuracy\n";
  for (const Setting& setting : cfg.settings) {
    const std::string stream =
        "tasks/" + to_string(setting.level) + "/k" + std::to_string(setting.k);
    std::vector<FewShotTask> tasks;
    for (std::size_t t = 0; t < cfg.num_tasks; ++t) {
      tasks.push_back(sample_kshot_task(c, setting.level, setting.k, cfg.query_per_class,
                                        derive_seed(cfg.seed, stream, t)));
    }
    for (PromptMode mode : cfg.prompt_modes) {
      SettingReport sr;
      sr.setting = setting;
      sr.mode = mode;
      std::string csv = "task_id,mode,pretrain_kind,k,accuracy,steps,final_loss\n";
      std::vector<double> accs;
      for (std::size_t t = 0; t < tasks.size(); ++t) {
        const TuneResult tuned = tune_prompt(c, tasks[t], encoder, mode, cfg.tune);
        TaskRow row;
        row.task_id = t;
        row.mode = mode;
        row.kind = cfg.pretrain.kind;
        row.k = setting.k;
        row.accuracy = evaluate_task(c, tasks[t], encoder, tuned.state, cfg.tune.delta);
        row.steps = tuned.steps;
        row.final_loss = tuned.final_loss;
        accs.push_back(row.accuracy);
        csv += std::to_string(row.task_id) + "," + to_string(mode) + "," + to_string(row.kind) +
               "," + std::to_string(row.k) + "," + format_number(row.accuracy) + "," +
               std::to_string(row.steps) + "," + format_number(row.final_loss) + "\n";
        sr.rows.push_back(row);
      }
      sr.mean = mean_of(accs);
      sr.stddev = sample_stddev(accs);
      sr.csv = cfg.out_dir / ("tasks_" + to_string(setting.level) + "_k" +
                              std::to_string(setting.k) + "_" + to_string(mode) + ".csv");
      write_file(sr.csv, csv);
      summary += cfg.dataset + "," + to_string(cfg.pretrain.kind) + "," +
                 to_string(setting.level) + "," + std::to_string(setting.k) + "," +
                 to_string(mode) + "," + std::to_string(tasks.size()) + "," +
                 format_number(sr.mean) + "," + format_number(sr.stddev) + "\n";
      if (log) {
        *log << to_string(setting.level) << " k=" << setting.k << " " << to_string(mode)
             << ": accuracy " << format_number(sr.mean) << " +- " << format_number(sr.stddev)
             << " over " << tasks.size() << " tasks\n";
      }
      report.settings.push_back(std::move(sr));
    }
  }
  report.summary = cfg.out_dir / "summary.csv";
  write_file(report.summary, summary);
  return report;
}

}  // namespace sgprompt
