#pragma once

#include <cstddef>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "sgprompt/config.hpp"

namespace sgprompt {

/// Loads cfg.dataset from cfg.data_dir/<dataset>/ when that directory
/// exists, else from cfg.data_dir itself.
GraphCollection load_dataset(const ExperimentConfig& cfg);

struct PretrainOutcome {
  EncoderParams params;
  std::filesystem::path checkpoint;
  std::filesystem::path curve;
  bool cached = false;
};

/// Pre-trains once per (dataset, pre-training settings, seed). The checkpoint
/// and its loss curve are cached under <out>/checkpoints and reused; the
/// curve is copied to <out>/curve_<dataset>_<kind>.csv either way.
PretrainOutcome pretrain_cached(const ExperimentConfig& cfg, const GraphCollection& c,
                                std::ostream* log = nullptr);

struct TaskRow {
  std::size_t task_id = 0;
  PromptMode mode = PromptMode::Single;
  PretrainKind kind = PretrainKind::LinkPred;
  std::size_t k = 0;
  double accuracy = 0.0;
  std::size_t steps = 0;
  double final_loss = 0.0;
};

struct SettingReport {
  Setting setting;
  PromptMode mode = PromptMode::Single;
  std::vector<TaskRow> rows;
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation, 0 for one task
  std::filesystem::path csv;
};

struct RunReport {
  PretrainOutcome pretrain;
  std::vector<SettingReport> settings;
  std::filesystem::path summary;
};

/// Full pipeline: load, pre-train (cached), then for every setting and
/// prompt mode tune and evaluate num_tasks tasks. Task t of a setting uses
/// the same sampled task for every prompt mode.
RunReport run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Numbers in reports: %.10g.
std::string format_number(double v);
double mean_of(const std::vector<double>& v);
double sample_stddev(const std::vector<double>& v);

}  // namespace sgprompt
