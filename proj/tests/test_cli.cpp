#include <cstdlib>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "doctest.h"
#include "sgprompt/config.hpp"
#include "sgprompt/errors.hpp"
#include "sgprompt/experiment.hpp"
#include "sgprompt/selfcheck.hpp"
#include "tu_fixture.hpp"

using namespace sgprompt;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// Exit status of the CLI, output captured in `out`.
int run_cli(const std::string& args, std::string* out = nullptr) {
  const auto log = fixture::temp_dir("cli_log") / "out.txt";
  const std::string cmd = std::string(SGPROMPT_CLI) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  if (out) *out = slurp(log);
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::filesystem::path small_dataset() {
  static const std::filesystem::path dir = [] {
    const auto d = fixture::temp_dir("cli_data");
    fixture::TuFixtureOptions opts;
    opts.graphs = 16;
    opts.min_nodes = 6;
    opts.max_nodes = 10;
    fixture::write_tu_fixture(d / "FIX", "FIX", opts);
    return d;
  }();
  return dir;
}

std::string small_config(const std::filesystem::path& out) {
  return "# tiny end-to-end run\n"
         "dataset = FIX\n"
         "data_dir = " + small_dataset().string() + "\n"
         "out = " + out.string() + "\n"
         "seed = 4\n"
         "epochs = 3\n"
         "hidden_dim = 8\n"
         "triplets_per_graph = 5\n"
         "prompt_mode = single,layerwise\n"
         "task_level = node,graph\n"
         "k = 1,2\n"
         "num_tasks = 2\n"
         "query_per_class = 3\n"
         "max_steps = 5\n";
}

}  // namespace

TEST_CASE("key=value parsing") {
  const KeyValues kv = parse_key_values("# comment\n a = 1 \n\nb=x,y # trailing\n");
  CHECK(kv.at("a") == "1");
  CHECK(kv.at("b") == "x,y");
  CHECK_THROWS_AS(parse_key_values("a=1\na=2\n"), ConfigError);
  CHECK_THROWS_AS(parse_key_values("novalue\n"), ConfigError);
}

TEST_CASE("config application") {
  SUBCASE("defaults") {
    const ExperimentConfig cfg = apply_key_values({}, {});
    CHECK(cfg.dataset == "ENZYMES");
    CHECK(cfg.pretrain.tau == 0.5);
    CHECK(cfg.pretrain.adam.learning_rate == 1e-3);
    CHECK(cfg.tune.adam.learning_rate == 0.01);
    CHECK(cfg.tune.max_steps == 200);
    CHECK(cfg.pretrain.layers == 3);
    CHECK(cfg.pretrain.hidden_dim == 32);
    CHECK(cfg.pretrain.delta == 1);
    CHECK(cfg.num_tasks == 10);
  }
  SUBCASE("settings pair up and broadcast") {
    const ExperimentConfig a = apply_key_values({}, {{"task_level", "node,graph"}, {"k", "1,5"}});
    CHECK(a.settings == std::vector<Setting>{{TaskLevel::Node, 1}, {TaskLevel::Graph, 5}});
    const ExperimentConfig b = apply_key_values({}, {{"task_level", "graph"}, {"k", "1,5"}});
    CHECK(b.settings == std::vector<Setting>{{TaskLevel::Graph, 1}, {TaskLevel::Graph, 5}});
    CHECK_THROWS_AS(apply_key_values({}, {{"task_level", "node,graph,node"}, {"k", "1,5"}}), ConfigError);
  }
  SUBCASE("unknown keys are all listed") {
    try {
      apply_key_values({}, {{"learning_rate", "1"}, {"colour", "red"}, {"seed", "1"}});
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("learning_rate") != std::string::npos);
      CHECK(msg.find("colour") != std::string::npos);
    }
  }
  SUBCASE("bad values name their key") {
    try {
      apply_key_values({}, {{"epochs", "many"}});
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("epochs") != std::string::npos);
    }
    CHECK_THROWS_AS(apply_key_values({}, {{"prompt_mode", "deep"}}), ConfigError);
  }
  SUBCASE("validation") {
    CHECK_THROWS_AS(apply_key_values({}, {{"num_tasks", "0"}}).validate(), ConfigError);
    CHECK_THROWS_AS(apply_key_values({}, {{"tau", "0"}}).validate(), ConfigError);
    CHECK_THROWS_AS(apply_key_values({}, {{"gcc_r", "2"}}).validate(), ConfigError);
  }
  SUBCASE("describe round-trips") {
    const ExperimentConfig cfg =
        apply_key_values({}, {{"tau", "0.1"}, {"task_level", "graph"}, {"k", "5"}, {"prompt_mode", "linear"}});
    const ExperimentConfig again = apply_key_values({}, parse_key_values(describe(cfg)));
    CHECK(describe(again) == describe(cfg));
  }
}

TEST_CASE("statistics helpers") {
  CHECK(mean_of({0.5, 1.0, 0.0, 0.5}) == 0.5);
  CHECK(sample_stddev({1.0}) == 0.0);
  CHECK(sample_stddev({1.0, 3.0}) == doctest::Approx(std::sqrt(2.0)));
}

TEST_CASE("experiment run") {
  const auto root = fixture::temp_dir("cli_run");
  const ExperimentConfig cfg = apply_key_values({}, parse_key_values(small_config(root / "a")));
  const RunReport first = run_experiment(cfg);
  REQUIRE(first.settings.size() == 4);
  CHECK_FALSE(first.pretrain.cached);

  for (const SettingReport& s : first.settings) {
    CHECK(s.rows.size() == 2);
    std::vector<double> accs;
    for (const TaskRow& r : s.rows) {
      CHECK(r.accuracy >= 0.0);
      CHECK(r.accuracy <= 1.0);
      accs.push_back(r.accuracy);
    }
    CHECK(std::abs(s.mean - (accs[0] + accs[1]) / 2) < 1e-12);
    const std::string csv = slurp(s.csv);
    CHECK(csv.rfind("task_id,mode,pretrain_kind,k,accuracy,steps,final_loss\n", 0) == 0);
  }
  const std::string summary = slurp(first.summary);
  CHECK(summary.rfind("dataset,pretrain_kind,level,k,mode,num_tasks,mean_accuracy,std_accuracy\n", 0) == 0);
  CHECK(slurp(first.pretrain.curve).rfind("epoch,loss\n0,", 0) == 0);

  SUBCASE("second run reuses the checkpoint and reproduces the reports") {
    const RunReport again = run_experiment(cfg);
    CHECK(again.pretrain.cached);
    CHECK(slurp(again.summary) == summary);
  }
  SUBCASE("a fresh output directory reproduces every byte") {
    ExperimentConfig other = cfg;
    other.out_dir = root / "b";
    const RunReport fresh = run_experiment(other);
    CHECK_FALSE(fresh.pretrain.cached);
    CHECK(slurp(fresh.pretrain.checkpoint) == slurp(first.pretrain.checkpoint));
    CHECK(slurp(fresh.summary) == summary);
    for (std::size_t i = 0; i < fresh.settings.size(); ++i)
      CHECK(slurp(fresh.settings[i].csv) == slurp(first.settings[i].csv));
  }
  SUBCASE("missing dataset") {
    ExperimentConfig missing = cfg;
    missing.dataset = "NOPE";
    CHECK_THROWS_AS(run_experiment(missing), IngestError);
  }
}

TEST_CASE("selfcheck registry") {
  SUBCASE("default checks pass") {
    std::ostringstream out;
    const SelfcheckSummary s = run_checks(default_checks(), out);
    CHECK(s.exit_code() == 0);
    CHECK(s.failures.empty());
  }
  SUBCASE("an injected wrong gradient fails by name") {
    CheckRegistry reg;
    reg.add("grad/halved_square", [] {
      const auto x = ag::parameter(Tensor::row({0.4, -1.3}), "x");
      const auto sq = ag::custom(
          "halved_square", {x}, 1, 2,
          [](std::span<const Tensor* const> in) {
            Tensor out = *in[0];
            for (double& v : out.values()) v *= v;
            return out;
          },
          [](std::span<const Tensor* const> in, const Tensor&, const Tensor& g) {
            Tensor d = *in[0];  // should be 2x·g
            for (std::size_t i = 0; i < d.size(); ++i) d[i] *= g[i];
            return std::vector<Tensor>{d};
          });
      return gradient_check("halved_square", ag::sum(sq));
    });
    std::ostringstream out;
    const SelfcheckSummary s = run_checks(reg, out);
    CHECK(s.exit_code() != 0);
    CHECK(s.failures == std::vector<std::string>{"grad/halved_square"});
    CHECK(out.str().find("FAIL grad/halved_square") != std::string::npos);
    CHECK(out.str().find("halved_square") != std::string::npos);
  }
  SUBCASE("a throwing check is a failure") {
    CheckRegistry reg;
    reg.add("boom", []() -> CheckOutcome { throw std::runtime_error("bang"); });
    std::ostringstream out;
    CHECK(run_checks(reg, out).exit_code() != 0);
  }
  SUBCASE("an empty registry fails") {
    std::ostringstream out;
    CHECK(run_checks(CheckRegistry{}, out).exit_code() != 0);
  }
}

TEST_CASE("command line") {
  std::string out;
  CHECK(run_cli("selfcheck", &out) == 0);
  CHECK(out.find("FAIL") == std::string::npos);
  CHECK(run_cli("gradcheck --seed 3", &out) == 0);
  CHECK(run_cli("--help") == 0);
  CHECK(run_cli("") != 0);
  CHECK(run_cli("run --no-such-flag") == 1);

  const auto root = fixture::temp_dir("cli_exec");
  const auto cfg_path = root / "exp.cfg";
  std::ofstream(cfg_path) << small_config(root / "out");

  CHECK(run_cli("run --config " + cfg_path.string() + " --num_tasks 0", &out) == 1);
  CHECK(out.find("num_tasks") != std::string::npos);

  std::ofstream(root / "bad.cfg") << "dataset = FIX\nbogus_key = 1\n";
  CHECK(run_cli("run --config " + (root / "bad.cfg").string(), &out) == 1);
  CHECK(out.find("bogus_key") != std::string::npos);

  CHECK(run_cli("run --config " + cfg_path.string() + " --dataset NOPE", &out) == 1);

  CHECK(run_cli("run --config " + cfg_path.string() + " --seed 9", &out) == 0);
  const std::string summary = slurp(root / "out" / "summary.csv");
  std::filesystem::remove_all(root / "out");
  CHECK(run_cli("run --config " + cfg_path.string() + " --seed 9") == 0);
  CHECK(slurp(root / "out" / "summary.csv") == summary);

  CHECK(run_cli("pretrain --config " + cfg_path.string() + " --print-config", &out) == 0);
  CHECK(out.find("checkpoint ") != std::string::npos);
  CHECK(out.find("hidden_dim=8") != std::string::npos);

  SUBCASE("overflowing features are a numeric failure") {
    const auto data = root / "huge";
    std::filesystem::create_directories(data);
    std::ofstream(data / "HUGE_A.txt") << "1, 2\n2, 1\n2, 3\n3, 2\n4, 5\n5, 4\n5, 6\n6, 5\n";
    std::ofstream(data / "HUGE_graph_indicator.txt") << "1\n1\n1\n2\n2\n2\n";
    std::ofstream(data / "HUGE_graph_labels.txt") << "0\n1\n";
    std::ofstream(data / "HUGE_node_attributes.txt") << "1e308\n1e308\n1e308\n1e308\n1e308\n1e308\n";
    CHECK(run_cli("pretrain --dataset HUGE --data_dir " + data.string() + " --out " +
                      (root / "huge_out").string() + " --epochs 1",
                  &out) == 2);
  }
}
