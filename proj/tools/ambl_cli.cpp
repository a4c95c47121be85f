// ambl: data generation, sweeps, analysis and reports for the bracket-rule study.
#include <fmt/format.h>

#include <cstdlib>
#include <iostream>
#include <mutex>

#include "CLI11.hpp"
#include "ambl/checkpoint.hpp"
#include "ambl/dataset_io.hpp"
#include "ambl/experiment.hpp"
#include "ambl/report.hpp"
#include "ambl/stats.hpp"

namespace {

using namespace ambl;

std::string default_out() {
  const char* env = std::getenv("AMBL_OUT");
  return env && *env ? env : "ambl-out";
}

exp::LogFn stderr_log() {
  static std::mutex mu;
  return [](const std::string& msg) {
    std::lock_guard lock(mu);
    fmt::print(stderr, "{}\n", msg);
  };
}

struct SweepFlags {
  std::string preset = "desk";
  std::vector<int> depths, widths;
  std::vector<double> wds;
  int init_seeds = 0, shuffle_seeds = 0, jobs = 0;
  uint64_t seed = 0;
  long total_examples = 0, eval_every = 0;
  int train_unique = 0;
};

void add_sweep_flags(CLI::App* app, SweepFlags& f) {
  app->add_option("--preset", f.preset, "desk (18 runs, 100K budget) or full (270 runs, 1M)")
      ->check(CLI::IsMember({"desk", "full"}));
  app->add_option("--depths", f.depths, "Layer counts")->delimiter(',');
  app->add_option("--widths", f.widths, "Heads per layer")->delimiter(',');
  app->add_option("--wd", f.wds, "Weight decay values")->delimiter(',');
  app->add_option("--init-seeds", f.init_seeds, "Initialization seeds per cell")->check(CLI::PositiveNumber);
  app->add_option("--shuffle-seeds", f.shuffle_seeds, "Shuffle seeds per cell")->check(CLI::PositiveNumber);
  app->add_option("--seed", f.seed, "Top-level seed");
  app->add_option("--jobs", f.jobs, "Concurrent runs")->check(CLI::PositiveNumber);
  app->add_option("--total-examples", f.total_examples, "Training examples per run")->check(CLI::PositiveNumber);
  app->add_option("--eval-every", f.eval_every, "Evaluation cadence in examples")->check(CLI::PositiveNumber);
  app->add_option("--train-unique", f.train_unique, "Unique training examples (when data is generated)")
      ->check(CLI::PositiveNumber);
}

exp::SweepConfig sweep_config(const SweepFlags& f, const std::string& out) {
  auto c = exp::preset(f.preset);
  if (!f.depths.empty()) c.depths = f.depths;
  if (!f.widths.empty()) c.widths = f.widths;
  if (!f.wds.empty()) c.weight_decays = f.wds;
  if (f.init_seeds) c.init_seeds = f.init_seeds;
  if (f.shuffle_seeds) c.shuffle_seeds = f.shuffle_seeds;
  if (f.jobs) c.jobs = f.jobs;
  if (f.total_examples) c.train.total_examples = f.total_examples;
  if (f.eval_every) c.train.eval_every = f.eval_every;
  if (f.train_unique) c.data.train_unique = f.train_unique;
  c.seed = f.seed;
  c.data.seed = f.seed;
  c.out = out;
  return c;
}

std::vector<double> parse_sample(const std::string& text) {
  std::vector<double> out;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto comma = text.find(',', pos);
    const auto item = text.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    out.push_back(std::stod(item));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"ambl - rule selection experiments on bracket languages"};
  app.require_subcommand(1);
  std::string out = default_out();
  app.add_option("--out", out, "Output root (default $AMBL_OUT or ./ambl-out)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "Generate train / ID validation / OOD splits");
  dyck::DatasetConfig data;
  gen->add_option("--seed", data.seed, "Generation seed");
  gen->add_option("--train-unique", data.train_unique, "Unique training examples")->check(CLI::PositiveNumber);
  gen->add_option("--val-size", data.val_size, "ID validation examples")->check(CLI::PositiveNumber);
  gen->add_option("--ood-size", data.ood_size, "OOD test examples")->check(CLI::PositiveNumber);
  gen->add_option("--preset", [&](const CLI::results_t& r) {
       if (r[0] == "full") data.train_unique = 200'000;
       return r[0] == "desk" || r[0] == "full";
     }, "desk (20K unique) or full (200K unique)");

  auto* sweep = app.add_subcommand("sweep", "Train every grid cell x seed pair (resumable)");
  SweepFlags sweep_flags;
  add_sweep_flags(sweep, sweep_flags);

  exp::AnalyzeOptions analyze_opts;
  std::string ablate_mode = "all";
  auto* analyze = app.add_subcommand("analyze", "Head census, rule assignment and ablation for every run");
  analyze->add_option("--ablate", ablate_mode, "all: all-heads ablation; single: also one head at a time")
      ->check(CLI::IsMember({"all", "single"}));
  analyze->add_option("--threshold", analyze_opts.threshold, "Hierarchical-head fraction")->check(CLI::Range(0.0, 1.0));

  auto* report = app.add_subcommand("report", "Write plot-ready CSV/JSON bundles");

  auto* pipeline = app.add_subcommand("pipeline", "gen-data, sweep, analyze and report in one go");
  SweepFlags pipe_flags;
  add_sweep_flags(pipeline, pipe_flags);
  pipeline->add_option("--ablate", ablate_mode, "all or single")->check(CLI::IsMember({"all", "single"}));

  auto* ablate = app.add_subcommand("ablate", "Uniform-attention ablation of one checkpoint");
  std::string ckpt_path, data_dir;
  ablate->add_option("checkpoint", ckpt_path, "Checkpoint file")->required()->check(CLI::ExistingFile);
  ablate->add_option("--data", data_dir, "Dataset directory (default <out>/data)");
  ablate->add_option("--ablate", ablate_mode, "all or single")->check(CLI::IsMember({"all", "single"}));

  auto* stat = app.add_subcommand("stats", "Two-sample and correlation tests on comma-separated values");
  std::string test = "mwu", a_text, b_text;
  stat->add_option("--test", test, "mwu, spearman or pearson")->check(CLI::IsMember({"mwu", "spearman", "pearson"}));
  stat->add_option("--a", a_text, "First sample / xs")->required();
  stat->add_option("--b", b_text, "Second sample / ys")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  const auto log = stderr_log();
  const exp::Layout layout{out};
  analyze_opts.single_head = ablate_mode == "single";
  try {
    if (*gen) {
      std::cout << exp::gen_data(data, layout.data_dir(), log) << "\n";
    } else if (*sweep) {
      const auto s = exp::run_sweep(sweep_config(sweep_flags, out), log);
      fmt::print("planned {} skipped {} trained {} failed {}\n", s.planned, s.skipped, s.trained, s.failed);
      return s.failed ? 2 : 0;
    } else if (*analyze) {
      const auto s = exp::run_analyze(layout, analyze_opts, log);
      fmt::print("analysed {} flagged {}\n", s.analysed, s.flagged);
    } else if (*report) {
      report::write_report(layout, log);
    } else if (*pipeline) {
      exp::run_pipeline(sweep_config(pipe_flags, out), analyze_opts, log);
    } else if (*ablate) {
      const auto ck = ckpt::load_checkpoint(ckpt_path);
      const auto bundle = read_dataset(data_dir.empty() ? layout.data_dir() : std::filesystem::path(data_dir));
      const std::string run_id = ck.metadata.value("run_id", std::string());
      std::cout << ablation::to_json(ablation::ablation_experiment(ck.model, bundle, ablation::Scope::all_heads(), run_id)).dump()
                << "\n";
      if (analyze_opts.single_head) {
        const auto s = ablation::single_head_sweep(ck.model, bundle, run_id);
        for (const auto& r : s.results) std::cout << ablation::to_json(r).dump() << "\n";
        std::cout << nlohmann::json{{"max_delta_ood_scope", s.results[s.max_delta_ood_index].scope.label()}}.dump() << "\n";
      }
    } else if (*stat) {
      const auto a = parse_sample(a_text), b = parse_sample(b_text);
      const auto r = test == "mwu" ? stats::mann_whitney_u(a, b)
                                   : test == "spearman" ? stats::spearman_rho(a, b) : stats::pearson_r(a, b);
      std::cout << nlohmann::json{{"test", test}, {"statistic", r.statistic}, {"p_value", r.p_value},
                                  {"n1", r.n1}, {"n2", r.n2}, {"exact", r.exact}}
                       .dump()
                << "\n";
    }
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return 2;
  }
  return 0;
}
