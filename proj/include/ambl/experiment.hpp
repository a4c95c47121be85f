#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ambl/ablation.hpp"
#include "ambl/attention_analysis.hpp"
#include "ambl/behavior.hpp"
#include "ambl/dyck.hpp"
#include "ambl/trainer.hpp"
#include "ambl/transformer.hpp"
#include "json.hpp"

namespace ambl::exp {

namespace fs = std::filesystem;

struct SweepConfig {
  std::vector<int> depths{1, 2, 3};
  std::vector<int> widths{2};
  std::vector<double> weight_decays{0.0, 0.01};
  int init_seeds = 3;
  int shuffle_seeds = 1;
  uint64_t seed = 0;  // top-level; data, init and shuffle seeds derive from it
  double learning_rate = 1e-4;
  int hidden = 64;
  dyck::DatasetConfig data;
  train::TrainConfig train;
  fs::path out = "ambl-out";
  int jobs = 1;

  void validate() const;
  std::size_t planned_runs() const;
};

// "desk": 18 runs at a 100K budget; "full": 270 runs at 1M.
SweepConfig preset(std::string_view name);

// Output tree below one root.
struct Layout {
  fs::path root;
  fs::path data_dir() const { return root / "data"; }
  fs::path runs_dir() const { return root / "runs"; }
  fs::path run_dir(const std::string& run_id) const { return runs_dir() / run_id; }
  fs::path analysis_dir() const { return root / "analysis"; }
  fs::path report_dir() const { return root / "report"; }
};

uint64_t init_seed_for(uint64_t top_seed, int index);
uint64_t shuffle_seed_for(uint64_t top_seed, int index);

// Cartesian product in (depth, width, weight decay, init, shuffle) order.
std::vector<model::HyperParams> plan_runs(const SweepConfig& cfg);

nlohmann::json train_config_to_json(const train::TrainConfig& c);
train::TrainConfig train_config_from_json(const nlohmann::json& j);

// First 16 hex digits of SHA-256 over the canonical JSON of the three inputs.
std::string compute_run_id(const model::HyperParams& hp, const std::string& dataset_hash, const train::TrainConfig& cfg);

struct CheckpointEntry {
  std::string path;  // relative to the run directory
  long examples_seen = 0;
  double id_val_accuracy = 0.0;
  double ood_accuracy = 0.0;
};

struct AnalysisBlock {
  std::string error;  // set when the checkpoint could not be analysed
  behavior::RuleAssignment rule;
  std::vector<analysis::HeadClassification> heads;  // ID rows then OOD rows, (layer, head) order
  ablation::AblationResult all_heads;
  std::vector<ablation::AblationResult> single_heads;
  std::optional<std::size_t> max_single_index;
};

struct RunManifest {
  std::string run_id;
  std::string status = "completed";  // or "failed"
  std::string error;
  model::HyperParams hp;
  std::string dataset_hash;
  train::TrainConfig train;
  double final_id_accuracy = 0.0;
  double final_ood_accuracy = 0.0;
  bool reached_id_target = false;  // final ID accuracy >= 0.99
  train::ConvergenceFlags convergence;
  std::vector<CheckpointEntry> checkpoints;
  std::string metrics_path = "metrics.jsonl";
  double wall_clock_seconds = 0.0;
  std::optional<AnalysisBlock> analysis;

  bool completed() const { return status == "completed"; }
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);
void write_manifest(const Layout& layout, const RunManifest& m);
std::optional<RunManifest> read_manifest(const Layout& layout, const std::string& run_id);

// All manifests under runs/, in plan order (depth, width, decay, init, shuffle).
std::vector<RunManifest> load_manifests(const Layout& layout);

train::MetricsHistory read_metrics(const Layout& layout, const RunManifest& m);

using LogFn = std::function<void(const std::string&)>;

std::string gen_data(const dyck::DatasetConfig& cfg, const fs::path& dir, const LogFn& log = {});

struct SweepSummary {
  std::size_t planned = 0;
  std::size_t skipped = 0;  // already completed
  std::size_t trained = 0;
  std::size_t failed = 0;
  std::vector<std::string> run_ids;  // plan order
};

// Trains every planned run not already completed. Needs the dataset under
// layout.data_dir(). Runs execute on cfg.jobs worker threads.
SweepSummary run_sweep(const SweepConfig& cfg, const LogFn& log = {});

struct AnalyzeOptions {
  bool single_head = false;
  double threshold = 0.8;
};

struct AnalyzeSummary {
  std::size_t analysed = 0;
  std::size_t flagged = 0;  // missing or corrupt checkpoints
};

AnalyzeSummary run_analyze(const Layout& layout, const AnalyzeOptions& opts, const LogFn& log = {});

// gen-data (when absent) -> sweep -> analyze -> report.
void run_pipeline(const SweepConfig& cfg, const AnalyzeOptions& opts, const LogFn& log = {});

}  // namespace ambl::exp
