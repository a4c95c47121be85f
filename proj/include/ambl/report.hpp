#pragma once

#include "ambl/experiment.hpp"

// Plot-ready bundles written to <root>/report:
//   a_ood_probability_matrix.csv  runs × OOD examples, prob_true
//   b_ood_by_depth_wd.csv         final accuracies per run
//   c_trajectories.json           OOD accuracy per checkpoint and record, null while ID < 0.99
//   d_hierarchical_vs_ood.json    OOD accuracy with/without ID hierarchical heads
//   e_ablation_scatter.csv        baseline vs uniform-ablated accuracy per run
//   f_statistics.json             factor contrasts, seed ranges, census and ablation statistics
// Contents depend only on the manifests, checkpoints and dataset.
namespace ambl::report {

inline constexpr const char* kBundleFiles[] = {
    "a_ood_probability_matrix.csv", "b_ood_by_depth_wd.csv", "c_trajectories.json",
    "d_hierarchical_vs_ood.json",   "e_ablation_scatter.csv", "f_statistics.json"};

struct HierarchicalComparison {
  int with_n = 0;
  int without_n = 0;
  std::optional<double> with_median;
  std::optional<double> without_median;
  std::optional<stats::StatResult> test;  // with vs without
};

// Runs of depth >= 2 with a successful analysis, split by ID hierarchical heads.
HierarchicalComparison hierarchical_comparison(const std::vector<exp::RunManifest>& runs);

// Mean |baseline - ablated| ID accuracy under all-heads ablation over runs
// whose final ID accuracy is >= 0.99; nullopt when there are none.
std::optional<double> mean_abs_id_drop(const std::vector<exp::RunManifest>& runs, int* count = nullptr);

void write_report(const exp::Layout& layout, const exp::LogFn& log = {});

}  // namespace ambl::report
