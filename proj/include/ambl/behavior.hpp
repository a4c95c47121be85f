#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "ambl/dyck.hpp"
#include "ambl/stats.hpp"
#include "ambl/transformer.hpp"

namespace ambl::behavior {

enum class Rule { EqualCount, Nested, FirstSymbol, Other };
std::string to_string(Rule r);

struct RuleAssignment {
  std::string run_id;
  Rule rule = Rule::Other;
  double ood_accuracy = 0.0;
  double first_symbol_match_rate = 0.0;
};

// FirstSymbol needs >= 99% agreement with the first-symbol heuristic and OOD
// accuracy in [0.54, 0.56]; then EqualCount (<= 0.2), Nested (>= 0.8), Other.
Rule rule_from(double ood_accuracy, double first_symbol_match_rate);

// predictions[i] is the model's label for ood_set[i].
RuleAssignment assign_rule(std::span<const dyck::Label> predictions, std::span<const dyck::Example> ood_set,
                           const std::string& run_id = {});
RuleAssignment assign_rule(const model::ModelRecord& model, std::span<const dyck::Example> ood_set,
                           const std::string& run_id = {});

// prob_true of every example; one row of the probability matrix.
std::vector<double> ood_probabilities(const model::ModelRecord& model, std::span<const dyck::Example> ood_set);
std::vector<std::vector<double>> ood_probability_matrix(std::span<const model::ModelRecord* const> models,
                                                        std::span<const dyck::Example> ood_set);

double first_symbol_close_fraction(std::span<const dyck::Example> ood_set);

// Final state of one trained run, as needed by the population analyses.
struct RunOutcome {
  std::string run_id;
  model::HyperParams hp;
  double final_id_accuracy = 0.0;
  double final_ood_accuracy = 0.0;
};

struct SeedRangeGroup {
  std::string key;  // shared settings, e.g. "D2_W2_wd0.01_shuffle0"
  std::vector<double> ood;
  double range = 0.0;
};

struct SeedRangeAnalysis {
  std::vector<SeedRangeGroup> init_seed_groups;     // init seed varies
  std::vector<SeedRangeGroup> shuffle_seed_groups;  // shuffle seed varies
  std::vector<int> init_histogram;                  // 10 bins of width 0.1; range 1.0 in the last
  std::vector<int> shuffle_histogram;
  int init_groups_range_at_least_0_1 = 0;
  int shuffle_groups_range_at_least_0_1 = 0;
  std::vector<std::string> warnings;                // skipped singleton groups
};

SeedRangeAnalysis seed_range_analysis(std::span<const RunOutcome> runs);

struct CellSummary {
  int depth = 0;
  int heads = 0;
  double weight_decay = 0.0;
  std::vector<double> ood;  // run order
  double median = 0.0;
  double min = 0.0;
  double max = 0.0;
};

struct Contrast {
  std::string factor;   // depth | width | weight_decay
  std::string context;  // fixed settings, "pooled" when none
  std::string level_a;
  std::string level_b;
  stats::StatResult test;
};

struct FactorReport {
  std::vector<CellSummary> cells;
  std::vector<Contrast> contrasts;
  SeedRangeAnalysis seeds;
};

FactorReport factor_report(std::span<const RunOutcome> runs);

}  // namespace ambl::behavior
