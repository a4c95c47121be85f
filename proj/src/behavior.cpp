#include "ambl/behavior.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <stdexcept>
#include <tuple>

namespace ambl::behavior {

std::string to_string(Rule r) {
  switch (r) {
    case Rule::EqualCount: return "EqualCount";
    case Rule::Nested: return "Nested";
    case Rule::FirstSymbol: return "FirstSymbol";
    case Rule::Other: break;
  }
  return "Other";
}

Rule rule_from(double ood_accuracy, double first_symbol_match_rate) {
  if (first_symbol_match_rate >= 0.99 && ood_accuracy >= 0.54 && ood_accuracy <= 0.56) return Rule::FirstSymbol;
  if (ood_accuracy <= 0.2) return Rule::EqualCount;
  if (ood_accuracy >= 0.8) return Rule::Nested;
  return Rule::Other;
}

RuleAssignment assign_rule(std::span<const dyck::Label> predictions, std::span<const dyck::Example> ood_set,
                           const std::string& run_id) {
  if (predictions.size() != ood_set.size() || ood_set.empty()) {
    throw std::invalid_argument("assign_rule: need one prediction per OOD example");
  }
  long correct = 0, first_symbol = 0;
  for (std::size_t i = 0; i < ood_set.size(); ++i) {
    correct += predictions[i] == ood_set[i].label;
    first_symbol += predictions[i] == dyck::eval_first_symbol(ood_set[i].seq);
  }
  const double n = static_cast<double>(ood_set.size());
  RuleAssignment a;
  a.run_id = run_id;
  a.ood_accuracy = correct / n;
  a.first_symbol_match_rate = first_symbol / n;
  a.rule = rule_from(a.ood_accuracy, a.first_symbol_match_rate);
  return a;
}

RuleAssignment assign_rule(const model::ModelRecord& model, std::span<const dyck::Example> ood_set,
                           const std::string& run_id) {
  std::vector<dyck::Label> preds(ood_set.size());
  const long n = static_cast<long>(ood_set.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (long i = 0; i < n; ++i) preds[i] = model::predict(model, ood_set[i].seq).label;
  return assign_rule(preds, ood_set, run_id);
}

std::vector<double> ood_probabilities(const model::ModelRecord& model, std::span<const dyck::Example> ood_set) {
  std::vector<double> row(ood_set.size());
  const long n = static_cast<long>(ood_set.size());
#pragma omp parallel for schedule(dynamic, 16)
  for (long i = 0; i < n; ++i) row[i] = model::predict(model, ood_set[i].seq).prob_true;
  return row;
}

std::vector<std::vector<double>> ood_probability_matrix(std::span<const model::ModelRecord* const> models,
                                                        std::span<const dyck::Example> ood_set) {
  std::vector<std::vector<double>> m;
  m.reserve(models.size());
  for (const auto* model : models) m.push_back(ood_probabilities(*model, ood_set));
  return m;
}

double first_symbol_close_fraction(std::span<const dyck::Example> ood_set) {
  if (ood_set.empty()) throw std::invalid_argument("first_symbol_close_fraction: empty set");
  long close = 0;
  for (const auto& ex : ood_set) close += ex.seq.at(1) == dyck::Symbol::Close;
  return static_cast<double>(close) / static_cast<double>(ood_set.size());
}

namespace {

std::string cell_key(const model::HyperParams& hp) {
  return fmt::format("D{}_W{}_wd{}", hp.depth, hp.heads, hp.weight_decay);
}

std::vector<SeedRangeGroup> range_groups(std::span<const RunOutcome> runs, bool vary_init,
                                         std::vector<std::string>& warnings) {
  std::map<std::string, std::vector<double>> groups;
  for (const auto& r : runs) {
    const std::string key = cell_key(r.hp) + (vary_init ? fmt::format("_shuffle{}", r.hp.shuffle_seed)
                                                        : fmt::format("_init{}", r.hp.init_seed));
    groups[key].push_back(r.final_ood_accuracy);
  }
  std::vector<SeedRangeGroup> out;
  for (auto& [key, ood] : groups) {
    if (ood.size() < 2) {
      warnings.push_back(fmt::format("{} seed range: group {} has a single run, skipped", vary_init ? "init" : "shuffle", key));
      continue;
    }
    const auto [lo, hi] = std::minmax_element(ood.begin(), ood.end());
    out.push_back({key, ood, *hi - *lo});
  }
  return out;
}

std::vector<int> histogram(const std::vector<SeedRangeGroup>& groups) {
  std::vector<int> bins(10, 0);
  for (const auto& g : groups) ++bins[std::min(9, static_cast<int>(g.range * 10.0))];
  return bins;
}

int at_least_tenth(const std::vector<SeedRangeGroup>& groups) {
  return static_cast<int>(std::count_if(groups.begin(), groups.end(), [](const auto& g) { return g.range >= 0.1; }));
}

template <typename LevelFn, typename ContextFn>
void add_contrasts(std::vector<Contrast>& out, std::span<const RunOutcome> runs, const std::string& factor,
                   LevelFn level, ContextFn context) {
  std::map<std::string, std::map<double, std::vector<double>>> groups;
  for (const auto& r : runs) groups[context(r.hp)][level(r.hp)].push_back(r.final_ood_accuracy);
  for (const auto& [ctx, levels] : groups) {
    for (auto a = levels.begin(); a != levels.end(); ++a) {
      for (auto b = std::next(a); b != levels.end(); ++b) {
        out.push_back({factor, ctx, fmt::format("{}", a->first), fmt::format("{}", b->first),
                       stats::mann_whitney_u(a->second, b->second)});
      }
    }
  }
}

}  // namespace

SeedRangeAnalysis seed_range_analysis(std::span<const RunOutcome> runs) {
  SeedRangeAnalysis s;
  s.init_seed_groups = range_groups(runs, true, s.warnings);
  s.shuffle_seed_groups = range_groups(runs, false, s.warnings);
  s.init_histogram = histogram(s.init_seed_groups);
  s.shuffle_histogram = histogram(s.shuffle_seed_groups);
  s.init_groups_range_at_least_0_1 = at_least_tenth(s.init_seed_groups);
  s.shuffle_groups_range_at_least_0_1 = at_least_tenth(s.shuffle_seed_groups);
  return s;
}

FactorReport factor_report(std::span<const RunOutcome> runs) {
  FactorReport rep;
  std::map<std::tuple<int, int, double>, std::vector<double>> cells;
  for (const auto& r : runs) cells[{r.hp.depth, r.hp.heads, r.hp.weight_decay}].push_back(r.final_ood_accuracy);
  for (const auto& [key, ood] : cells) {
    CellSummary c;
    std::tie(c.depth, c.heads, c.weight_decay) = key;
    c.ood = ood;
    c.median = stats::median(ood);
    c.min = *std::min_element(ood.begin(), ood.end());
    c.max = *std::max_element(ood.begin(), ood.end());
    rep.cells.push_back(std::move(c));
  }

  using HP = model::HyperParams;
  const auto pooled = [](const HP&) { return std::string("pooled"); };
  add_contrasts(rep.contrasts, runs, "depth", [](const HP& h) { return double(h.depth); }, pooled);
  add_contrasts(rep.contrasts, runs, "depth", [](const HP& h) { return double(h.depth); },
                [](const HP& h) { return fmt::format("wd{}", h.weight_decay); });
  add_contrasts(rep.contrasts, runs, "width", [](const HP& h) { return double(h.heads); }, pooled);
  add_contrasts(rep.contrasts, runs, "width", [](const HP& h) { return double(h.heads); },
                [](const HP& h) { return fmt::format("D{}_wd{}", h.depth, h.weight_decay); });
  add_contrasts(rep.contrasts, runs, "weight_decay", [](const HP& h) { return h.weight_decay; }, pooled);
  add_contrasts(rep.contrasts, runs, "weight_decay", [](const HP& h) { return h.weight_decay; },
                [](const HP& h) { return fmt::format("D{}", h.depth); });
  rep.seeds = seed_range_analysis(runs);
  return rep;
}

}  // namespace ambl::behavior
