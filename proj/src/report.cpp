#include "ambl/report.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>

#include "ambl/checkpoint.hpp"
#include "ambl/dataset_io.hpp"

namespace ambl::report {

using nlohmann::json;

namespace {

bool analysed(const exp::RunManifest& m) { return m.completed() && m.analysis && m.analysis->error.empty(); }

bool has_id_hierarchical(const exp::RunManifest& m) {
  return std::any_of(m.analysis->heads.begin(), m.analysis->heads.end(), [](const analysis::HeadClassification& h) {
    return h.tag == analysis::DatasetTag::ID && h.is_hierarchical;
  });
}

int id_hierarchical_count(const exp::RunManifest& m) {
  return static_cast<int>(std::count_if(m.analysis->heads.begin(), m.analysis->heads.end(), [](const auto& h) {
    return h.tag == analysis::DatasetTag::ID && h.is_hierarchical;
  }));
}

json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json stat_json(const stats::StatResult& r) {
  return {{"statistic", r.statistic}, {"p_value", r.p_value}, {"n1", r.n1}, {"n2", r.n2}, {"exact", r.exact}};
}

json hp_json(const model::HyperParams& hp) {
  return {{"depth", hp.depth}, {"heads", hp.heads}, {"weight_decay", hp.weight_decay},
          {"init_seed", hp.init_seed}, {"shuffle_seed", hp.shuffle_seed}};
}

std::string num(double x) { return fmt::format("{}", x); }

std::string bundle_a(const exp::Layout& layout, const std::vector<exp::RunManifest>& runs,
                     const dyck::DatasetBundle& bundle) {
  std::string out = "run_id";
  for (std::size_t i = 0; i < bundle.test_ood.size(); ++i) out += fmt::format(",ood_{}", i);
  out += '\n';
  for (const auto& m : runs) {
    if (!m.completed() || m.checkpoints.empty()) continue;
    std::vector<double> row;
    try {
      const auto ck = ckpt::load_checkpoint(layout.run_dir(m.run_id) / m.checkpoints.back().path);
      row = behavior::ood_probabilities(ck.model, bundle.test_ood);
    } catch (const std::exception&) {
      continue;  // flagged by analyze; left out of the matrix
    }
    out += m.run_id;
    for (double p : row) out += "," + num(p);
    out += '\n';
  }
  return out;
}

std::string bundle_b(const std::vector<exp::RunManifest>& runs) {
  std::string out =
      "run_id,depth,heads,weight_decay,init_seed,shuffle_seed,final_id_accuracy,final_ood_accuracy,reached_id_target,"
      "id_converged_at,ood_converged_at,ood_rule,rule\n";
  for (const auto& m : runs) {
    if (!m.completed()) continue;
    const auto show = [](const std::optional<long>& v) { return v ? std::to_string(*v) : std::string(); };
    out += fmt::format("{},{},{},{},{},{},{},{},{:d},{},{},{},{}\n", m.run_id, m.hp.depth, m.hp.heads,
                       num(m.hp.weight_decay), m.hp.init_seed, m.hp.shuffle_seed, num(m.final_id_accuracy),
                       num(m.final_ood_accuracy), static_cast<int>(m.reached_id_target),
                       show(m.convergence.id_converged_at), show(m.convergence.ood_converged_at),
                       train::to_string(m.convergence.ood_rule),
                       analysed(m) ? behavior::to_string(m.analysis->rule.rule) : std::string());
  }
  return out;
}

json bundle_c(const exp::Layout& layout, const std::vector<exp::RunManifest>& runs) {
  json out = json::array();
  const auto masked = [](double id, double ood) { return id >= 0.99 ? json(ood) : json(nullptr); };
  for (const auto& m : runs) {
    if (!m.completed()) continue;
    json cps = json::array(), recs = json::array();
    for (const auto& c : m.checkpoints) {
      cps.push_back({{"examples_seen", c.examples_seen},
                     {"id_val_accuracy", c.id_val_accuracy},
                     {"ood_accuracy", masked(c.id_val_accuracy, c.ood_accuracy)}});
    }
    for (const auto& r : exp::read_metrics(layout, m)) {
      recs.push_back({{"examples_seen", r.examples_seen},
                      {"id_val_accuracy", r.id_val_accuracy},
                      {"ood_accuracy", masked(r.id_val_accuracy, r.ood_accuracy)}});
    }
    json row = hp_json(m.hp);
    row["run_id"] = m.run_id;
    row["checkpoints"] = cps;
    row["records"] = recs;
    out.push_back(row);
  }
  return {{"runs", out}};
}

json comparison_json(const HierarchicalComparison& c) {
  return {{"population", "depth>=2"},
          {"with_id_hierarchical", {{"n", c.with_n}, {"median_ood", opt(c.with_median)}}},
          {"without_id_hierarchical", {{"n", c.without_n}, {"median_ood", opt(c.without_median)}}},
          {"mann_whitney", c.test ? stat_json(*c.test) : json(nullptr)}};
}

json bundle_d(const std::vector<exp::RunManifest>& runs) {
  json rows = json::array();
  for (const auto& m : runs) {
    if (!analysed(m) || m.hp.depth < 2) continue;
    json row = hp_json(m.hp);
    row["run_id"] = m.run_id;
    row["id_hierarchical_heads"] = id_hierarchical_count(m);
    row["final_ood_accuracy"] = m.final_ood_accuracy;
    rows.push_back(row);
  }
  return {{"runs", rows}, {"summary", comparison_json(hierarchical_comparison(runs))}};
}

std::string bundle_e(const std::vector<exp::RunManifest>& runs) {
  std::string out =
      "run_id,depth,heads,weight_decay,baseline_id,ablated_id,baseline_ood,ablated_ood,id_hierarchical,"
      "id_sign_matching,id_neg_depth,ood_hierarchical,ood_sign_matching,ood_neg_depth\n";
  for (const auto& m : runs) {
    if (!analysed(m)) continue;
    bool flags[2][3] = {};
    for (const auto& h : m.analysis->heads) {
      auto* f = flags[h.tag == analysis::DatasetTag::ID ? 0 : 1];
      f[0] |= h.is_hierarchical;
      f[1] |= h.is_sign_matching;
      f[2] |= h.is_negative_depth_detector;
    }
    const auto& a = m.analysis->all_heads;
    out += fmt::format("{},{},{},{},{},{},{},{},{:d},{:d},{:d},{:d},{:d},{:d}\n", m.run_id, m.hp.depth, m.hp.heads,
                       num(m.hp.weight_decay), num(a.baseline_id_acc), num(a.ablated_id_acc), num(a.baseline_ood_acc),
                       num(a.ablated_ood_acc), int(flags[0][0]), int(flags[0][1]), int(flags[0][2]), int(flags[1][0]),
                       int(flags[1][1]), int(flags[1][2]));
  }
  return out;
}

json correlation_or_null(const std::vector<double>& x, const std::vector<double>& y, bool spearman) {
  try {
    return stat_json(spearman ? stats::spearman_rho(x, y) : stats::pearson_r(x, y));
  } catch (const std::invalid_argument& e) {
    return {{"undefined", e.what()}};
  }
}

json bundle_f(const std::vector<exp::RunManifest>& runs, const dyck::DatasetBundle& bundle) {
  std::vector<behavior::RunOutcome> outcomes;
  int failed = 0, analysed_n = 0, reached = 0;
  std::map<std::string, int> rule_counts;
  std::vector<analysis::CensusRow> census_rows;
  std::vector<double> delta_id, delta_ood;
  int multi_hier = 0, multi_hier_all_ge_single = 0, first_layer_hier = 0;
  for (const auto& m : runs) {
    if (!m.completed()) {
      ++failed;
      continue;
    }
    outcomes.push_back({m.run_id, m.hp, m.final_id_accuracy, m.final_ood_accuracy});
    reached += m.reached_id_target;
    if (!analysed(m)) continue;
    ++analysed_n;
    ++rule_counts[behavior::to_string(m.analysis->rule.rule)];
    for (const auto& h : m.analysis->heads) {
      census_rows.push_back({m.run_id, h});
      if (h.layer == 0 && h.is_hierarchical) ++first_layer_hier;
    }
    delta_id.push_back(m.analysis->all_heads.delta_id());
    delta_ood.push_back(m.analysis->all_heads.delta_ood());
    if (id_hierarchical_count(m) >= 2 && !m.analysis->single_heads.empty()) {
      ++multi_hier;
      double best = 0.0;
      for (const auto& s : m.analysis->single_heads) best = std::max(best, std::abs(s.delta_ood()));
      multi_hier_all_ge_single += std::abs(m.analysis->all_heads.delta_ood()) >= best;
    }
  }

  const auto rep = behavior::factor_report(outcomes);
  json cells = json::array();
  for (const auto& c : rep.cells) {
    cells.push_back({{"depth", c.depth}, {"heads", c.heads}, {"weight_decay", c.weight_decay}, {"n", c.ood.size()},
                     {"median_ood", c.median}, {"min_ood", c.min}, {"max_ood", c.max}});
  }
  json contrasts = json::array();
  for (const auto& c : rep.contrasts) {
    contrasts.push_back({{"factor", c.factor}, {"context", c.context}, {"level_a", c.level_a},
                         {"level_b", c.level_b}, {"test", stat_json(c.test)}});
  }
  const auto groups = [](const std::vector<behavior::SeedRangeGroup>& gs) {
    json out = json::array();
    for (const auto& g : gs) out.push_back({{"group", g.key}, {"ood", g.ood}, {"range", g.range}});
    return out;
  };
  const auto& s = rep.seeds;
  json seeds = {{"init_seed_groups", groups(s.init_seed_groups)},
                {"shuffle_seed_groups", groups(s.shuffle_seed_groups)},
                {"init_histogram", s.init_histogram},
                {"shuffle_histogram", s.shuffle_histogram},
                {"init_groups_range_at_least_0_1", s.init_groups_range_at_least_0_1},
                {"shuffle_groups_range_at_least_0_1", s.shuffle_groups_range_at_least_0_1},
                {"warnings", s.warnings}};

  const auto census = analysis::summarize_census(census_rows);
  json cross = json::object();
  for (const auto& [from, row] : census.cross_tab) {
    for (const auto& [to, count] : row) cross[analysis::to_string(from)][analysis::to_string(to)] = count;
  }
  const auto frac = [](int a, int b) { return b > 0 ? json(static_cast<double>(a) / b) : json(nullptr); };
  json census_json = {
      {"models_with_id_hierarchical",
       std::count_if(census.models.begin(), census.models.end(), [](const auto& m) { return m.id_hierarchical; })},
      {"frac_models_sign_matching", census.frac_models_sign_matching},
      {"frac_models_negative_depth", census.frac_models_negative_depth},
      {"frac_models_both", census.frac_models_both},
      {"first_layer_hierarchical_heads", first_layer_hier},
      {"id_hierarchical_heads", census.id_hierarchical_heads},
      {"id_hierarchical_not_ood_hierarchical", frac(census.id_hierarchical_not_ood_hierarchical, census.id_hierarchical_heads)},
      {"id_sign_matching_heads", census.id_sign_matching_heads},
      {"id_sign_matching_to_ood_negative_depth",
       frac(census.id_sign_matching_to_ood_negative_depth, census.id_sign_matching_heads)},
      {"cross_tab", cross}};

  int converged = 0;
  const auto drop = mean_abs_id_drop(runs, &converged);
  double mean_did = 0.0, mean_dood = 0.0;
  for (std::size_t i = 0; i < delta_id.size(); ++i) {
    mean_did += delta_id[i] / delta_id.size();
    mean_dood += delta_ood[i] / delta_ood.size();
  }
  json ablation = {{"converged_runs", converged},
                   {"mean_abs_id_drop_converged", opt(drop)},
                   {"mean_delta_id", delta_id.empty() ? json(nullptr) : json(mean_did)},
                   {"mean_delta_ood", delta_ood.empty() ? json(nullptr) : json(mean_dood)},
                   {"spearman_delta_id_vs_delta_ood", correlation_or_null(delta_id, delta_ood, true)},
                   {"pearson_delta_id_vs_delta_ood", correlation_or_null(delta_id, delta_ood, false)},
                   {"models_with_2plus_id_hierarchical_and_single_sweep", multi_hier},
                   {"all_heads_delta_ood_at_least_best_single", multi_hier_all_ge_single}};

  return {{"population",
           {{"runs", runs.size()}, {"failed", failed}, {"analysed", analysed_n}, {"reached_id_target", reached}}},
          {"first_symbol_close_fraction",
           bundle.test_ood.empty() ? json(nullptr) : json(behavior::first_symbol_close_fraction(bundle.test_ood))},
          {"rule_counts", rule_counts},
          {"cells", cells},
          {"contrasts", contrasts},
          {"seed_ranges", seeds},
          {"census", census_json},
          {"hierarchical_association", comparison_json(hierarchical_comparison(runs))},
          {"ablation", ablation}};
}

}  // namespace

HierarchicalComparison hierarchical_comparison(const std::vector<exp::RunManifest>& runs) {
  std::vector<double> with, without;
  for (const auto& m : runs) {
    if (!analysed(m) || m.hp.depth < 2) continue;
    (has_id_hierarchical(m) ? with : without).push_back(m.final_ood_accuracy);
  }
  HierarchicalComparison c;
  c.with_n = static_cast<int>(with.size());
  c.without_n = static_cast<int>(without.size());
  if (!with.empty()) c.with_median = stats::median(with);
  if (!without.empty()) c.without_median = stats::median(without);
  if (!with.empty() && !without.empty()) c.test = stats::mann_whitney_u(with, without);
  return c;
}

std::optional<double> mean_abs_id_drop(const std::vector<exp::RunManifest>& runs, int* count) {
  double sum = 0.0;
  int n = 0;
  for (const auto& m : runs) {
    if (!analysed(m) || !m.reached_id_target) continue;
    sum += std::abs(m.analysis->all_heads.baseline_id_acc - m.analysis->all_heads.ablated_id_acc);
    ++n;
  }
  if (count) *count = n;
  if (n == 0) return std::nullopt;
  return sum / n;
}

void write_report(const exp::Layout& layout, const exp::LogFn& log) {
  const auto bundle = read_dataset(layout.data_dir());
  const auto runs = exp::load_manifests(layout);
  const auto dir = layout.report_dir();
  write_file_atomic(dir / kBundleFiles[0], bundle_a(layout, runs, bundle));
  write_file_atomic(dir / kBundleFiles[1], bundle_b(runs));
  write_file_atomic(dir / kBundleFiles[2], bundle_c(layout, runs).dump(1) + "\n");
  write_file_atomic(dir / kBundleFiles[3], bundle_d(runs).dump(1) + "\n");
  write_file_atomic(dir / kBundleFiles[4], bundle_e(runs));
  write_file_atomic(dir / kBundleFiles[5], bundle_f(runs, bundle).dump(1) + "\n");
  if (log) log(fmt::format("report: {} runs -> {}", runs.size(), dir.string()));
}

}  // namespace ambl::report
