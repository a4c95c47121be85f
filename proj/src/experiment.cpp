#include "ambl/experiment.hpp"

#include <fmt/format.h>
#include <omp.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>

#include "ambl/checkpoint.hpp"
#include "ambl/dataset_io.hpp"
#include "ambl/report.hpp"
#include "ambl/rng.hpp"

namespace ambl::exp {

using nlohmann::json;

void SweepConfig::validate() const {
  if (depths.empty() || widths.empty() || weight_decays.empty()) throw std::invalid_argument("sweep: empty grid axis");
  if (init_seeds < 1 || shuffle_seeds < 1) throw std::invalid_argument("sweep: seed counts must be at least 1");
  if (jobs < 1) throw std::invalid_argument("sweep: --jobs must be at least 1");
  for (int w : widths) {
    if (w < 1 || hidden % w != 0) throw std::invalid_argument(fmt::format("sweep: width {} does not divide {}", w, hidden));
  }
  for (int d : depths) {
    if (d < 1) throw std::invalid_argument("sweep: depth must be at least 1");
  }
  for (double wd : weight_decays) {
    if (!(wd >= 0.0)) throw std::invalid_argument("sweep: weight decay must be non-negative");
  }
  data.validate();
  train.validate();
}

std::size_t SweepConfig::planned_runs() const {
  return depths.size() * widths.size() * weight_decays.size() * static_cast<std::size_t>(init_seeds) *
         static_cast<std::size_t>(shuffle_seeds);
}

SweepConfig preset(std::string_view name) {
  SweepConfig c;
  if (name == "desk") return c;
  if (name == "full") {
    c.widths = {2, 4};
    c.weight_decays = {0.0, 0.001, 0.01};
    c.init_seeds = 5;
    c.shuffle_seeds = 3;
    c.data.train_unique = 200'000;
    c.train.total_examples = 1'000'000;
    return c;
  }
  throw std::invalid_argument("unknown preset '" + std::string(name) + "' (expected desk or full)");
}

uint64_t init_seed_for(uint64_t top_seed, int index) { return derive_seed(top_seed, 0x1000 + index); }
uint64_t shuffle_seed_for(uint64_t top_seed, int index) { return derive_seed(top_seed, 0x2000 + index); }

std::vector<model::HyperParams> plan_runs(const SweepConfig& cfg) {
  std::vector<model::HyperParams> out;
  for (int d : cfg.depths) {
    for (int w : cfg.widths) {
      for (double wd : cfg.weight_decays) {
        for (int i = 0; i < cfg.init_seeds; ++i) {
          for (int s = 0; s < cfg.shuffle_seeds; ++s) {
            model::HyperParams hp;
            hp.depth = d;
            hp.heads = w;
            hp.hidden = cfg.hidden;
            hp.weight_decay = wd;
            hp.learning_rate = cfg.learning_rate;
            hp.init_seed = init_seed_for(cfg.seed, i);
            hp.shuffle_seed = shuffle_seed_for(cfg.seed, s);
            out.push_back(hp);
          }
        }
      }
    }
  }
  return out;
}

json train_config_to_json(const train::TrainConfig& c) {
  return {{"batch_size", c.batch_size}, {"total_examples", c.total_examples}, {"eval_every", c.eval_every},
          {"checkpoints", c.checkpoints}, {"beta1", c.beta1},                   {"beta2", c.beta2},
          {"epsilon", c.epsilon}};
}

train::TrainConfig train_config_from_json(const json& j) {
  train::TrainConfig c;
  c.batch_size = j.at("batch_size").get<int>();
  c.total_examples = j.at("total_examples").get<long>();
  c.eval_every = j.at("eval_every").get<long>();
  c.checkpoints = j.at("checkpoints").get<int>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.epsilon = j.at("epsilon").get<double>();
  return c;
}

std::string compute_run_id(const model::HyperParams& hp, const std::string& dataset_hash, const train::TrainConfig& cfg) {
  const json key = {{"hyperparams", ckpt::hyperparams_to_json(hp)},
                    {"dataset_hash", dataset_hash},
                    {"train_config", train_config_to_json(cfg)}};
  return sha256_hex(key.dump()).substr(0, 16);
}

// --- manifest JSON -------------------------------------------------------------

namespace {

json opt_long(const std::optional<long>& v) { return v ? json(*v) : json(nullptr); }
std::optional<long> get_opt_long(const json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<long>();
}

json head_to_json(const analysis::HeadClassification& c) {
  return {{"layer", c.layer},
          {"head", c.head},
          {"dataset_tag", analysis::to_string(c.tag)},
          {"hierarchical", c.is_hierarchical},
          {"neg_depth", c.is_negative_depth_detector},
          {"sign_matching", c.is_sign_matching},
          {"mixed_depth_count", c.mixed_depth_count},
          {"favors_negative", c.favors_negative},
          {"favors_non_negative", c.favors_non_negative},
          {"sign_matched", c.sign_matched},
          {"track_fraction", c.track_fraction()}};
}

analysis::HeadClassification head_from_json(const json& j) {
  analysis::HeadClassification c;
  c.layer = j.at("layer").get<int>();
  c.head = j.at("head").get<int>();
  c.tag = j.at("dataset_tag").get<std::string>() == "ID" ? analysis::DatasetTag::ID : analysis::DatasetTag::OOD;
  c.is_hierarchical = j.at("hierarchical").get<bool>();
  c.is_negative_depth_detector = j.at("neg_depth").get<bool>();
  c.is_sign_matching = j.at("sign_matching").get<bool>();
  c.mixed_depth_count = j.at("mixed_depth_count").get<int>();
  c.favors_negative = j.at("favors_negative").get<int>();
  c.favors_non_negative = j.at("favors_non_negative").get<int>();
  c.sign_matched = j.at("sign_matched").get<int>();
  return c;
}

behavior::Rule rule_from_string(const std::string& s) {
  for (auto r : {behavior::Rule::EqualCount, behavior::Rule::Nested, behavior::Rule::FirstSymbol, behavior::Rule::Other}) {
    if (behavior::to_string(r) == s) return r;
  }
  throw std::invalid_argument("unknown rule " + s);
}

train::OodRule ood_rule_from_string(const std::string& s) {
  for (auto r : {train::OodRule::None, train::OodRule::EqualCountConverged, train::OodRule::NestedConverged}) {
    if (train::to_string(r) == s) return r;
  }
  throw std::invalid_argument("unknown OOD rule " + s);
}

json analysis_to_json(const AnalysisBlock& a) {
  if (!a.error.empty()) return {{"error", a.error}};
  json heads = json::array();
  for (const auto& h : a.heads) heads.push_back(head_to_json(h));
  json single = json::array();
  for (const auto& r : a.single_heads) single.push_back(ablation::to_json(r));
  return {{"error", nullptr},
          {"rule_assignment",
           {{"rule", behavior::to_string(a.rule.rule)},
            {"ood_accuracy", a.rule.ood_accuracy},
            {"first_symbol_match_rate", a.rule.first_symbol_match_rate}}},
          {"head_census", heads},
          {"ablation_all_heads", ablation::to_json(a.all_heads)},
          {"ablation_single_heads", single},
          {"max_single_index", a.max_single_index ? json(*a.max_single_index) : json(nullptr)}};
}

AnalysisBlock analysis_from_json(const json& j, const std::string& run_id) {
  AnalysisBlock a;
  if (!j.at("error").is_null()) {
    a.error = j.at("error").get<std::string>();
    return a;
  }
  const auto& r = j.at("rule_assignment");
  a.rule.run_id = run_id;
  a.rule.rule = rule_from_string(r.at("rule").get<std::string>());
  a.rule.ood_accuracy = r.at("ood_accuracy").get<double>();
  a.rule.first_symbol_match_rate = r.at("first_symbol_match_rate").get<double>();
  for (const auto& h : j.at("head_census")) a.heads.push_back(head_from_json(h));
  a.all_heads = ablation::ablation_result_from_json(j.at("ablation_all_heads"));
  for (const auto& s : j.at("ablation_single_heads")) a.single_heads.push_back(ablation::ablation_result_from_json(s));
  if (!j.at("max_single_index").is_null()) a.max_single_index = j.at("max_single_index").get<std::size_t>();
  return a;
}

}  // namespace

json to_json(const RunManifest& m) {
  json cps = json::array();
  for (const auto& c : m.checkpoints) {
    cps.push_back({{"path", c.path},
                   {"examples_seen", c.examples_seen},
                   {"id_val_accuracy", c.id_val_accuracy},
                   {"ood_accuracy", c.ood_accuracy}});
  }
  return {{"format", "ambl-run-manifest-v1"},
          {"run_id", m.run_id},
          {"status", m.status},
          {"error", m.error.empty() ? json(nullptr) : json(m.error)},
          {"hyperparams", ckpt::hyperparams_to_json(m.hp)},
          {"dataset_hash", m.dataset_hash},
          {"train_config", train_config_to_json(m.train)},
          {"final", {{"id_val_accuracy", m.final_id_accuracy}, {"ood_accuracy", m.final_ood_accuracy}}},
          {"reached_id_target", m.reached_id_target},
          {"convergence",
           {{"id_converged_at", opt_long(m.convergence.id_converged_at)},
            {"ood_converged_at", opt_long(m.convergence.ood_converged_at)},
            {"ood_rule", train::to_string(m.convergence.ood_rule)}}},
          {"metrics_path", m.metrics_path},
          {"checkpoints", cps},
          {"wall_clock_seconds", m.wall_clock_seconds},
          {"analysis", m.analysis ? analysis_to_json(*m.analysis) : json(nullptr)}};
}

RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  m.run_id = j.at("run_id").get<std::string>();
  m.status = j.at("status").get<std::string>();
  if (!j.at("error").is_null()) m.error = j.at("error").get<std::string>();
  m.hp = ckpt::hyperparams_from_json(j.at("hyperparams"));
  m.dataset_hash = j.at("dataset_hash").get<std::string>();
  m.train = train_config_from_json(j.at("train_config"));
  m.final_id_accuracy = j.at("final").at("id_val_accuracy").get<double>();
  m.final_ood_accuracy = j.at("final").at("ood_accuracy").get<double>();
  m.reached_id_target = j.at("reached_id_target").get<bool>();
  const auto& c = j.at("convergence");
  m.convergence.id_converged_at = get_opt_long(c.at("id_converged_at"));
  m.convergence.ood_converged_at = get_opt_long(c.at("ood_converged_at"));
  m.convergence.ood_rule = ood_rule_from_string(c.at("ood_rule").get<std::string>());
  m.metrics_path = j.at("metrics_path").get<std::string>();
  for (const auto& e : j.at("checkpoints")) {
    m.checkpoints.push_back({e.at("path").get<std::string>(), e.at("examples_seen").get<long>(),
                             e.at("id_val_accuracy").get<double>(), e.at("ood_accuracy").get<double>()});
  }
  m.wall_clock_seconds = j.at("wall_clock_seconds").get<double>();
  if (!j.at("analysis").is_null()) m.analysis = analysis_from_json(j.at("analysis"), m.run_id);
  return m;
}

void write_manifest(const Layout& layout, const RunManifest& m) {
  write_file_atomic(layout.run_dir(m.run_id) / "manifest.json", to_json(m).dump(2) + "\n");
}

std::optional<RunManifest> read_manifest(const Layout& layout, const std::string& run_id) {
  const auto path = layout.run_dir(run_id) / "manifest.json";
  if (!fs::exists(path)) return std::nullopt;
  return manifest_from_json(json::parse(read_file(path)));
}

std::vector<RunManifest> load_manifests(const Layout& layout) {
  std::vector<RunManifest> out;
  if (!fs::exists(layout.runs_dir())) return out;
  for (const auto& entry : fs::directory_iterator(layout.runs_dir())) {
    const auto path = entry.path() / "manifest.json";
    if (entry.is_directory() && fs::exists(path)) out.push_back(manifest_from_json(json::parse(read_file(path))));
  }
  std::sort(out.begin(), out.end(), [](const RunManifest& a, const RunManifest& b) {
    return std::tie(a.hp.depth, a.hp.heads, a.hp.weight_decay, a.hp.init_seed, a.hp.shuffle_seed, a.run_id) <
           std::tie(b.hp.depth, b.hp.heads, b.hp.weight_decay, b.hp.init_seed, b.hp.shuffle_seed, b.run_id);
  });
  return out;
}

train::MetricsHistory read_metrics(const Layout& layout, const RunManifest& m) {
  train::MetricsHistory h;
  const std::string text = read_file(layout.run_dir(m.run_id) / m.metrics_path);
  std::size_t pos = 0;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    const auto line = text.substr(pos, nl == std::string::npos ? std::string::npos : nl - pos);
    pos = nl == std::string::npos ? text.size() : nl + 1;
    if (line.empty()) continue;
    const auto j = json::parse(line);
    h.push_back({j.at("examples_seen").get<long>(), j.at("id_val_accuracy").get<double>(),
                 j.at("ood_accuracy").get<double>(), j.at("mean_loss").get<double>()});
  }
  return h;
}

// --- commands -----------------------------------------------------------------

namespace {

void emit(const LogFn& log, const std::string& msg) {
  if (log) log(msg);
}

std::string describe(const model::HyperParams& hp) {
  return fmt::format("D={} W={} wd={} init={:016x} shuffle={:016x}", hp.depth, hp.heads, hp.weight_decay, hp.init_seed,
                     hp.shuffle_seed);
}

RunManifest train_one(const Layout& layout, const model::HyperParams& hp, const dyck::DatasetBundle& bundle,
                      const std::string& dataset_hash, const train::TrainConfig& tc, const std::string& run_id,
                      const LogFn& log) {
  RunManifest m;
  m.run_id = run_id;
  m.hp = hp;
  m.dataset_hash = dataset_hash;
  m.train = tc;
  const auto dir = layout.run_dir(run_id);
  fs::create_directories(dir);
  const auto start = std::chrono::steady_clock::now();
  try {
    const auto result = train::train_run(hp, bundle, tc, [&](const train::MetricsRecord& r) {
      emit(log, fmt::format("[{}] {:>8} examples  id={:.4f} ood={:.4f} loss={:.4f}", run_id, r.examples_seen,
                            r.id_val_accuracy, r.ood_accuracy, r.mean_loss));
    });
    std::string lines;
    for (const auto& r : result.history) {
      lines += json{{"examples_seen", r.examples_seen},
                    {"id_val_accuracy", r.id_val_accuracy},
                    {"ood_accuracy", r.ood_accuracy},
                    {"mean_loss", r.mean_loss}}
                   .dump();
      lines += '\n';
    }
    write_file_atomic(dir / m.metrics_path, lines);
    for (std::size_t k = 0; k < result.checkpoints.size(); ++k) {
      const auto& cp = result.checkpoints[k];
      const std::string name = fmt::format("ckpt_{}.ambl", k + 1);
      const json meta = {{"run_id", run_id},
                         {"examples_seen", cp.examples_seen},
                         {"id_val_accuracy", cp.id_val_accuracy},
                         {"ood_accuracy", cp.ood_accuracy},
                         {"rng",
                          {{"data_seed", bundle.generation_seed},
                           {"init_seed", hp.init_seed},
                           {"shuffle_seed", hp.shuffle_seed},
                           {"epoch", cp.epoch},
                           {"epoch_offset", cp.epoch_offset}}}};
      ckpt::save_checkpoint(cp.model, meta, dir / name);
      m.checkpoints.push_back({name, cp.examples_seen, cp.id_val_accuracy, cp.ood_accuracy});
    }
    const auto& last = result.history.back();
    m.final_id_accuracy = last.id_val_accuracy;
    m.final_ood_accuracy = last.ood_accuracy;
    m.reached_id_target = last.id_val_accuracy >= 0.99;
    m.convergence = train::convergence_flags(result.history);
  } catch (const std::exception& e) {
    m.status = "failed";
    m.error = e.what();
    m.checkpoints.clear();
    m.metrics_path.clear();
    // A partial metrics file would not match the manifest; drop it.
    fs::remove(dir / "metrics.jsonl");
  }
  m.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_manifest(layout, m);
  return m;
}

}  // namespace

std::string gen_data(const dyck::DatasetConfig& cfg, const fs::path& dir, const LogFn& log) {
  const auto bundle = dyck::build_datasets(cfg);
  const auto hash = write_dataset(bundle, dir);
  emit(log, fmt::format("dataset seed={} train={} val_id={} test_ood={} hash={}", cfg.seed, bundle.train.size(),
                        bundle.val_id.size(), bundle.test_ood.size(), hash));
  return hash;
}

SweepSummary run_sweep(const SweepConfig& cfg, const LogFn& log) {
  cfg.validate();
  const Layout layout{cfg.out};
  std::string hash;
  const auto bundle = read_dataset(layout.data_dir(), &hash);
  const long unique = static_cast<long>(bundle.train.size());
  if (cfg.train.total_examples > unique * dyck::kEpochs) {
    throw std::invalid_argument(fmt::format("sweep: budget {} exceeds {} passes over {} training examples",
                                            cfg.train.total_examples, dyck::kEpochs, unique));
  }

  SweepSummary summary;
  const auto plan = plan_runs(cfg);
  summary.planned = plan.size();
  std::vector<std::pair<model::HyperParams, std::string>> pending;
  for (const auto& hp : plan) {
    const auto id = compute_run_id(hp, hash, cfg.train);
    summary.run_ids.push_back(id);
    const auto existing = read_manifest(layout, id);
    if (existing && existing->completed()) {
      ++summary.skipped;
      continue;
    }
    pending.emplace_back(hp, id);
  }
  // Deeper models first for better packing; output does not depend on order.
  std::stable_sort(pending.begin(), pending.end(),
                   [](const auto& a, const auto& b) { return a.first.depth > b.first.depth; });
  emit(log, fmt::format("sweep: {} planned, {} already complete, {} to train", summary.planned, summary.skipped,
                        pending.size()));

  const int workers = std::max(1, std::min<int>(cfg.jobs, static_cast<int>(pending.size())));
  const int hw = std::max(1, static_cast<int>(std::thread::hardware_concurrency()));
  const int inner = std::max(1, hw / workers);
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  auto worker = [&] {
    omp_set_num_threads(inner);
    for (std::size_t i = next++; i < pending.size(); i = next++) {
      const auto& [hp, id] = pending[i];
      emit(log, fmt::format("[{}] start {}", id, describe(hp)));
      const auto m = train_one(layout, hp, bundle, hash, cfg.train, id, log);
      std::lock_guard lock(mu);
      if (m.completed()) {
        ++summary.trained;
        emit(log, fmt::format("[{}] done id={:.4f} ood={:.4f} ({:.1f}s)", id, m.final_id_accuracy, m.final_ood_accuracy,
                              m.wall_clock_seconds));
      } else {
        ++summary.failed;
        emit(log, fmt::format("[{}] FAILED: {}", id, m.error));
      }
    }
  };
  std::vector<std::thread> threads;
  for (int t = 0; t < workers; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  return summary;
}

AnalyzeSummary run_analyze(const Layout& layout, const AnalyzeOptions& opts, const LogFn& log) {
  const auto bundle = read_dataset(layout.data_dir());
  std::vector<dyck::ParenSequence> id_seqs, ood_seqs;
  for (const auto& ex : bundle.val_id) id_seqs.push_back(ex.seq);
  for (const auto& ex : bundle.test_ood) ood_seqs.push_back(ex.seq);

  AnalyzeSummary summary;
  std::vector<analysis::CensusRow> census;
  std::string ablation_lines, rule_lines;
  for (auto& m : load_manifests(layout)) {
    if (!m.completed()) continue;
    AnalysisBlock a;
    try {
      if (m.checkpoints.empty()) throw std::runtime_error("manifest lists no checkpoints");
      const auto loaded = ckpt::load_checkpoint(layout.run_dir(m.run_id) / m.checkpoints.back().path);
      const auto& model = loaded.model;
      if (!(model.hp == m.hp)) throw std::runtime_error("checkpoint hyperparameters differ from the manifest");
      a.rule = behavior::assign_rule(model, bundle.test_ood, m.run_id);
      const auto capture = analysis::model_capture(model);
      a.heads = analysis::classify_heads(model.hp.depth, model.hp.heads, capture, id_seqs, analysis::DatasetTag::ID,
                                         opts.threshold);
      const auto ood = analysis::classify_heads(model.hp.depth, model.hp.heads, capture, ood_seqs,
                                                analysis::DatasetTag::OOD, opts.threshold);
      a.heads.insert(a.heads.end(), ood.begin(), ood.end());
      a.all_heads = ablation::ablation_experiment(model, bundle, ablation::Scope::all_heads(), m.run_id);
      if (opts.single_head) {
        auto sweep = ablation::single_head_sweep(model, bundle, m.run_id);
        a.single_heads = std::move(sweep.results);
        a.max_single_index = sweep.max_delta_ood_index;
      }
      ++summary.analysed;
      for (const auto& h : a.heads) census.push_back({m.run_id, h});
      ablation_lines += ablation::to_json(a.all_heads).dump() + "\n";
      for (const auto& r : a.single_heads) ablation_lines += ablation::to_json(r).dump() + "\n";
      rule_lines += json{{"run_id", m.run_id},
                         {"rule", behavior::to_string(a.rule.rule)},
                         {"ood_accuracy", a.rule.ood_accuracy},
                         {"first_symbol_match_rate", a.rule.first_symbol_match_rate}}
                        .dump() +
                    "\n";
      emit(log, fmt::format("[{}] analysed: rule={} ablated id {:.4f}->{:.4f} ood {:.4f}->{:.4f}", m.run_id,
                            behavior::to_string(a.rule.rule), a.all_heads.baseline_id_acc, a.all_heads.ablated_id_acc,
                            a.all_heads.baseline_ood_acc, a.all_heads.ablated_ood_acc));
    } catch (const std::exception& e) {
      a = AnalysisBlock{};
      a.error = e.what();
      ++summary.flagged;
      emit(log, fmt::format("[{}] analysis flagged: {}", m.run_id, a.error));
    }
    m.analysis = std::move(a);
    write_manifest(layout, m);
  }
  write_file_atomic(layout.analysis_dir() / "census.csv", analysis::census_csv(census));
  write_file_atomic(layout.analysis_dir() / "ablation.jsonl", ablation_lines);
  write_file_atomic(layout.analysis_dir() / "rules.jsonl", rule_lines);
  return summary;
}

void run_pipeline(const SweepConfig& cfg, const AnalyzeOptions& opts, const LogFn& log) {
  const Layout layout{cfg.out};
  dyck::DatasetConfig data = cfg.data;
  data.seed = cfg.seed;
  if (!fs::exists(layout.data_dir() / "dataset.json")) gen_data(data, layout.data_dir(), log);
  run_sweep(cfg, log);
  run_analyze(layout, opts, log);
  report::write_report(layout, log);
}

}  // namespace ambl::exp
