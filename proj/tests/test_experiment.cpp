#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "ambl/checkpoint.hpp"
#include "ambl/dataset_io.hpp"
#include "ambl/experiment.hpp"
#include "ambl/report.hpp"
#include "doctest.h"

using namespace ambl;
using namespace ambl::exp;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("ambl_exp_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

SweepConfig tiny(const fs::path& out) {
  SweepConfig c;
  c.depths = {1, 2};
  c.widths = {2};
  c.weight_decays = {0.01};
  c.init_seeds = 2;
  c.shuffle_seeds = 1;
  c.seed = 3;
  c.data.seed = 3;
  c.data.train_unique = 64;
  c.data.val_size = 20;
  c.data.ood_size = 20;
  c.train.total_examples = 128;
  c.train.eval_every = 64;
  c.out = out;
  return c;
}

// Every file under root except run timing, keyed by relative path.
std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    auto text = read_file(e.path());
    if (e.path().filename() == "manifest.json") {
      auto j = nlohmann::json::parse(text);
      j.erase("wall_clock_seconds");
      text = j.dump();
    }
    out[fs::relative(e.path(), root).string()] = text;
  }
  return out;
}

}  // namespace

TEST_SUITE("experiment") {
  TEST_CASE("planned run counts") {
    CHECK(preset("full").planned_runs() == 270);
    CHECK(plan_runs(preset("full")).size() == 270);
    CHECK(preset("desk").planned_runs() == 18);
    CHECK(plan_runs(preset("desk")).size() == 18);
    CHECK_THROWS(preset("nope"));
    SweepConfig bad;
    bad.depths.clear();
    CHECK_THROWS(bad.validate());
    const auto plan = plan_runs(preset("desk"));
    CHECK(plan.front().depth == 1);
    CHECK(plan.back().depth == 3);
    CHECK(plan[0].init_seed == init_seed_for(0, 0));
    CHECK(plan[1].init_seed == init_seed_for(0, 1));
    CHECK(plan[0].init_seed != plan[1].init_seed);
    CHECK(plan[0].shuffle_seed == shuffle_seed_for(0, 0));
  }

  TEST_CASE("run ids are stable and input-sensitive") {
    model::HyperParams hp;
    const train::TrainConfig tc;
    const auto id = compute_run_id(hp, "abc", tc);
    CHECK(id.size() == 16);
    CHECK(id == compute_run_id(hp, "abc", tc));
    CHECK(id != compute_run_id(hp, "abd", tc));
    auto hp2 = hp;
    hp2.init_seed = 1;
    CHECK(id != compute_run_id(hp2, "abc", tc));
    auto tc2 = tc;
    tc2.total_examples += 1;
    CHECK(id != compute_run_id(hp, "abc", tc2));
    CHECK(train_config_from_json(train_config_to_json(tc2)) == tc2);
  }

  TEST_CASE("gen-data is deterministic") {
    const auto a = scratch("gd_a"), b = scratch("gd_b");
    auto cfg = tiny(a).data;
    CHECK(gen_data(cfg, a) == gen_data(cfg, b));
    std::ifstream ood(a / "test_ood.tsv");
    std::string line;
    int lines = 0;
    while (std::getline(ood, line)) ++lines;
    CHECK(lines == 20);
    fs::remove_all(a);
    fs::remove_all(b);
  }

  TEST_CASE("sweep, resume, analyze and report") {
    const auto root = scratch("sweep");
    const auto cfg = tiny(root);
    const Layout layout{root};
    gen_data(cfg.data, layout.data_dir());
    const auto s1 = run_sweep(cfg);
    CHECK(s1.planned == 4);
    CHECK(s1.trained == 4);
    CHECK(s1.failed == 0);

    const auto manifests = load_manifests(layout);
    REQUIRE(manifests.size() == 4);
    for (const auto& m : manifests) {
      CHECK(m.completed());
      CHECK(m.checkpoints.size() == 5);
      for (const auto& c : m.checkpoints) CHECK(fs::exists(layout.run_dir(m.run_id) / c.path));
      CHECK(fs::exists(layout.run_dir(m.run_id) / m.metrics_path));
      CHECK(read_metrics(layout, m).back().examples_seen == 128);
      const auto back = manifest_from_json(to_json(m));
      CHECK(to_json(back) == to_json(m));
      const auto last = ckpt::load_checkpoint(layout.run_dir(m.run_id) / m.checkpoints.back().path);
      CHECK(last.model.hp == m.hp);
      CHECK(last.metadata["examples_seen"] == 128);
    }

    const auto before = snapshot(root);
    const auto s2 = run_sweep(cfg);
    CHECK(s2.skipped == 4);
    CHECK(s2.trained == 0);
    CHECK(snapshot(root) == before);

    SUBCASE("parallel workers produce identical runs") {
      const auto root2 = scratch("sweep_jobs");
      auto cfg2 = tiny(root2);
      cfg2.jobs = 3;
      gen_data(cfg2.data, Layout{root2}.data_dir());
      run_sweep(cfg2);
      CHECK(snapshot(root2) == before);
      fs::remove_all(root2);
    }

    SUBCASE("analysis and report are repeatable") {
      AnalyzeOptions opts;
      opts.single_head = true;
      const auto a1 = run_analyze(layout, opts);
      CHECK(a1.analysed == 4);
      CHECK(a1.flagged == 0);
      report::write_report(layout);
      const auto first = snapshot(root);
      run_analyze(layout, opts);
      report::write_report(layout);
      CHECK(snapshot(root) == first);

      for (const auto& m : load_manifests(layout)) {
        REQUIRE(m.analysis);
        CHECK(m.analysis->error.empty());
        CHECK(m.analysis->heads.size() == static_cast<std::size_t>(2 * m.hp.depth * m.hp.heads));
        CHECK(m.analysis->single_heads.size() == static_cast<std::size_t>(m.hp.depth * m.hp.heads));
      }
      for (const char* f : {"census.csv", "ablation.jsonl", "rules.jsonl"}) CHECK(fs::exists(layout.analysis_dir() / f));
      for (const char* f : report::kBundleFiles) CHECK(fs::exists(layout.report_dir() / f));
      const auto stats = nlohmann::json::parse(read_file(layout.report_dir() / "f_statistics.json"));
      CHECK(stats.contains("contrasts"));
      const auto matrix = read_file(layout.report_dir() / "a_ood_probability_matrix.csv");
      CHECK(std::count(matrix.begin(), matrix.end(), '\n') == 5);
    }

    SUBCASE("a missing checkpoint is flagged and analysis continues") {
      const auto victim = manifests[1];
      fs::remove(layout.run_dir(victim.run_id) / victim.checkpoints.back().path);
      const auto a = run_analyze(layout, AnalyzeOptions{});
      CHECK(a.flagged == 1);
      CHECK(a.analysed == 3);
      const auto m = read_manifest(layout, victim.run_id);
      REQUIRE(m);
      REQUIRE(m->analysis);
      CHECK(!m->analysis->error.empty());
    }
    fs::remove_all(root);
  }

  TEST_CASE("empty population gives valid empty bundles") {
    const auto root = scratch("empty");
    const Layout layout{root};
    gen_data(tiny(root).data, layout.data_dir());
    fs::create_directories(layout.runs_dir());
    run_analyze(layout, AnalyzeOptions{});
    report::write_report(layout);
    for (const char* f : report::kBundleFiles) {
      CAPTURE(f);
      const auto text = read_file(layout.report_dir() / f);
      if (std::string_view(f).ends_with(".json")) CHECK_NOTHROW((void)nlohmann::json::parse(text));
      else CHECK(!text.empty());  // header row
    }
    fs::remove_all(root);
  }

  TEST_CASE("sweep needs a dataset and a feasible budget") {
    const auto root = scratch("nodata");
    auto cfg = tiny(root);
    CHECK_THROWS(run_sweep(cfg));
    gen_data(cfg.data, Layout{root}.data_dir());
    cfg.train.total_examples = 64 * 5 + 1;
    CHECK_THROWS(run_sweep(cfg));
    fs::remove_all(root);
  }
}
