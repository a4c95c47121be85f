#include <omp.h>

#include <cmath>

#include "ambl/checkpoint.hpp"
#include "ambl/trainer.hpp"
#include "doctest.h"

using namespace ambl;
using namespace ambl::train;

namespace {

model::HyperParams hp1(uint64_t seed = 1) {
  model::HyperParams hp;
  hp.depth = 1;
  hp.heads = 2;
  hp.init_seed = seed;
  hp.shuffle_seed = seed + 100;
  return hp;
}

std::vector<Tensor<float>> zero_grads(const model::ModelRecord& m) {
  std::vector<Tensor<float>> g;
  for (const auto& p : m.params()) g.emplace_back(p.tensor->shape());
  return g;
}

const dyck::DatasetBundle& tiny_bundle() {
  static const dyck::DatasetBundle b = [] {
    dyck::DatasetConfig cfg;
    cfg.seed = 21;
    cfg.train_unique = 256;
    cfg.val_size = 64;
    cfg.ood_size = 32;
    return dyck::build_datasets(cfg);
  }();
  return b;
}

MetricsHistory history_of(const std::vector<std::pair<double, double>>& id_ood, long step = 10'000) {
  MetricsHistory h;
  for (std::size_t i = 0; i < id_ood.size(); ++i) h.push_back({static_cast<long>(i + 1) * step, id_ood[i].first, id_ood[i].second, 0.0});
  return h;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("adamw: zero gradient without decay is a fixed point") {
    auto m = model::init_model(hp1());
    const auto before = m;
    auto st = make_adam_state(m);
    for (int i = 0; i < 3; ++i) adamw_step(m, zero_grads(m), st, 1e-4, 0.0, TrainConfig{});
    CHECK(m == before);
    CHECK(st.step == 3);
  }

  TEST_CASE("adamw: zero gradient with decay scales decayed tensors by 1 - lr*wd") {
    auto m = model::init_model(hp1());
    const auto before = m;
    auto st = make_adam_state(m);
    adamw_step(m, zero_grads(m), st, 1e-4, 0.01, TrainConfig{});
    const auto a = before.params();
    const auto b = m.params();
    const float factor = static_cast<float>(1.0 - 1e-4 * 0.01);
    CHECK(factor == 0.999999f);
    for (std::size_t i = 0; i < a.size(); ++i) {
      CAPTURE(a[i].name);
      for (std::size_t j = 0; j < a[i].tensor->numel(); ++j) {
        const float expect = a[i].decay ? (*a[i].tensor)[j] * factor : (*a[i].tensor)[j];
        REQUIRE((*b[i].tensor)[j] == expect);
      }
    }
  }

  TEST_CASE("adamw: constant gradient moves each coordinate by about lr per step") {
    auto m = model::init_model(hp1());
    auto st = make_adam_state(m);
    auto g = zero_grads(m);
    for (auto& t : g) std::fill(t.values().begin(), t.values().end(), 0.37f);
    for (int i = 0; i < 200; ++i) adamw_step(m, g, st, 1e-4, 0.0, TrainConfig{});
    const float before = m.head_w[0];
    adamw_step(m, g, st, 1e-4, 0.0, TrainConfig{});
    CHECK(std::abs((before - m.head_w[0]) - 1e-4f) < 1e-6f);
  }

  TEST_CASE("adamw: invalid inputs") {
    auto m = model::init_model(hp1());
    auto st = make_adam_state(m);
    auto g = zero_grads(m);
    g[3][0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_THROWS_AS(adamw_step(m, g, st, 1e-4, 0.0, TrainConfig{}), DivergenceError);
    g.pop_back();
    CHECK_THROWS_AS(adamw_step(m, g, st, 1e-4, 0.0, TrainConfig{}), std::invalid_argument);
    TrainConfig bad;
    bad.batch_size = 0;
    CHECK_THROWS(bad.validate());
    bad = TrainConfig{};
    bad.checkpoints = 0;
    CHECK_THROWS(bad.validate());
  }

  TEST_CASE("overfit probe: 32 examples reach loss below 0.01 within 2000 steps") {
    const auto& b = tiny_bundle();
    std::vector<const dyck::Example*> batch;
    for (int i = 0; i < 32; ++i) batch.push_back(&b.train[i]);
    auto hp = hp1(4);
    auto m = model::init_model(hp);
    auto st = make_adam_state(m);
    std::vector<Tensor<float>> grads;
    float loss = 1.0f;
    int steps = 0;
    for (; steps < 2000 && loss >= 0.01f; ++steps) {
      loss = batch_gradients(m, batch, grads);
      adamw_step(m, grads, st, hp.learning_rate, 0.0, TrainConfig{});
    }
    MESSAGE("overfit probe: loss " << loss << " after " << steps << " steps");
    CHECK(loss < 0.01f);
  }

  TEST_CASE("batch gradients do not depend on the thread count") {
    const auto& b = tiny_bundle();
    std::vector<const dyck::Example*> batch;
    for (int i = 0; i < 64; ++i) batch.push_back(&b.train[i]);
    const auto m = model::init_model(hp1(5));
    std::vector<Tensor<float>> g1, g4;
    const int saved = omp_get_max_threads();
    omp_set_num_threads(1);
    const float l1 = batch_gradients(m, batch, g1);
    omp_set_num_threads(4);
    const float l4 = batch_gradients(m, batch, g4);
    omp_set_num_threads(saved);
    CHECK(l1 == l4);
    CHECK(g1 == g4);
  }

  TEST_CASE("train_run is deterministic and checkpoints on schedule") {
    TrainConfig cfg;
    cfg.total_examples = 640;
    cfg.eval_every = 128;
    const auto a = train_run(hp1(6), tiny_bundle(), cfg);
    const auto b = train_run(hp1(6), tiny_bundle(), cfg);
    CHECK(a.model == b.model);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) {
      CHECK(a.history[i].examples_seen == b.history[i].examples_seen);
      CHECK(a.history[i].id_val_accuracy == b.history[i].id_val_accuracy);
      CHECK(a.history[i].ood_accuracy == b.history[i].ood_accuracy);
      CHECK(a.history[i].mean_loss == b.history[i].mean_loss);
      if (i) CHECK(a.history[i].examples_seen > a.history[i - 1].examples_seen);
    }
    REQUIRE(a.checkpoints.size() == 5);
    for (int k = 0; k < 5; ++k) CHECK(a.checkpoints[k].examples_seen == 128 * (k + 1));
    CHECK(a.checkpoints.back().model == a.model);
    CHECK(a.checkpoints[2].epoch == 1);
    CHECK(a.checkpoints[2].epoch_offset == 384 - 256);
    CHECK(!(train_run(hp1(7), tiny_bundle(), cfg).model == a.model));

    cfg.total_examples = 256 * 5 + 1;
    CHECK_THROWS_AS(train_run(hp1(6), tiny_bundle(), cfg), std::invalid_argument);
  }

  TEST_CASE("checkpointed model evaluates identically") {
    TrainConfig cfg;
    cfg.total_examples = 256;
    cfg.eval_every = 256;
    const auto r = train_run(hp1(8), tiny_bundle(), cfg);
    const auto back = ckpt::decode_checkpoint(ckpt::encode_checkpoint(r.model, {})).model;
    CHECK(evaluate_accuracy(back, tiny_bundle().val_id) == evaluate_accuracy(r.model, tiny_bundle().val_id));
    CHECK(evaluate_accuracy(back, tiny_bundle().test_ood) == r.history.back().ood_accuracy);
  }

  TEST_CASE("accuracy conventions") {
    const auto& b = tiny_bundle();
    auto all_false = model::zeros_model<float>(hp1());
    CHECK(evaluate_accuracy(all_false, b.test_ood) == 1.0);
    CHECK(evaluate_accuracy(all_false, b.val_id) == 0.5);
    auto all_true = model::zeros_model<float>(hp1());
    all_true.lnf_bias[0] = 1.0f;
    all_true.head_w.at(0, 1) = 1.0f;
    CHECK(evaluate_accuracy(all_true, b.test_ood) == 0.0);
    std::vector<dyck::Example> negatives;
    for (const auto& e : b.val_id) {
      if (!dyck::is_true(e.label)) negatives.push_back(e);
    }
    CHECK(evaluate_accuracy(all_false, negatives) == 1.0);
    CHECK_THROWS(evaluate_accuracy(all_false, std::vector<dyck::Example>{}));
  }

  TEST_CASE("convergence flags") {
    SUBCASE("immediate ID convergence and Equal-Count") {
      const auto f = convergence_flags(history_of(std::vector<std::pair<double, double>>(10, {1.0, 0.0})));
      CHECK(f.id_converged_at == 10'000);
      CHECK(f.ood_converged_at == 10'000);
      CHECK(f.ood_rule == OodRule::EqualCountConverged);
    }
    SUBCASE("alternating OOD never converges") {
      std::vector<std::pair<double, double>> v;
      for (int i = 0; i < 20; ++i) v.push_back({0.5, i % 2 ? 0.9 : 0.1});
      const auto f = convergence_flags(history_of(v));
      CHECK(f.ood_rule == OodRule::None);
      CHECK(!f.ood_converged_at);
      CHECK(!f.id_converged_at);
    }
    SUBCASE("late Nested convergence") {
      std::vector<std::pair<double, double>> v;
      for (int i = 0; i < 100; ++i) v.push_back({i >= 30 ? 1.0 : 0.9, i >= 60 ? 0.95 : 0.5});
      const auto f = convergence_flags(history_of(v));
      CHECK(f.id_converged_at == 31 * 10'000);
      CHECK(f.ood_converged_at == 61 * 10'000);
      CHECK(f.ood_rule == OodRule::NestedConverged);
    }
    SUBCASE("onset after 97.5% of the run is not convergence") {
      std::vector<std::pair<double, double>> v(100, {0.5, 0.5});
      v.back() = {1.0, 0.0};
      const auto f = convergence_flags(history_of(v));
      CHECK(!f.id_converged_at);
      CHECK(f.ood_rule == OodRule::None);
    }
    CHECK(convergence_flags({}).ood_rule == OodRule::None);
    CHECK(to_string(OodRule::EqualCountConverged) == "EqualCountConverged");
  }
}
