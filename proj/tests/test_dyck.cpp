#include <map>
#include <set>

#include "ambl/dyck.hpp"
#include "doctest.h"
#include "oracles.hpp"

using namespace ambl;
using namespace ambl::dyck;

namespace {

ParenSequence P(std::string_view s) { return ParenSequence::parse(s); }

ParenSequence random_string(Rng& rng, int n) {
  std::string s;
  for (int i = 0; i < n; ++i) s.push_back(uniform_below(rng, 2) ? '(' : ')');
  return P(s);
}

template <typename Gen>
double uniformity_p(Gen&& gen, const std::vector<std::string>& support, int draws) {
  std::map<std::string, int> counts;
  for (const auto& s : support) counts[s] = 0;
  for (int i = 0; i < draws; ++i) {
    const auto s = gen().str();
    REQUIRE_MESSAGE(counts.count(s), "generated outside the target set: " << s);
    ++counts[s];
  }
  return oracle::chi_square_uniform_p(counts, draws);
}

}  // namespace

TEST_SUITE("dyck") {
  TEST_CASE("parse validates symbols and length") {
    CHECK(P("()(())").size() == 6);
    CHECK(P("").empty());
    CHECK_THROWS_AS(P("(a)"), DyckError);
    CHECK_THROWS_AS(P(std::string(41, '(')), DyckError);
    CHECK(P(std::string(40, ')')).size() == 40);
    CHECK(P("()").at(1) == Symbol::Open);
    CHECK(P("()").at(2) == Symbol::Close);
    CHECK_THROWS(P("()").at(0));
    CHECK_THROWS(P("()").at(3));
  }

  TEST_CASE("equal-count rule") {
    CHECK(eval_equal_count(P("()(())")) == Label::True);
    CHECK(eval_equal_count(P("(()))")) == Label::False);
    CHECK(eval_equal_count(P("")) == Label::True);
    CHECK(eval_equal_count(P("))((()")) == Label::True);
  }

  TEST_CASE("nested rule") {
    CHECK(eval_nested(P("()(())")) == Label::True);
    CHECK(eval_nested(P("))((()")) == Label::False);
    CHECK(eval_nested(P("()")) == Label::True);
    CHECK(eval_nested(P(")(")) == Label::False);
    CHECK(eval_nested(P("(()")) == Label::False);
  }

  TEST_CASE("depth profile") {
    CHECK(depth_profile(P("))((()")) == DepthProfile{-1, -2, -1, 0, 1, 0});
    CHECK(depth_profile(P("()")) == DepthProfile{1, 0});
    CHECK(depth_profile(P("((")) == DepthProfile{1, 2});
    CHECK_THROWS_AS(depth_profile(P("")), DyckError);
  }

  TEST_CASE("first-symbol rule") {
    CHECK(eval_first_symbol(P("(()()")) == Label::True);
    CHECK(eval_first_symbol(P(")()(")) == Label::False);
    CHECK(eval_first_symbol(P("(")) == Label::True);
    CHECK_THROWS_AS(eval_first_symbol(P("")), DyckError);
  }

  TEST_CASE("rule properties on random strings") {
    Rng rng(1);
    for (int trial = 0; trial < 20'000; ++trial) {
      const int n = 1 + static_cast<int>(uniform_below(rng, 40));
      const auto s = random_string(rng, n);
      const auto d = depth_profile(s);
      int opens = 0;
      for (int i = 1; i <= n; ++i) opens += s.at(i) == Symbol::Open;
      CHECK(d.back() == opens - (n - opens));
      CHECK((d[0] == 1 || d[0] == -1));
      for (int j = 1; j < n; ++j) REQUIRE(std::abs(d[j] - d[j - 1]) == 1);
      if (is_true(eval_nested(s))) CHECK(is_true(eval_equal_count(s)));
      const bool min_ok = *std::min_element(d.begin(), d.end()) >= 0;
      CHECK(is_true(eval_nested(s)) == (is_true(eval_equal_count(s)) && min_ok));
    }
  }

  TEST_CASE("length sampler moments") {
    Rng rng(2);
    double s = 0, s2 = 0;
    constexpr int n = 100'000;
    for (int i = 0; i < n; ++i) {
      const int k = sample_length(rng);
      REQUIRE(k >= 1);
      REQUIRE(k <= 40);
      s += k;
      s2 += double(k) * k;
    }
    CHECK(std::abs(s / n - 20.0) < 0.1);
    CHECK(std::abs(s2 / n - (s / n) * (s / n) - 10.0) < 0.3);
    for (int i = 0; i < 1000; ++i) CHECK(sample_even_length(rng) % 2 == 0);
  }

  TEST_CASE("gen_neither") {
    Rng rng(3);
    std::map<std::string, int> c1, c2;
    for (int i = 0; i < 10'000; ++i) {
      ++c1[gen_neither(rng, 1).str()];
      ++c2[gen_neither(rng, 2).str()];
    }
    CHECK(c1.size() == 2);
    CHECK(c2.size() == 2);
    CHECK(c2.count("(("));
    CHECK(c2.count("))"));
    CHECK(std::abs(c2["(("] - 5000) < 300);
    CHECK(std::abs(c1["("] - 5000) < 300);
    for (int i = 0; i < 2000; ++i) CHECK(eval_equal_count(gen_neither(rng, 1 + i % 40)) == Label::False);
    CHECK_THROWS_AS(gen_neither(rng, 0), DyckError);
  }

  TEST_CASE("gen_equal_not_nested") {
    Rng rng(4);
    const auto support = oracle::enumerate(4, [](const ParenSequence& s) {
      return is_true(eval_equal_count(s)) && !is_true(eval_nested(s));
    });
    CHECK(support == std::vector<std::string>{"())(", ")(()", ")()(", "))(("});
    CHECK(uniformity_p([&] { return gen_equal_not_nested(rng, 4); }, support, 10'000) > 0.01);
    // n = 2 has exactly one qualifying string.
    CHECK(oracle::enumerate(2, [](const ParenSequence& s) {
            return is_true(eval_equal_count(s)) && !is_true(eval_nested(s));
          }) == std::vector<std::string>{")("});
    CHECK(gen_equal_not_nested(rng, 2).str() == ")(");
    CHECK_THROWS_AS(gen_equal_not_nested(rng, 3), DyckError);
    CHECK_THROWS_AS(gen_equal_not_nested(rng, 0), DyckError);
    for (int i = 0; i < 2000; ++i) {
      const auto s = gen_equal_not_nested(rng, 2 + 2 * (i % 20));
      CHECK(eval_equal_count(s) == Label::True);
      CHECK(eval_nested(s) == Label::False);
    }
  }

  TEST_CASE("gen_nested_uniform") {
    Rng rng(5);
    for (int i = 0; i < 100; ++i) CHECK(gen_nested_uniform(rng, 2).str() == "()");
    const auto nested = [](const ParenSequence& s) { return is_true(eval_nested(s)); };
    CHECK(uniformity_p([&] { return gen_nested_uniform(rng, 4); }, oracle::enumerate(4, nested), 20'000) > 0.01);
    const auto s8 = oracle::enumerate(8, nested);
    CHECK(s8.size() == 14);
    CHECK(uniformity_p([&] { return gen_nested_uniform(rng, 8); }, s8, 50'000) > 0.01);
    CHECK_THROWS_AS(gen_nested_uniform(rng, 5), DyckError);
  }

  TEST_CASE("small-n generators are uniform over enumerated targets") {
    Rng rng(6);
    constexpr double alpha = 0.01 / 24;  // Bonferroni over the 24 tests below
    const auto neither = [](const ParenSequence& s) { return !is_true(eval_equal_count(s)); };
    const auto ennn = [](const ParenSequence& s) { return is_true(eval_equal_count(s)) && !is_true(eval_nested(s)); };
    const auto nested = [](const ParenSequence& s) { return is_true(eval_nested(s)); };
    for (int n = 1; n <= 8; ++n) {
      CAPTURE(n);
      CHECK(uniformity_p([&] { return gen_neither(rng, n); }, oracle::enumerate(n, neither), 20'000) > alpha);
      if (n % 2 == 0) {
        CHECK(uniformity_p([&] { return gen_nested_uniform(rng, n); }, oracle::enumerate(n, nested), 20'000) > alpha);
        CHECK(uniformity_p([&] { return gen_equal_not_nested(rng, n); }, oracle::enumerate(n, ennn), 20'000) > alpha);
      }
    }
  }

  TEST_CASE("tokenize") {
    const auto t = tokenize(P("()"));
    CHECK(t.eos_index == 3);
    CHECK(t.ids[0] == BOS);
    CHECK(t.ids[1] == OPEN);
    CHECK(t.ids[2] == CLOSE);
    CHECK(t.ids[3] == EOS);
    for (int i = 4; i < kSeqLen; ++i) CHECK(t.ids[i] == PAD);
    const auto full = tokenize(P(std::string(20, '(') + std::string(20, ')')));
    CHECK(full.eos_index == 41);
    CHECK(std::count(full.ids.begin(), full.ids.end(), PAD) == 0);
    const auto empty = tokenize(P(""));
    CHECK(empty.eos_index == 1);
    CHECK(empty.ids[1] == EOS);
    CHECK(std::count(empty.ids.begin(), empty.ids.end(), PAD) == 40);
  }

  TEST_CASE("datasets satisfy their invariants") {
    DatasetConfig cfg;
    cfg.seed = 11;
    cfg.train_unique = 4000;
    cfg.val_size = 400;
    cfg.ood_size = 300;
    const auto b = build_datasets(cfg);
    REQUIRE(b.train.size() == 4000);
    REQUIRE(b.val_id.size() == 400);
    REQUIRE(b.test_ood.size() == 300);
    const auto count_true = [](const std::vector<Example>& v) {
      return std::count_if(v.begin(), v.end(), [](const Example& e) { return is_true(e.label); });
    };
    CHECK(count_true(b.train) == 2000);
    CHECK(count_true(b.val_id) == 200);
    std::set<std::string> train, val, ood;
    for (const auto& e : b.train) {
      CHECK(e.label == eval_nested(e.seq));
      CHECK((is_true(e.label) || !is_true(eval_equal_count(e.seq))));
      train.insert(e.seq.str());
    }
    for (const auto& e : b.val_id) {
      CHECK(e.label == eval_nested(e.seq));
      val.insert(e.seq.str());
      CHECK(!train.count(e.seq.str()));
    }
    for (const auto& e : b.test_ood) {
      CHECK(eval_equal_count(e.seq) == Label::True);
      CHECK(eval_nested(e.seq) == Label::False);
      CHECK(e.label == Label::False);
      const auto d = depth_profile(e.seq);
      CHECK(*std::min_element(d.begin(), d.end()) < 0);
      ood.insert(e.seq.str());
    }
    CHECK(train.size() == b.train.size());
    CHECK(val.size() == b.val_id.size());
    CHECK(ood.size() == b.test_ood.size());

    const auto again = build_datasets(cfg);
    CHECK(again.train.size() == b.train.size());
    bool same = true;
    for (std::size_t i = 0; i < b.train.size(); ++i) same &= again.train[i].seq == b.train[i].seq;
    CHECK(same);
  }

  TEST_CASE("dataset config validation") {
    DatasetConfig cfg;
    cfg.train_unique = 3;
    CHECK_THROWS_AS(cfg.validate(), DyckError);
    cfg.train_unique = 0;
    CHECK_THROWS_AS(build_datasets(cfg), DyckError);
    DatasetConfig odd;
    odd.val_size = 7;
    CHECK_THROWS_AS(odd.validate(), DyckError);
    DatasetConfig attempts;
    attempts.max_attempts_per_example = 0;
    CHECK_THROWS_AS(attempts.validate(), DyckError);
  }

  TEST_CASE("epoch order") {
    DatasetConfig cfg;
    cfg.train_unique = 1000;
    cfg.val_size = 10;
    cfg.ood_size = 10;
    const auto b = build_datasets(cfg);
    const auto o1 = epoch_order(b, 3, 0), o2 = epoch_order(b, 3, 0);
    CHECK(o1 == o2);
    CHECK(epoch_order(b, 4, 0) != o1);
    CHECK(epoch_order(b, 3, 1) != o1);
    auto sorted = o1;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 1000; ++i) REQUIRE(sorted[i] == i);
    std::size_t stream = 0;
    for (int e = 0; e < kEpochs; ++e) stream += epoch_order(b, 3, e).size();
    CHECK(stream == 5 * b.train.size());
    CHECK_THROWS_AS(epoch_order(b, 3, 5), DyckError);
    CHECK_THROWS_AS(epoch_order(b, 3, -1), DyckError);
  }
}
