#include "ambl/dyck.hpp"

#include <algorithm>
#include <numeric>
#include <unordered_set>

namespace ambl::dyck {

ParenSequence ParenSequence::parse(std::string_view text) {
  if (text.size() > static_cast<std::size_t>(kMaxParens)) {
    throw DyckError("sequence of length " + std::to_string(text.size()) + " exceeds " + std::to_string(kMaxParens));
  }
  for (const char c : text) {
    if (c != '(' && c != ')') throw DyckError(std::string("invalid bracket symbol '") + c + "'");
  }
  return ParenSequence(std::string(text));
}

ParenSequence ParenSequence::from_symbols(const std::vector<Symbol>& symbols) {
  std::string text;
  text.reserve(symbols.size());
  for (const Symbol s : symbols) text.push_back(s == Symbol::Open ? '(' : ')');
  return parse(text);
}

Symbol ParenSequence::at(int position) const {
  if (position < 1 || position > size()) throw DyckError("position " + std::to_string(position) + " out of range");
  return text_[position - 1] == '(' ? Symbol::Open : Symbol::Close;
}

Label eval_equal_count(const ParenSequence& seq) {
  const auto opens = std::count(seq.str().begin(), seq.str().end(), '(');
  return to_label(2 * opens == static_cast<long>(seq.size()));
}

Label eval_nested(const ParenSequence& seq) {
  int depth = 0;
  for (const char c : seq.str()) {
    depth += c == '(' ? 1 : -1;
    if (depth < 0) return Label::False;
  }
  return to_label(depth == 0);
}

Label eval_first_symbol(const ParenSequence& seq) {
  if (seq.empty()) throw DyckError("first-symbol rule is undefined on the empty sequence");
  return to_label(seq.at(1) == Symbol::Open);
}

DepthProfile depth_profile(const ParenSequence& seq) {
  if (seq.empty()) throw DyckError("the empty sequence has no depth profile");
  DepthProfile depths;
  depths.reserve(seq.size());
  int depth = 0;
  for (const char c : seq.str()) {
    depth += c == '(' ? 1 : -1;
    depths.push_back(depth);
  }
  return depths;
}

int sample_length(Rng& rng) {
  int n;
  do {
    n = binomial_half(rng, kMaxParens);
  } while (n == 0);
  return n;
}

int sample_even_length(Rng& rng) {
  int n;
  do {
    n = sample_length(rng);
  } while (n % 2 != 0);
  return n;
}

ParenSequence gen_neither(Rng& rng, int n) {
  if (n < 1 || n > kMaxParens) throw DyckError("gen_neither: length must be in [1, 40]");
  std::string text(n, '(');
  while (true) {
    int opens = 0;
    for (char& c : text) {
      c = (rng() >> 63) ? '(' : ')';
      opens += c == '(';
    }
    if (2 * opens != n) return ParenSequence::parse(text);
  }
}

ParenSequence gen_equal_not_nested(Rng& rng, int n) {
  if (n < 2 || n > kMaxParens || n % 2 != 0) {
    throw DyckError("gen_equal_not_nested: length must be even and in [2, 40], got " + std::to_string(n));
  }
  std::string text(n, '(');
  while (true) {
    std::fill(text.begin(), text.begin() + n / 2, '(');
    std::fill(text.begin() + n / 2, text.end(), ')');
    for (int i = n - 1; i > 0; --i) {
      std::swap(text[i], text[uniform_below(rng, static_cast<uint64_t>(i) + 1)]);
    }
    auto seq = ParenSequence::parse(text);
    if (eval_nested(seq) == Label::False) return seq;
  }
}

ParenSequence gen_nested_uniform(Rng& rng, int n) {
  if (n < 2 || n > kMaxParens || n % 2 != 0) {
    throw DyckError("gen_nested_uniform: length must be even and in [2, 40], got " + std::to_string(n));
  }
  // Arnold & Sleep: with r symbols left to emit at depth k, close with
  // probability k(r + k + 2) / (2r(k + 1)). The ratio is evaluated exactly
  // with an integer draw.
  std::string text;
  text.reserve(n);
  int depth = 0;
  for (int remaining = n; remaining > 0; --remaining) {
    const uint64_t num = static_cast<uint64_t>(depth) * (remaining + depth + 2);
    const uint64_t den = 2ULL * remaining * (depth + 1);
    if (uniform_below(rng, den) < num) {
      text.push_back(')');
      --depth;
    } else {
      text.push_back('(');
      ++depth;
    }
  }
  return ParenSequence::parse(text);
}

void DatasetConfig::validate() const {
  if (train_unique <= 0 || val_size <= 0 || ood_size <= 0) throw DyckError("dataset sizes must be positive");
  if (train_unique % 2 != 0 || val_size % 2 != 0) throw DyckError("ID split sizes must be even to be label-balanced");
  if (max_attempts_per_example <= 0) throw DyckError("max_attempts_per_example must be positive");
}

namespace {

// Draws until `count` distinct sequences have been collected, in draw order.
template <typename Gen>
std::vector<ParenSequence> draw_unique(Rng& rng, int count, long max_attempts, const char* what, Gen&& gen) {
  std::vector<ParenSequence> out;
  out.reserve(count);
  std::unordered_set<std::string> seen;
  seen.reserve(static_cast<std::size_t>(count) * 2);
  long attempts = 0;
  while (static_cast<int>(out.size()) < count) {
    if (++attempts > max_attempts) {
      throw GenerationError(std::string("generator exhausted while drawing ") + what + ": " +
                            std::to_string(out.size()) + " of " + std::to_string(count) + " unique sequences after " +
                            std::to_string(max_attempts) + " attempts");
    }
    ParenSequence s = gen(rng);
    if (seen.insert(s.str()).second) out.push_back(std::move(s));
  }
  return out;
}

template <typename V>
void shuffle_in_place(Rng& rng, V& v) {
  for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[uniform_below(rng, i)]);
}

enum Stream : uint64_t { kPositives = 1, kNegatives = 2, kOod = 3, kSplitOrder = 4 };

}  // namespace

DatasetBundle build_datasets(const DatasetConfig& config) {
  config.validate();
  const int pos_needed = config.train_unique / 2 + config.val_size / 2;
  const int neg_needed = pos_needed;

  Rng pos_rng(derive_seed(config.seed, kPositives));
  Rng neg_rng(derive_seed(config.seed, kNegatives));
  Rng ood_rng(derive_seed(config.seed, kOod));
  Rng order_rng(derive_seed(config.seed, kSplitOrder));

  const auto budget = [&](int n) { return static_cast<long>(n) * config.max_attempts_per_example + 10'000; };
  auto positives = draw_unique(pos_rng, pos_needed, budget(pos_needed), "nested positives",
                               [](Rng& r) { return gen_nested_uniform(r, sample_even_length(r)); });
  auto negatives = draw_unique(neg_rng, neg_needed, budget(neg_needed), "neither negatives",
                               [](Rng& r) { return gen_neither(r, sample_length(r)); });
  auto ood = draw_unique(ood_rng, config.ood_size, budget(config.ood_size), "OOD sequences",
                         [](Rng& r) { return gen_equal_not_nested(r, sample_even_length(r)); });

  DatasetBundle bundle;
  bundle.generation_seed = config.seed;
  const int val_half = config.val_size / 2;
  for (int i = 0; i < pos_needed; ++i) {
    auto& split = i < val_half ? bundle.val_id : bundle.train;
    split.push_back({positives[i], Label::True});
  }
  for (int i = 0; i < neg_needed; ++i) {
    auto& split = i < val_half ? bundle.val_id : bundle.train;
    split.push_back({negatives[i], Label::False});
  }
  shuffle_in_place(order_rng, bundle.train);
  shuffle_in_place(order_rng, bundle.val_id);
  bundle.test_ood.reserve(ood.size());
  for (auto& s : ood) bundle.test_ood.push_back({std::move(s), Label::False});
  return bundle;
}

TokenizedSequence tokenize(const ParenSequence& seq) {
  if (seq.size() > kMaxParens) throw DyckError("cannot tokenize a sequence longer than 40");
  TokenizedSequence t;
  t.ids.fill(PAD);
  t.ids[0] = BOS;
  for (int i = 1; i <= seq.size(); ++i) t.ids[i] = seq.at(i) == Symbol::Open ? OPEN : CLOSE;
  t.eos_index = seq.size() + 1;
  t.ids[t.eos_index] = EOS;
  return t;
}

std::vector<int> epoch_order(const DatasetBundle& bundle, uint64_t shuffle_seed, int epoch) {
  if (epoch < 0 || epoch >= kEpochs) throw DyckError("epoch must be in [0, 5), got " + std::to_string(epoch));
  std::vector<int> order(bundle.train.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(derive_seed(shuffle_seed, 0x5eed0000ULL + static_cast<uint64_t>(epoch)));
  shuffle_in_place(rng, order);
  return order;
}

}  // namespace ambl::dyck
