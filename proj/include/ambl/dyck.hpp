#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ambl/rng.hpp"

// Single-bracket-pair (Dyck-1) data: the two labelling rules, the depth
// profile, the class-conditional generators and the train/validation/OOD
// splits built from them.
namespace ambl::dyck {

class DyckError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class Symbol : uint8_t { Open, Close };

enum class Label : uint8_t { False = 0, True = 1 };

inline Label to_label(bool b) { return b ? Label::True : Label::False; }
inline bool is_true(Label l) { return l == Label::True; }

inline constexpr int kMaxParens = 40;
inline constexpr int kSeqLen = kMaxParens + 2;  // BOS + parens + EOS, padded

// A bracket string over {'(', ')'}.
class ParenSequence {
 public:
  ParenSequence() = default;
  // Accepts only '(' and ')'; throws DyckError otherwise or when longer than 40.
  static ParenSequence parse(std::string_view text);
  static ParenSequence from_symbols(const std::vector<Symbol>& symbols);

  int size() const { return static_cast<int>(text_.size()); }
  bool empty() const { return text_.empty(); }
  // 1-based position, matching s_1..s_n.
  Symbol at(int position) const;
  const std::string& str() const { return text_; }

  friend bool operator==(const ParenSequence&, const ParenSequence&) = default;
  friend auto operator<=>(const ParenSequence&, const ParenSequence&) = default;

 private:
  explicit ParenSequence(std::string text) : text_(std::move(text)) {}
  std::string text_;
};

using DepthProfile = std::vector<int>;

enum Token : int { BOS = 0, OPEN = 1, CLOSE = 2, EOS = 3, PAD = 4 };
inline constexpr int kVocabSize = 5;

struct TokenizedSequence {
  std::array<int, kSeqLen> ids{};
  int eos_index = 0;  // = n + 1
  int length() const { return eos_index - 1; }
};

struct Example {
  ParenSequence seq;
  Label label = Label::False;  // reference label under the Nested rule
};

// --- rules -------------------------------------------------------------------

Label eval_equal_count(const ParenSequence& seq);
Label eval_nested(const ParenSequence& seq);
Label eval_first_symbol(const ParenSequence& seq);  // throws on empty input
DepthProfile depth_profile(const ParenSequence& seq);  // throws on empty input

// --- sampling ----------------------------------------------------------------

// n ~ Binomial(40, 1/2), redrawn while n == 0.
int sample_length(Rng& rng);
// As sample_length, additionally redrawn while n is odd.
int sample_even_length(Rng& rng);

// Uniform over length-n strings that violate Equal-Count (n >= 1).
ParenSequence gen_neither(Rng& rng, int n);
// Uniform over length-n strings that satisfy Equal-Count but not Nested (n even, n >= 2).
ParenSequence gen_equal_not_nested(Rng& rng, int n);
// Uniform over the Catalan(n/2) nested strings of length n (n even, n >= 2).
ParenSequence gen_nested_uniform(Rng& rng, int n);

// --- datasets ----------------------------------------------------------------

struct DatasetConfig {
  uint64_t seed = 0;
  int train_unique = 20'000;  // full scale: 200'000
  int val_size = 1'000;
  int ood_size = 1'000;
  // Attempts allowed per requested example before giving up.
  int max_attempts_per_example = 200;

  void validate() const;
};

struct DatasetBundle {
  std::vector<Example> train;
  std::vector<Example> val_id;
  std::vector<Example> test_ood;
  uint64_t generation_seed = 0;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

DatasetBundle build_datasets(const DatasetConfig& config);

TokenizedSequence tokenize(const ParenSequence& seq);

inline constexpr int kEpochs = 5;

// Order of the training examples within one pass; epochs 0..4 concatenated
// form the full training stream.
std::vector<int> epoch_order(const DatasetBundle& bundle, uint64_t shuffle_seed, int epoch);

}  // namespace ambl::dyck
