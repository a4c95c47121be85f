#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ambl/autodiff.hpp"
#include "ambl/dyck.hpp"
#include "ambl/tensor.hpp"

// GPT-style causal-attention classifier (minGPT layout: pre-norm blocks,
// learned absolute positions, GELU MLP with 4x expansion, no dropout). The
// class is read from the final layer at the EOS position.
namespace ambl::model {

struct HyperParams {
  int depth = 1;    // transformer blocks
  int heads = 2;    // attention heads per block; the hidden size is split between them
  int hidden = 64;
  double weight_decay = 0.0;
  double learning_rate = 1e-4;
  uint64_t init_seed = 0;
  uint64_t shuffle_seed = 0;

  void validate() const;
  int head_dim() const { return hidden / heads; }
  friend bool operator==(const HyperParams&, const HyperParams&) = default;
};

template <typename T>
struct Block {
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> attn_w, attn_b;        // hidden × 3·hidden (q | k | v)
  Tensor<T> attn_proj_w, attn_proj_b;
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> fc_w, fc_b;            // hidden × 4·hidden
  Tensor<T> fc_proj_w, fc_proj_b;  // 4·hidden × hidden

  friend bool operator==(const Block&, const Block&) = default;
};

template <typename T>
struct Model {
  HyperParams hp;
  Tensor<T> token_embedding;     // vocab × hidden
  Tensor<T> position_embedding;  // 42 × hidden
  std::vector<Block<T>> blocks;
  Tensor<T> lnf_gain, lnf_bias;
  Tensor<T> head_w;              // hidden × 2

  template <typename P>
  struct ParamRefT {
    std::string name;
    P* tensor;
    bool decay;  // decoupled weight decay applies
  };
  using ParamRef = ParamRefT<Tensor<T>>;
  using ConstParamRef = ParamRefT<const Tensor<T>>;

  // Stable order; names are the checkpoint keys.
  std::vector<ParamRef> params();
  std::vector<ConstParamRef> params() const;
  std::size_t parameter_count() const;

  template <typename U>
  Model<U> cast() const;

  friend bool operator==(const Model&, const Model&) = default;
};

using ModelRecord = Model<float>;

std::size_t parameter_count_formula(int depth, int hidden = 64);

// Correctly shaped model with zero weights, unit layer-norm gains.
template <typename T>
Model<T> zeros_model(const HyperParams& hp);

// Gaussian(0, 0.02) weights and embeddings, zero biases, unit layer-norm gains,
// all drawn from a stream seeded by hp.init_seed.
ModelRecord init_model(const HyperParams& hp);

// Heads whose post-softmax attention is replaced by the uniform causal
// distribution (weight 1/(i+1) on positions 0..i).
class HeadMask {
 public:
  HeadMask() = default;
  HeadMask(int depth, int heads) : depth_(depth), heads_(heads), bits_(static_cast<std::size_t>(depth) * heads, 0) {}
  static HeadMask all(int depth, int heads);
  static HeadMask single(int depth, int heads, int layer, int head);

  bool test(int layer, int head) const;
  void set(int layer, int head, bool on = true);
  bool any() const;
  int depth() const { return depth_; }
  int heads() const { return heads_; }

 private:
  int depth_ = 0;
  int heads_ = 0;
  std::vector<char> bits_;
};

// Post-softmax attention of every head for one input.
struct AttentionCapture {
  int depth = 0;
  int heads = 0;
  int seq_len = dyck::kSeqLen;
  std::vector<std::vector<double>> matrices;  // [layer * heads + head], seq_len × seq_len row-major

  double at(int layer, int head, int row, int col) const;
  std::vector<double>& matrix(int layer, int head) { return matrices.at(static_cast<std::size_t>(layer) * heads + head); }
  const std::vector<double>& matrix(int layer, int head) const {
    return matrices.at(static_cast<std::size_t>(layer) * heads + head);
  }
};

struct EosAttentionRow {
  int layer = 0;
  int head = 0;
  std::vector<double> values;  // a(i) for i = 1..n
};

struct ForwardOptions {
  // Process all 42 positions; otherwise stop at EOS, which leaves the EOS
  // logits unchanged because attention is causal.
  bool full_length = false;
  // In the final block only the EOS row feeds the classifier, so queries,
  // MLP and residual there are evaluated for that row alone.
  bool eos_only_final_block = true;
  const HeadMask* uniform = nullptr;
  AttentionCapture* capture = nullptr;  // requires full_length and !eos_only_final_block
};

// Records the forward pass on `tape` and returns the 1×2 logit node.
// When param_vars is given it receives the parameter leaves in params() order.
template <typename T>
ad::Var build_forward(ad::Tape<T>& tape, const Model<T>& model, const dyck::TokenizedSequence& input,
                      const ForwardOptions& options, std::vector<ad::Var>* param_vars = nullptr);

struct ForwardOutput {
  std::array<double, 2> logits{};
  AttentionCapture capture;
};

// Full-length pass with every attention matrix captured.
ForwardOutput forward_with_capture(const ModelRecord& model, const dyck::TokenizedSequence& input,
                                   const HeadMask* uniform = nullptr);

// Logits at EOS via the shortest equivalent computation.
std::array<double, 2> forward_logits(const ModelRecord& model, const dyck::TokenizedSequence& input,
                                     const HeadMask* uniform = nullptr);

struct Prediction {
  dyck::Label label = dyck::Label::False;
  double prob_true = 0.0;
};

// prob_true = softmax(logits)[TRUE]; TRUE iff prob_true > 0.5.
Prediction prediction_from_logits(const std::array<double, 2>& logits);
Prediction predict(const ModelRecord& model, const dyck::ParenSequence& seq, const HeadMask* uniform = nullptr);

// A[n+1, 1..n] of one head.
EosAttentionRow eos_attention_row(const AttentionCapture& capture, int layer, int head, int n);

}  // namespace ambl::model
