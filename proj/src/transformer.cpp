#include "ambl/transformer.hpp"

#include <cmath>
#include <stdexcept>

#include "ambl/rng.hpp"

namespace ambl::model {

void HyperParams::validate() const {
  if (depth < 1) throw std::invalid_argument("depth must be at least 1");
  if (heads < 1) throw std::invalid_argument("heads must be at least 1");
  if (hidden < 1 || hidden % heads != 0) throw std::invalid_argument("hidden dimension must be divisible by heads");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("weight decay must be non-negative");
}

namespace {

template <typename M, typename R>
std::vector<R> collect_params(M& m) {
  std::vector<R> out;
  out.push_back({"wte", &m.token_embedding, false});
  out.push_back({"wpe", &m.position_embedding, false});
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    auto& b = m.blocks[l];
    const std::string p = "h." + std::to_string(l) + ".";
    out.push_back({p + "ln_1.weight", &b.ln1_gain, false});
    out.push_back({p + "ln_1.bias", &b.ln1_bias, false});
    out.push_back({p + "attn.c_attn.weight", &b.attn_w, true});
    out.push_back({p + "attn.c_attn.bias", &b.attn_b, false});
    out.push_back({p + "attn.c_proj.weight", &b.attn_proj_w, true});
    out.push_back({p + "attn.c_proj.bias", &b.attn_proj_b, false});
    out.push_back({p + "ln_2.weight", &b.ln2_gain, false});
    out.push_back({p + "ln_2.bias", &b.ln2_bias, false});
    out.push_back({p + "mlp.c_fc.weight", &b.fc_w, true});
    out.push_back({p + "mlp.c_fc.bias", &b.fc_b, false});
    out.push_back({p + "mlp.c_proj.weight", &b.fc_proj_w, true});
    out.push_back({p + "mlp.c_proj.bias", &b.fc_proj_b, false});
  }
  out.push_back({"ln_f.weight", &m.lnf_gain, false});
  out.push_back({"ln_f.bias", &m.lnf_bias, false});
  out.push_back({"head.weight", &m.head_w, true});
  return out;
}

}  // namespace

template <typename T>
Model<T> zeros_model(const HyperParams& hp) {
  hp.validate();
  const int d = hp.hidden;
  Model<T> m;
  m.hp = hp;
  m.token_embedding = Tensor<T>({dyck::kVocabSize, d});
  m.position_embedding = Tensor<T>({dyck::kSeqLen, d});
  m.blocks.resize(hp.depth);
  for (auto& b : m.blocks) {
    b.ln1_gain = Tensor<T>({d}, T{1});
    b.ln1_bias = Tensor<T>({d});
    b.attn_w = Tensor<T>({d, 3 * d});
    b.attn_b = Tensor<T>({3 * d});
    b.attn_proj_w = Tensor<T>({d, d});
    b.attn_proj_b = Tensor<T>({d});
    b.ln2_gain = Tensor<T>({d}, T{1});
    b.ln2_bias = Tensor<T>({d});
    b.fc_w = Tensor<T>({d, 4 * d});
    b.fc_b = Tensor<T>({4 * d});
    b.fc_proj_w = Tensor<T>({4 * d, d});
    b.fc_proj_b = Tensor<T>({d});
  }
  m.lnf_gain = Tensor<T>({d}, T{1});
  m.lnf_bias = Tensor<T>({d});
  m.head_w = Tensor<T>({d, 2});
  return m;
}

template <typename T>
std::vector<typename Model<T>::ParamRef> Model<T>::params() {
  return collect_params<Model<T>, ParamRef>(*this);
}

template <typename T>
std::vector<typename Model<T>::ConstParamRef> Model<T>::params() const {
  return collect_params<const Model<T>, ConstParamRef>(*this);
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params()) n += p.tensor->numel();
  return n;
}

template <typename T>
template <typename U>
Model<U> Model<T>::cast() const {
  Model<U> out = zeros_model<U>(hp);
  auto dst = out.params();
  auto src = params();
  for (std::size_t i = 0; i < src.size(); ++i) *dst[i].tensor = src[i].tensor->template cast<U>();
  return out;
}

std::size_t parameter_count_formula(int depth, int hidden) {
  const std::size_t d = hidden;
  const std::size_t per_block = 12 * d * d + 13 * d;
  return dyck::kVocabSize * d + dyck::kSeqLen * d + depth * per_block + 2 * d + 2 * d;
}

ModelRecord init_model(const HyperParams& hp) {
  hp.validate();
  ModelRecord m = zeros_model<float>(hp);
  Rng rng(derive_seed(hp.init_seed, 0x1417ULL));
  constexpr double kStd = 0.02;
  for (auto& p : m.params()) {
    // Embeddings and every weight matrix are Gaussian; 1-D tensors (biases,
    // layer-norm parameters) keep their constant initial values.
    if (p.tensor->rank() != 2) continue;
    for (float& x : p.tensor->values()) x = static_cast<float>(kStd * standard_normal(rng));
  }
  return m;
}

// ---------------------------------------------------------------------------

HeadMask HeadMask::all(int depth, int heads) {
  HeadMask m(depth, heads);
  std::fill(m.bits_.begin(), m.bits_.end(), 1);
  return m;
}

HeadMask HeadMask::single(int depth, int heads, int layer, int head) {
  HeadMask m(depth, heads);
  m.set(layer, head);
  return m;
}

bool HeadMask::test(int layer, int head) const {
  if (layer < 0 || layer >= depth_ || head < 0 || head >= heads_) return false;
  return bits_[static_cast<std::size_t>(layer) * heads_ + head] != 0;
}

void HeadMask::set(int layer, int head, bool on) {
  if (layer < 0 || layer >= depth_ || head < 0 || head >= heads_) {
    throw std::out_of_range("head (" + std::to_string(layer) + ", " + std::to_string(head) + ") outside a " +
                            std::to_string(depth_) + "x" + std::to_string(heads_) + " model");
  }
  bits_[static_cast<std::size_t>(layer) * heads_ + head] = on ? 1 : 0;
}

bool HeadMask::any() const {
  return std::any_of(bits_.begin(), bits_.end(), [](char b) { return b != 0; });
}

double AttentionCapture::at(int layer, int head, int row, int col) const {
  if (row < 0 || row >= seq_len || col < 0 || col >= seq_len) throw std::out_of_range("attention index out of range");
  return matrix(layer, head)[static_cast<std::size_t>(row) * seq_len + col];
}

// ---------------------------------------------------------------------------

template <typename T>
ad::Var build_forward(ad::Tape<T>& tape, const Model<T>& model, const dyck::TokenizedSequence& input,
                      const ForwardOptions& options, std::vector<ad::Var>* param_vars) {
  const HyperParams& hp = model.hp;
  const int n = input.eos_index - 1;
  if (input.eos_index < 1 || n > dyck::kMaxParens || input.ids[0] != dyck::BOS || input.ids[input.eos_index] != dyck::EOS) {
    throw std::invalid_argument("forward: malformed tokenized input");
  }
  if (options.uniform && (options.uniform->depth() != hp.depth || options.uniform->heads() != hp.heads)) {
    throw std::invalid_argument("forward: head mask does not match model dimensions");
  }
  if (options.capture && (!options.full_length || options.eos_only_final_block)) {
    throw std::invalid_argument("forward: attention capture needs the full-length, all-rows pass");
  }

  const int len = options.full_length ? dyck::kSeqLen : input.eos_index + 1;
  const int eos = input.eos_index;
  const int hd = hp.head_dim();
  const T inv_sqrt = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));

  std::vector<ad::Var> pv;
  for (const auto& p : model.params()) pv.push_back(tape.parameter(*p.tensor));
  std::size_t next = 0;
  auto take = [&]() { return pv.at(next++); };

  if (options.capture) {
    options.capture->depth = hp.depth;
    options.capture->heads = hp.heads;
    options.capture->seq_len = dyck::kSeqLen;
    options.capture->matrices.assign(static_cast<std::size_t>(hp.depth) * hp.heads,
                                     std::vector<double>(static_cast<std::size_t>(dyck::kSeqLen) * dyck::kSeqLen, 0.0));
  }

  const ad::Var wte = take();
  const ad::Var wpe = take();
  std::vector<int> positions(len);
  for (int i = 0; i < len; ++i) positions[i] = i;
  ad::Var x = ad::add(tape, ad::embedding(tape, wte, std::span<const int>(input.ids.data(), len)),
                      ad::embedding(tape, wpe, std::span<const int>(positions)));

  for (int l = 0; l < hp.depth; ++l) {
    const ad::Var ln1_g = take(), ln1_b = take(), attn_w = take(), attn_b = take(), proj_w = take(),
                  proj_b = take(), ln2_g = take(), ln2_b = take(), fc_w = take(), fc_b = take(),
                  fc_proj_w = take(), fc_proj_b = take();
    const bool last = l == hp.depth - 1;
    const bool query_eos_only = last && options.eos_only_final_block;
    const int first_row = query_eos_only ? eos : 0;
    const int qrows = query_eos_only ? 1 : len;

    const ad::Var h = ad::layer_norm(tape, x, ln1_g, ln1_b);
    const ad::Var qkv = ad::add_bias(tape, ad::matmul(tape, h, attn_w), attn_b);
    ad::Var q_all = ad::slice_cols(tape, qkv, 0, hp.hidden);
    if (query_eos_only) q_all = ad::select_rows(tape, q_all, eos, 1);

    std::vector<ad::Var> head_out;
    head_out.reserve(hp.heads);
    for (int hh = 0; hh < hp.heads; ++hh) {
      const ad::Var v = ad::slice_cols(tape, qkv, 2 * hp.hidden + hh * hd, hd);
      ad::Var att;
      if (options.uniform && options.uniform->test(l, hh)) {
        Tensor<T> u({qrows, len});
        for (int r = 0; r < qrows; ++r) {
          const int visible = first_row + r + 1;
          for (int c = 0; c < visible; ++c) u.at(r, c) = T{1} / static_cast<T>(visible);
        }
        att = tape.constant(std::move(u));
      } else {
        const ad::Var q = ad::slice_cols(tape, q_all, hh * hd, hd);
        const ad::Var k = ad::slice_cols(tape, qkv, hp.hidden + hh * hd, hd);
        att = ad::causal_softmax(tape, ad::scale(tape, ad::matmul_bt(tape, q, k), inv_sqrt), first_row);
      }
      if (options.capture) {
        const auto& a = tape.value(att);
        auto& dst = options.capture->matrix(l, hh);
        for (std::size_t i = 0; i < a.numel(); ++i) dst[i] = static_cast<double>(a[i]);
      }
      head_out.push_back(ad::matmul(tape, att, v));
    }
    const ad::Var y = ad::add_bias(tape, ad::matmul(tape, ad::concat_cols<T>(tape, head_out), proj_w), proj_b);
    const ad::Var resid = query_eos_only ? ad::select_rows(tape, x, eos, 1) : x;
    x = ad::add(tape, resid, y);
    const ad::Var h2 = ad::layer_norm(tape, x, ln2_g, ln2_b);
    const ad::Var mlp = ad::add_bias(
        tape, ad::matmul(tape, ad::gelu(tape, ad::add_bias(tape, ad::matmul(tape, h2, fc_w), fc_b)), fc_proj_w),
        fc_proj_b);
    x = ad::add(tape, x, mlp);
  }

  const ad::Var lnf_g = take(), lnf_b = take(), head_w = take();
  ad::Var final_row = x;
  if (tape.value(x).dim(0) != 1) final_row = ad::select_rows(tape, x, eos, 1);
  const ad::Var logits = ad::matmul(tape, ad::layer_norm(tape, final_row, lnf_g, lnf_b), head_w);
  if (param_vars) *param_vars = std::move(pv);
  return logits;
}

ForwardOutput forward_with_capture(const ModelRecord& model, const dyck::TokenizedSequence& input,
                                   const HeadMask* uniform) {
  ad::Tape<float> tape;
  ForwardOutput out;
  ForwardOptions opts;
  opts.full_length = true;
  opts.eos_only_final_block = false;
  opts.uniform = uniform;
  opts.capture = &out.capture;
  const auto logits = build_forward(tape, model, input, opts);
  const auto& z = tape.value(logits);
  out.logits = {static_cast<double>(z[0]), static_cast<double>(z[1])};
  return out;
}

std::array<double, 2> forward_logits(const ModelRecord& model, const dyck::TokenizedSequence& input,
                                     const HeadMask* uniform) {
  ad::Tape<float> tape;
  ForwardOptions opts;
  opts.uniform = uniform;
  const auto logits = build_forward(tape, model, input, opts);
  const auto& z = tape.value(logits);
  return {static_cast<double>(z[0]), static_cast<double>(z[1])};
}

Prediction prediction_from_logits(const std::array<double, 2>& logits) {
  const double p = 1.0 / (1.0 + std::exp(logits[0] - logits[1]));
  return {dyck::to_label(p > 0.5), p};
}

Prediction predict(const ModelRecord& model, const dyck::ParenSequence& seq, const HeadMask* uniform) {
  return prediction_from_logits(forward_logits(model, dyck::tokenize(seq), uniform));
}

EosAttentionRow eos_attention_row(const AttentionCapture& capture, int layer, int head, int n) {
  if (layer < 0 || layer >= capture.depth || head < 0 || head >= capture.heads) {
    throw std::out_of_range("eos_attention_row: head (" + std::to_string(layer) + ", " + std::to_string(head) + ") out of range");
  }
  if (n < 0 || n + 1 >= capture.seq_len) throw std::out_of_range("eos_attention_row: sequence length out of range");
  EosAttentionRow row{layer, head, {}};
  row.values.reserve(n);
  for (int i = 1; i <= n; ++i) row.values.push_back(capture.at(layer, head, n + 1, i));
  return row;
}

template Model<float> zeros_model<float>(const HyperParams&);
template Model<double> zeros_model<double>(const HyperParams&);
template struct Model<float>;
template struct Model<double>;
template Model<double> Model<float>::cast<double>() const;
template Model<float> Model<double>::cast<float>() const;
template Model<float> Model<float>::cast<float>() const;
template ad::Var build_forward<float>(ad::Tape<float>&, const Model<float>&, const dyck::TokenizedSequence&,
                                      const ForwardOptions&, std::vector<ad::Var>*);
template ad::Var build_forward<double>(ad::Tape<double>&, const Model<double>&, const dyck::TokenizedSequence&,
                                       const ForwardOptions&, std::vector<ad::Var>*);

}  // namespace ambl::model
