#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "ambl/tensor.hpp"

namespace ambl::ad {

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Handle to a node on a Tape.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

inline constexpr double kLayerNormVarianceFloor = 1e-5;

// Records primitive applications in execution order so that gradients can be
// propagated in reverse. A tape belongs to a single forward/backward pass.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() { nodes_.reserve(256); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Input that never receives a gradient.
  Var constant(Tensor<T> value);
  // Trainable leaf backed by external storage, which must outlive the tape.
  Var parameter(const Tensor<T>& value);

  const Tensor<T>& value(Var v) const;
  bool requires_grad(Var v) const { return node(v).requires_grad; }

  // Gradient of the last backward() target w.r.t. v; zeros when v is not on
  // any path to it.
  Tensor<T> grad(Var v) const;
  // Direct access to the accumulation buffer (allocated on first use).
  Tensor<T>& grad_buffer(int id);

  // Reverse sweep from a scalar node. Throws ShapeError for non-scalar targets.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

  // Used by primitive implementations.
  Var push(Tensor<T> value, bool requires_grad, Backward back, const char* op);

 private:
  struct Node {
    Tensor<T> owned;
    const Tensor<T>* external = nullptr;
    Tensor<T> grad;
    Backward back;
    bool requires_grad = false;
    const Tensor<T>& value() const { return external ? *external : owned; }
  };

  const Node& node(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size())) throw std::out_of_range("Tape: invalid Var");
    return nodes_[v.id];
  }

  std::vector<Node> nodes_;
};

// Primitives. Matrices are the last two axes of a rank-2 tensor unless noted.
template <typename T> Var matmul(Tape<T>& t, Var a, Var b);     // a(m×k)·b(k×n)
template <typename T> Var matmul_bt(Tape<T>& t, Var a, Var b);  // a(m×k)·b(n×k)ᵀ
template <typename T> Var add(Tape<T>& t, Var a, Var b);
template <typename T> Var add_bias(Tape<T>& t, Var a, Var bias);  // bias broadcast over rows
template <typename T> Var scale(Tape<T>& t, Var a, T factor);
template <typename T> Var embedding(Tape<T>& t, Var table, std::span<const int> ids);
template <typename T> Var layer_norm(Tape<T>& t, Var x, Var gain, Var bias);
template <typename T> Var gelu(Tape<T>& t, Var x);
// scores has one row per query; query r sits at absolute position first_row + r.
template <typename T> Var causal_softmax(Tape<T>& t, Var scores, int first_row = 0);
// Cross entropy of one logit row against a class index (max-shifted log-sum-exp).
template <typename T> Var cross_entropy(Tape<T>& t, Var logits, int target);
template <typename T> Var slice_cols(Tape<T>& t, Var a, int begin, int width);
template <typename T> Var concat_cols(Tape<T>& t, std::span<const Var> parts);
template <typename T> Var select_rows(Tape<T>& t, Var a, int begin, int count);
template <typename T> Var sum(Tape<T>& t, Var a);

// Tanh-approximated GELU on a scalar; exposed for tests.
template <typename T> T gelu_value(T x);

// Central-difference gradient check. f evaluates the scalar objective at the
// current contents of the parameter groups; analytic[g] holds df/dparams[g].
// Returns the largest |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// over distinct sampled coordinates (all coordinates when samples <= 0).
struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t coordinates = 0;
};
GradCheckResult grad_check(const std::function<double()>& f, std::span<const std::span<double>> params,
                           std::span<const std::span<const double>> analytic, double eps, int samples,
                           uint64_t seed);

}  // namespace ambl::ad
