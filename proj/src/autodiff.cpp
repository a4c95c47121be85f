#include "ambl/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "ambl/kernels.hpp"
#include "ambl/rng.hpp"

namespace ambl {

std::string shape_string(const std::vector<int>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? ", " : "") << shape[i];
  os << ']';
  return os.str();
}

}  // namespace ambl

namespace ambl::ad {

namespace {

[[noreturn]] void shape_fail(const char* op, const char* operand, const std::string& detail) {
  throw ShapeError(std::string(op) + ": operand '" + operand + "' " + detail);
}

template <typename T>
void require_matrix(const Tensor<T>& x, const char* op, const char* operand) {
  if (x.rank() != 2) shape_fail(op, operand, "must be a matrix, got shape " + shape_string(x.shape()));
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  T* d = dst.data();
  const T* s = src.data();
  for (std::size_t i = 0; i < dst.numel(); ++i) d[i] += s[i];
}

}  // namespace

template <typename T>
Var Tape<T>::constant(Tensor<T> value) {
  return push(std::move(value), false, nullptr, "constant");
}

template <typename T>
Var Tape<T>::parameter(const Tensor<T>& value) {
  Node n;
  n.external = &value;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
const Tensor<T>& Tape<T>::value(Var v) const {
  return node(v).value();
}

template <typename T>
Tensor<T> Tape<T>::grad(Var v) const {
  const Node& n = node(v);
  if (n.grad.empty()) return Tensor<T>(n.value().shape());
  return n.grad;
}

template <typename T>
Tensor<T>& Tape<T>::grad_buffer(int id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor<T>(n.value().shape());
  return n.grad;
}

template <typename T>
Var Tape<T>::push(Tensor<T> value, bool requires_grad, Backward back, const char* op) {
  for (const T x : value.values()) {
    if (!std::isfinite(x)) throw NumericError(std::string(op) + ": non-finite output");
  }
  Node n;
  n.owned = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
void Tape<T>::backward(Var loss) {
  const Node& target = node(loss);
  if (target.value().numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_string(target.value().shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor<T>();
  grad_buffer(loss.id)[0] = T{1};
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.back) continue;
    n.back(*this, id);
  }
}

// ---------------------------------------------------------------------------

template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require_matrix(A, "matmul", "a");
  require_matrix(B, "matmul", "b");
  const int m = A.dim(0), k = A.dim(1), n = B.dim(1);
  if (B.dim(0) != k) shape_fail("matmul", "b", "has shape " + shape_string(B.shape()) + ", inner dimension must be " + std::to_string(k));
  Tensor<T> out({m, n});
  kernels::gemm<T>(A.span(), B.span(), out.span(), m, k, n, false);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b, m, k, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad_buffer(self);
    if (tp.requires_grad(a)) kernels::gemm_bt<T>(g.span(), tp.value(b).span(), tp.grad_buffer(a.id).span(), m, n, k, true);
    if (tp.requires_grad(b)) kernels::gemm_at<T>(tp.value(a).span(), g.span(), tp.grad_buffer(b.id).span(), m, k, n, true);
  }, "matmul");
}

template <typename T>
Var matmul_bt(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  require_matrix(A, "matmul_bt", "a");
  require_matrix(B, "matmul_bt", "b");
  const int m = A.dim(0), k = A.dim(1), n = B.dim(0);
  if (B.dim(1) != k) shape_fail("matmul_bt", "b", "has shape " + shape_string(B.shape()) + ", trailing dimension must be " + std::to_string(k));
  Tensor<T> out({m, n});
  kernels::gemm_bt<T>(A.span(), B.span(), out.span(), m, k, n, false);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b, m, k, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad_buffer(self);
    if (tp.requires_grad(a)) kernels::gemm<T>(g.span(), tp.value(b).span(), tp.grad_buffer(a.id).span(), m, n, k, true);
    if (tp.requires_grad(b)) kernels::gemm_at<T>(g.span(), tp.value(a).span(), tp.grad_buffer(b.id).span(), m, n, k, true);
  }, "matmul_bt");
}

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const auto& A = t.value(a);
  const auto& B = t.value(b);
  if (A.shape() != B.shape()) shape_fail("add", "b", "has shape " + shape_string(B.shape()) + ", expected " + shape_string(A.shape()));
  Tensor<T> out = A;
  add_into(out, B);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(out), rg, [a, b](Tape<T>& tp, int self) {
    const auto& g = tp.grad_buffer(self);
    if (tp.requires_grad(a)) add_into(tp.grad_buffer(a.id), g);
    if (tp.requires_grad(b)) add_into(tp.grad_buffer(b.id), g);
  }, "add");
}

template <typename T>
Var add_bias(Tape<T>& t, Var a, Var bias) {
  const auto& A = t.value(a);
  const auto& Bv = t.value(bias);
  require_matrix(A, "add_bias", "a");
  const int m = A.dim(0), n = A.dim(1);
  if (Bv.rank() != 1 || Bv.dim(0) != n) shape_fail("add_bias", "bias", "has shape " + shape_string(Bv.shape()) + ", expected [" + std::to_string(n) + "]");
  Tensor<T> out = A;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) out.at(i, j) += Bv[j];
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(bias);
  return t.push(std::move(out), rg, [a, bias, m, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad_buffer(self);
    if (tp.requires_grad(a)) add_into(tp.grad_buffer(a.id), g);
    if (tp.requires_grad(bias)) {
      auto& gb = tp.grad_buffer(bias.id);
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) gb[j] += g.at(i, j);
      }
    }
  }, "add_bias");
}

template <typename T>
Var scale(Tape<T>& t, Var a, T factor) {
  Tensor<T> out = t.value(a);
  for (T& x : out.values()) x *= factor;
  return t.push(std::move(out), t.requires_grad(a), [a, factor](Tape<T>& tp, int self) {
    const auto& g = tp.grad_buffer(self);
    auto& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += factor * g[i];
  }, "scale");
}

template <typename T>
Var embedding(Tape<T>& t, Var table, std::span<const int> ids) {
  const auto& E = t.value(table);
  require_matrix(E, "embedding", "table");
  const int vocab = E.dim(0), d = E.dim(1);
  if (ids.empty()) shape_fail("embedding", "ids", "must be non-empty");
  const int rows = static_cast<int>(ids.size());
  Tensor<T> out({rows, d});
  for (int r = 0; r < rows; ++r) {
    if (ids[r] < 0 || ids[r] >= vocab) shape_fail("embedding", "ids", "contains index " + std::to_string(ids[r]) + " outside vocabulary of " + std::to_string(vocab));
    std::copy_n(E.data() + static_cast<std::size_t>(ids[r]) * d, d, out.data() + static_cast<std::size_t>(r) * d);
  }
  std::vector<int> saved(ids.begin(), ids.end());
  return t.push(std::move(out), t.requires_grad(table), [table, saved = std::move(saved), d](Tape<T>& tp, int self) {
    const auto& g = tp.grad_buffer(self);
    auto& ge = tp.grad_buffer(table.id);
    for (std::size_t r = 0; r < saved.size(); ++r) {
      for (int j = 0; j < d; ++j) ge[static_cast<std::size_t>(saved[r]) * d + j] += g[r * d + j];
    }
  }, "embedding");
}

template <typename T>
Var layer_norm(Tape<T>& t, Var x, Var gain, Var bias) {
  const auto& X = t.value(x);
  require_matrix(X, "layer_norm", "x");
  const int m = X.dim(0), n = X.dim(1);
  for (auto [v, name] : {std::pair{gain, "gain"}, std::pair{bias, "bias"}}) {
    const auto& P = t.value(v);
    if (P.rank() != 1 || P.dim(0) != n) shape_fail("layer_norm", name, "has shape " + shape_string(P.shape()) + ", expected [" + std::to_string(n) + "]");
  }
  Tensor<T> out({m, n});
  std::vector<T> mean(m), rstd(m);
  kernels::layer_norm<T>(X.span(), t.value(gain).span(), t.value(bias).span(), out.span(), mean, rstd, m, n,
                         static_cast<T>(kLayerNormVarianceFloor));
  const bool rg = t.requires_grad(x) || t.requires_grad(gain) || t.requires_grad(bias);
  return t.push(std::move(out), rg, [x, gain, bias, m, n, mean = std::move(mean), rstd = std::move(rstd)](Tape<T>& tp, int self) {
    const auto& g = tp.grad_buffer(self);
    const auto& X = tp.value(x);
    const auto& G = tp.value(gain);
    Tensor<T>* gx = tp.requires_grad(x) ? &tp.grad_buffer(x.id) : nullptr;
    Tensor<T>* gg = tp.requires_grad(gain) ? &tp.grad_buffer(gain.id) : nullptr;
    Tensor<T>* gbias = tp.requires_grad(bias) ? &tp.grad_buffer(bias.id) : nullptr;
    std::vector<T> xhat(n), dxhat(n);
    for (int i = 0; i < m; ++i) {
      T mean_d = 0, mean_dx = 0;
      for (int j = 0; j < n; ++j) {
        xhat[j] = (X.at(i, j) - mean[i]) * rstd[i];
        dxhat[j] = g.at(i, j) * G[j];
        mean_d += dxhat[j];
        mean_dx += dxhat[j] * xhat[j];
        if (gg) (*gg)[j] += g.at(i, j) * xhat[j];
        if (gbias) (*gbias)[j] += g.at(i, j);
      }
      mean_d /= n;
      mean_dx /= n;
      if (gx) {
        for (int j = 0; j < n; ++j) gx->at(i, j) += rstd[i] * (dxhat[j] - mean_d - xhat[j] * mean_dx);
      }
    }
  }, "layer_norm");
}

template <typename T>
T gelu_value(T x) {
  const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
  return T{0.5} * x * (T{1} + std::tanh(c * (x + T{0.044715} * x * x * x)));
}

template <typename T>
Var gelu(Tape<T>& t, Var x) {
  Tensor<T> out = t.value(x);
  for (T& v : out.values()) v = gelu_value(v);
  return t.push(std::move(out), t.requires_grad(x), [x](Tape<T>& tp, int self) {
    const T c = static_cast<T>(std::sqrt(2.0 / std::numbers::pi));
    const auto& g = tp.grad_buffer(self);
    const auto& X = tp.value(x);
    auto& gx = tp.grad_buffer(x.id);
    for (std::size_t i = 0; i < X.numel(); ++i) {
      const T v = X[i];
      const T th = std::tanh(c * (v + T{0.044715} * v * v * v));
      const T d = T{0.5} * (T{1} + th) + T{0.5} * v * (T{1} - th * th) * c * (T{1} + T{3} * T{0.044715} * v * v);
      gx[i] += g[i] * d;
    }
  }, "gelu");
}

template <typename T>
Var causal_softmax(Tape<T>& t, Var scores, int first_row) {
  const auto& S = t.value(scores);
  require_matrix(S, "causal_softmax", "scores");
  const int rows = S.dim(0), cols = S.dim(1);
  if (first_row < 0 || first_row + rows > cols) shape_fail("causal_softmax", "scores", "rows at offset " + std::to_string(first_row) + " exceed " + std::to_string(cols) + " key positions");
  Tensor<T> out({rows, cols});
  kernels::causal_softmax<T>(S.span(), out.span(), rows, cols, first_row);
  return t.push(std::move(out), t.requires_grad(scores), [scores, rows, cols](Tape<T>& tp, int self) {
    const auto& g = tp.grad_buffer(self);
    const auto& Y = tp.value(Var{self});
    auto& gs = tp.grad_buffer(scores.id);
    for (int r = 0; r < rows; ++r) {
      T dot = 0;
      for (int j = 0; j < cols; ++j) dot += Y.at(r, j) * g.at(r, j);
      for (int j = 0; j < cols; ++j) gs.at(r, j) += Y.at(r, j) * (g.at(r, j) - dot);
    }
  }, "causal_softmax");
}

template <typename T>
Var cross_entropy(Tape<T>& t, Var logits, int target) {
  const auto& Z = t.value(logits);
  const int c = static_cast<int>(Z.numel());
  if (Z.rank() == 2 && Z.dim(0) != 1) shape_fail("cross_entropy", "logits", "must be a single row, got shape " + shape_string(Z.shape()));
  if (target < 0 || target >= c) shape_fail("cross_entropy", "target", "index " + std::to_string(target) + " outside " + std::to_string(c) + " classes");
  const T mx = *std::max_element(Z.values().begin(), Z.values().end());
  T sum = 0;
  for (int j = 0; j < c; ++j) sum += std::exp(Z[j] - mx);
  const T lse = mx + std::log(sum);
  Tensor<T> out({1}, std::vector<T>{lse - Z[target]});
  return t.push(std::move(out), t.requires_grad(logits), [logits, target, lse, c](Tape<T>& tp, int self) {
    const T g = tp.grad_buffer(self)[0];
    const auto& Z = tp.value(logits);
    auto& gz = tp.grad_buffer(logits.id);
    for (int j = 0; j < c; ++j) gz[j] += g * (std::exp(Z[j] - lse) - (j == target ? T{1} : T{0}));
  }, "cross_entropy");
}

template <typename T>
Var slice_cols(Tape<T>& t, Var a, int begin, int width) {
  const auto& A = t.value(a);
  require_matrix(A, "slice_cols", "a");
  const int m = A.dim(0), n = A.dim(1);
  if (begin < 0 || width <= 0 || begin + width > n) shape_fail("slice_cols", "a", "cannot take columns [" + std::to_string(begin) + ", " + std::to_string(begin + width) + ") of " + shape_string(A.shape()));
  Tensor<T> out({m, width});
  for (int i = 0; i < m; ++i) std::copy_n(A.data() + static_cast<std::size_t>(i) * n + begin, width, out.data() + static_cast<std::size_t>(i) * width);
  return t.push(std::move(out), t.requires_grad(a), [a, begin, width, m, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad_buffer(self);
    auto& ga = tp.grad_buffer(a.id);
    for (int i = 0; i < m; ++i) {
      for (int j = 0; j < width; ++j) ga[static_cast<std::size_t>(i) * n + begin + j] += g[static_cast<std::size_t>(i) * width + j];
    }
  }, "slice_cols");
}

template <typename T>
Var concat_cols(Tape<T>& t, std::span<const Var> parts) {
  if (parts.empty()) shape_fail("concat_cols", "parts", "must be non-empty");
  const int m = t.value(parts[0]).dim(0);
  int n = 0;
  bool rg = false;
  for (const Var p : parts) {
    const auto& P = t.value(p);
    require_matrix(P, "concat_cols", "part");
    if (P.dim(0) != m) shape_fail("concat_cols", "part", "has " + std::to_string(P.dim(0)) + " rows, expected " + std::to_string(m));
    n += P.dim(1);
    rg = rg || t.requires_grad(p);
  }
  Tensor<T> out({m, n});
  int offset = 0;
  for (const Var p : parts) {
    const auto& P = t.value(p);
    const int w = P.dim(1);
    for (int i = 0; i < m; ++i) std::copy_n(P.data() + static_cast<std::size_t>(i) * w, w, out.data() + static_cast<std::size_t>(i) * n + offset);
    offset += w;
  }
  std::vector<Var> saved(parts.begin(), parts.end());
  return t.push(std::move(out), rg, [saved = std::move(saved), m, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad_buffer(self);
    int offset = 0;
    for (const Var p : saved) {
      const int w = tp.value(p).dim(1);
      if (tp.requires_grad(p)) {
        auto& gp = tp.grad_buffer(p.id);
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < w; ++j) gp[static_cast<std::size_t>(i) * w + j] += g[static_cast<std::size_t>(i) * n + offset + j];
        }
      }
      offset += w;
    }
  }, "concat_cols");
}

template <typename T>
Var select_rows(Tape<T>& t, Var a, int begin, int count) {
  const auto& A = t.value(a);
  require_matrix(A, "select_rows", "a");
  const int m = A.dim(0), n = A.dim(1);
  if (begin < 0 || count <= 0 || begin + count > m) shape_fail("select_rows", "a", "cannot take rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) + ") of " + shape_string(A.shape()));
  Tensor<T> out({count, n});
  std::copy_n(A.data() + static_cast<std::size_t>(begin) * n, static_cast<std::size_t>(count) * n, out.data());
  return t.push(std::move(out), t.requires_grad(a), [a, begin, n](Tape<T>& tp, int self) {
    const auto& g = tp.grad_buffer(self);
    auto& ga = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.numel(); ++i) ga[static_cast<std::size_t>(begin) * n + i] += g[i];
  }, "select_rows");
}

template <typename T>
Var sum(Tape<T>& t, Var a) {
  T s = 0;
  for (const T x : t.value(a).values()) s += x;
  return t.push(Tensor<T>({1}, std::vector<T>{s}), t.requires_grad(a), [a](Tape<T>& tp, int self) {
    const T g = tp.grad_buffer(self)[0];
    for (T& x : tp.grad_buffer(a.id).values()) x += g;
  }, "sum");
}

GradCheckResult grad_check(const std::function<double()>& f, std::span<const std::span<double>> params,
                           std::span<const std::span<const double>> analytic, double eps, int samples,
                           uint64_t seed) {
  if (params.size() != analytic.size()) throw std::invalid_argument("grad_check: parameter/gradient group count mismatch");
  std::vector<std::pair<std::size_t, std::size_t>> coords;
  for (std::size_t g = 0; g < params.size(); ++g) {
    if (params[g].size() != analytic[g].size()) throw std::invalid_argument("grad_check: group size mismatch");
    for (std::size_t i = 0; i < params[g].size(); ++i) coords.emplace_back(g, i);
  }
  std::size_t take = coords.size();
  if (samples > 0 && static_cast<std::size_t>(samples) < coords.size()) {
    // Partial Fisher-Yates: the first `samples` entries become a uniform subset.
    Rng rng(seed);
    take = static_cast<std::size_t>(samples);
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + uniform_below(rng, coords.size() - i);
      std::swap(coords[i], coords[j]);
    }
  }
  GradCheckResult result;
  for (std::size_t c = 0; c < take; ++c) {
    auto [g, i] = coords[c];
    double& x = params[g][i];
    const double saved = x;
    x = saved + eps;
    const double plus = f();
    x = saved - eps;
    const double minus = f();
    x = saved;
    const double numeric = (plus - minus) / (2.0 * eps);
    const double a = analytic[g][i];
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
    result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
  }
  result.coordinates = take;
  return result;
}

#define AMBL_INSTANTIATE(T)                                                  \
  template class Tape<T>;                                                    \
  template Var matmul<T>(Tape<T>&, Var, Var);                                \
  template Var matmul_bt<T>(Tape<T>&, Var, Var);                             \
  template Var add<T>(Tape<T>&, Var, Var);                                   \
  template Var add_bias<T>(Tape<T>&, Var, Var);                              \
  template Var scale<T>(Tape<T>&, Var, T);                                   \
  template Var embedding<T>(Tape<T>&, Var, std::span<const int>);            \
  template Var layer_norm<T>(Tape<T>&, Var, Var, Var);                       \
  template Var gelu<T>(Tape<T>&, Var);                                       \
  template Var causal_softmax<T>(Tape<T>&, Var, int);                        \
  template Var cross_entropy<T>(Tape<T>&, Var, int);                         \
  template Var slice_cols<T>(Tape<T>&, Var, int, int);                       \
  template Var concat_cols<T>(Tape<T>&, std::span<const Var>);               \
  template Var select_rows<T>(Tape<T>&, Var, int, int);                      \
  template Var sum<T>(Tape<T>&, Var);                                        \
  template T gelu_value<T>(T);

AMBL_INSTANTIATE(float)
AMBL_INSTANTIATE(double)
#undef AMBL_INSTANTIATE

}  // namespace ambl::ad
