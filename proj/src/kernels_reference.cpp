#include <cmath>
#include <limits>

#include "ambl/kernels.hpp"

namespace ambl::kernels::reference {

template <typename T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T{0};
      for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void gemm_bt(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate) {
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < n; ++j) {
      T acc = accumulate ? c[i * n + j] : T{0};
      for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = acc;
    }
  }
}

template <typename T>
void gemm_at(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate) {
  for (int p = 0; p < k; ++p) {
    for (int j = 0; j < n; ++j) {
      T acc = accumulate ? c[p * n + j] : T{0};
      for (int i = 0; i < m; ++i) acc += a[i * k + p] * b[i * n + j];
      c[p * n + j] = acc;
    }
  }
}

template <typename T>
void causal_softmax(std::span<const T> scores, std::span<T> out, int rows, int cols, int first_row) {
  for (int r = 0; r < rows; ++r) {
    const int visible = std::min(cols, first_row + r + 1);
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < visible; ++j) mx = std::max(mx, scores[r * cols + j]);
    T sum = 0;
    for (int j = 0; j < visible; ++j) sum += std::exp(scores[r * cols + j] - mx);
    for (int j = 0; j < cols; ++j) {
      out[r * cols + j] = j < visible ? std::exp(scores[r * cols + j] - mx) / sum : T{0};
    }
  }
}

template <typename T>
void layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, std::span<T> y,
                std::span<T> mean, std::span<T> rstd, int rows, int cols, T var_floor) {
  for (int r = 0; r < rows; ++r) {
    T mu = 0;
    for (int j = 0; j < cols; ++j) mu += x[r * cols + j];
    mu /= cols;
    T var = 0;
    for (int j = 0; j < cols; ++j) var += (x[r * cols + j] - mu) * (x[r * cols + j] - mu);
    var /= cols;
    const T rs = T{1} / std::sqrt(var + var_floor);
    for (int j = 0; j < cols; ++j) y[r * cols + j] = (x[r * cols + j] - mu) * rs * gain[j] + bias[j];
    mean[r] = mu;
    rstd[r] = rs;
  }
}

#define AMBL_INSTANTIATE(T)                                                                                    \
  template void gemm<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int, bool);            \
  template void gemm_bt<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int, bool);         \
  template void gemm_at<T>(std::span<const T>, std::span<const T>, std::span<T>, int, int, int, bool);         \
  template void causal_softmax<T>(std::span<const T>, std::span<T>, int, int, int);                           \
  template void layer_norm<T>(std::span<const T>, std::span<const T>, std::span<const T>, std::span<T>,        \
                              std::span<T>, std::span<T>, int, int, T);

AMBL_INSTANTIATE(float)
AMBL_INSTANTIATE(double)
#undef AMBL_INSTANTIATE

}  // namespace ambl::kernels::reference
