#include "ambl/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace ambl::kernels {

namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr long kParallelWork = 1L << 16;

template <typename T>
inline void axpy(T alpha, const T* __restrict x, T* __restrict y, int n) {
  for (int j = 0; j < n; ++j) y[j] += alpha * x[j];
}

}  // namespace

template <typename T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate) {
  const T* A = a.data();
  const T* B = b.data();
  T* C = c.data();
  const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int i = 0; i < m; ++i) {
    T* row = C + static_cast<long>(i) * n;
    if (!accumulate) std::fill(row, row + n, T{0});
    const T* arow = A + static_cast<long>(i) * k;
    for (int p = 0; p < k; ++p) axpy(arow[p], B + static_cast<long>(p) * n, row, n);
  }
}

template <typename T>
void gemm_bt(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate) {
  // Transposing b turns the row dot products into contiguous axpy sweeps.
  std::vector<T> bt(static_cast<std::size_t>(k) * n);
  for (int j = 0; j < n; ++j) {
    for (int p = 0; p < k; ++p) bt[static_cast<std::size_t>(p) * n + j] = b[static_cast<std::size_t>(j) * k + p];
  }
  gemm<T>(a, bt, c, m, k, n, accumulate);
}

template <typename T>
void gemm_at(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate) {
  const T* A = a.data();
  const T* B = b.data();
  T* C = c.data();
  const long work = static_cast<long>(m) * k * n;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int p = 0; p < k; ++p) {
    T* row = C + static_cast<long>(p) * n;
    if (!accumulate) std::fill(row, row + n, T{0});
    for (int i = 0; i < m; ++i) {
      const T coef = A[static_cast<long>(i) * k + p];
      if (coef != T{0}) axpy(coef, B + static_cast<long>(i) * n, row, n);
    }
  }
}

template <typename T>
void causal_softmax(std::span<const T> scores, std::span<T> out, int rows, int cols, int first_row) {
  const long work = static_cast<long>(rows) * cols * 16;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int r = 0; r < rows; ++r) {
    const T* s = scores.data() + static_cast<long>(r) * cols;
    T* o = out.data() + static_cast<long>(r) * cols;
    const int visible = std::min(cols, first_row + r + 1);
    T mx = -std::numeric_limits<T>::infinity();
    for (int j = 0; j < visible; ++j) mx = std::max(mx, s[j]);
    T sum = 0;
    for (int j = 0; j < visible; ++j) {
      o[j] = std::exp(s[j] - mx);
      sum += o[j];
    }
    const T inv = T{1} / sum;
    for (int j = 0; j < visible; ++j) o[j] *= inv;
    std::fill(o + visible, o + cols, T{0});
  }
}

template <typename T>
void layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, std::span<T> y,
                std::span<T> mean, std::span<T> rstd, int rows, int cols, T var_floor) {
  const long work = static_cast<long>(rows) * cols * 8;
#pragma omp parallel for schedule(static) if (work > kParallelWork)
  for (int r = 0; r < rows; ++r) {
    const T* xr = x.data() + static_cast<long>(r) * cols;
    T* yr = y.data() + static_cast<long>(r) * cols;
    T mu = 0;
    for (int j = 0; j < cols; ++j) mu += xr[j];
    mu /= cols;
    T var = 0;
    for (int j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= cols;
    const T rs = T{1} / std::sqrt(var + var_floor);
    for (int j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
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

}  // namespace ambl::kernels
