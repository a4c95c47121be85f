#pragma once

#include <span>

// Dense row-major kernels behind the autodiff primitives.
//
// The functions in ambl::kernels are OpenMP-parallel over output rows; each
// output element is produced by one thread with a fixed reduction order, so
// results do not depend on the thread count. ambl::kernels::reference holds
// straightforward serial loops with the same contracts, kept as the test
// oracle and the benchmark baseline.
namespace ambl::kernels {

// c(m×n) = a(m×k) · b(k×n), or c += ... when accumulate is set.
template <typename T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate);

// c(m×n) = a(m×k) · b(n×k)ᵀ
template <typename T>
void gemm_bt(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate);

// c(k×n) = a(m×k)ᵀ · b(m×n)
template <typename T>
void gemm_at(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate);

// Row-wise softmax over a (rows×cols) score block where row r may only see
// columns 0..first_row+r. Masked entries are written as exact zeros.
template <typename T>
void causal_softmax(std::span<const T> scores, std::span<T> out, int rows, int cols, int first_row);

// Row-wise layer norm with gain/bias over the last axis. mean and rstd
// (one per row) are saved for the backward pass.
template <typename T>
void layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, std::span<T> y,
                std::span<T> mean, std::span<T> rstd, int rows, int cols, T var_floor);

namespace reference {

template <typename T>
void gemm(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate);
template <typename T>
void gemm_bt(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate);
template <typename T>
void gemm_at(std::span<const T> a, std::span<const T> b, std::span<T> c, int m, int k, int n, bool accumulate);
template <typename T>
void causal_softmax(std::span<const T> scores, std::span<T> out, int rows, int cols, int first_row);
template <typename T>
void layer_norm(std::span<const T> x, std::span<const T> gain, std::span<const T> bias, std::span<T> y,
                std::span<T> mean, std::span<T> rstd, int rows, int cols, T var_floor);

}  // namespace reference

}  // namespace ambl::kernels
