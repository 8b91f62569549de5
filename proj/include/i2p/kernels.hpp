#pragma once

// Data-parallel inner loops. Every kernel exists twice: a serial reference in
// `kernels::serial` and an OpenMP version in `kernels::omp`. Both evaluate each
// output element with the same floating-point operation order, so their
// results are bit-identical; the tests hold them to that. The unqualified
// entry points dispatch to the OpenMP version above a work threshold.

#include <cstddef>
#include <span>

namespace i2p::kernels {

enum class Trans { N, T };

// Upper bound on OpenMP threads, read from I2P_THREADS on first use.
int thread_cap();
void set_thread_cap(int threads);

namespace serial {

// C (M x N) = op(A) (M x K) * op(B) (K x N), or C += ... when accumulate.
// A and B are densely stored in their untransposed layout.
template <typename T>
void gemm(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
          bool accumulate);

// out[i] = |p_i - q|^2 over a packed xyz array, accumulated in double.
void squared_distances(std::span<const float> xyz, const float q[3], std::span<double> out);

// out[i] = min(out[i], |p_i - q|^2).
void min_update(std::span<const float> xyz, const float q[3], std::span<double> min_dist);

// out[i] = <row_i, q> over a dense (M x D) matrix.
void dot_rows(std::span<const float> rows, std::span<const float> q, std::size_t dim, std::span<double> out);

}  // namespace serial

namespace omp {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
          bool accumulate);
void squared_distances(std::span<const float> xyz, const float q[3], std::span<double> out);
void min_update(std::span<const float> xyz, const float q[3], std::span<double> min_dist);
void dot_rows(std::span<const float> rows, std::span<const float> q, std::size_t dim, std::span<double> out);

}  // namespace omp

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
          bool accumulate);
void squared_distances(std::span<const float> xyz, const float q[3], std::span<double> out);
void min_update(std::span<const float> xyz, const float q[3], std::span<double> min_dist);
void dot_rows(std::span<const float> rows, std::span<const float> q, std::size_t dim, std::span<double> out);

}  // namespace i2p::kernels
