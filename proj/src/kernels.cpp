#include "i2p/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <vector>

namespace i2p::kernels {

namespace {

std::atomic<int> g_thread_cap{0};

constexpr std::size_t kGemmParallelWork = std::size_t{1} << 16;
constexpr std::size_t kPointParallelWork = std::size_t{1} << 14;

template <typename T>
std::vector<T> transposed(const T* src, std::size_t rows, std::size_t cols) {
    std::vector<T> out(rows * cols);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = src[r * cols + c];
    return out;
}

// Row i of C from A (M x K, row-major) and B (K x N, row-major). The k loop
// runs in ascending order for every element, which fixes the rounding.
template <typename T>
inline void gemm_row_nn(std::size_t i, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
                        bool accumulate) {
    T* c = C + i * N;
    if (!accumulate) std::fill(c, c + N, T(0));
    const T* a = A + i * K;
    for (std::size_t k = 0; k < K; ++k) {
        const T av = a[k];
        const T* b = B + k * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
}

// Row i of C = A^T B with A stored (K x M).
template <typename T>
inline void gemm_row_tn(std::size_t i, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B,
                        T* C, bool accumulate) {
    T* c = C + i * N;
    if (!accumulate) std::fill(c, c + N, T(0));
    for (std::size_t k = 0; k < K; ++k) {
        const T av = A[k * M + i];
        const T* b = B + k * N;
        for (std::size_t j = 0; j < N; ++j) c[j] += av * b[j];
    }
}

template <typename T, bool Parallel>
void gemm_impl(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
               bool accumulate) {
    std::vector<T> bt;
    if (tb == Trans::T) {
        bt = transposed(B, N, K);
        B = bt.data();
    }
    const auto m = static_cast<std::ptrdiff_t>(M);
    if (ta == Trans::N) {
        if constexpr (Parallel) {
#pragma omp parallel for schedule(static) num_threads(thread_cap())
            for (std::ptrdiff_t i = 0; i < m; ++i) gemm_row_nn(static_cast<std::size_t>(i), N, K, A, B, C, accumulate);
        } else {
            for (std::size_t i = 0; i < M; ++i) gemm_row_nn(i, N, K, A, B, C, accumulate);
        }
    } else {
        if constexpr (Parallel) {
#pragma omp parallel for schedule(static) num_threads(thread_cap())
            for (std::ptrdiff_t i = 0; i < m; ++i)
                gemm_row_tn(static_cast<std::size_t>(i), M, N, K, A, B, C, accumulate);
        } else {
            for (std::size_t i = 0; i < M; ++i) gemm_row_tn(i, M, N, K, A, B, C, accumulate);
        }
    }
}

inline double sq_dist(const float* p, const float q[3]) {
    const double dx = static_cast<double>(p[0]) - q[0];
    const double dy = static_cast<double>(p[1]) - q[1];
    const double dz = static_cast<double>(p[2]) - q[2];
    return dx * dx + dy * dy + dz * dz;
}

inline double dot_row(const float* row, const float* q, std::size_t dim) {
    double s = 0.0;
    for (std::size_t j = 0; j < dim; ++j) s += static_cast<double>(row[j]) * q[j];
    return s;
}

}  // namespace

int thread_cap() {
    int cap = g_thread_cap.load(std::memory_order_relaxed);
    if (cap > 0) return cap;
    cap = omp_get_max_threads();
    if (const char* env = std::getenv("I2P_THREADS")) {
        const int v = std::atoi(env);
        if (v > 0) cap = std::min(cap, v);
    }
    cap = std::max(cap, 1);
    g_thread_cap.store(cap, std::memory_order_relaxed);
    return cap;
}

void set_thread_cap(int threads) { g_thread_cap.store(std::max(threads, 1), std::memory_order_relaxed); }

namespace serial {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
          bool accumulate) {
    gemm_impl<T, false>(ta, tb, M, N, K, A, B, C, accumulate);
}

void squared_distances(std::span<const float> xyz, const float q[3], std::span<double> out) {
    const std::size_t n = xyz.size() / 3;
    for (std::size_t i = 0; i < n; ++i) out[i] = sq_dist(&xyz[3 * i], q);
}

void min_update(std::span<const float> xyz, const float q[3], std::span<double> min_dist) {
    const std::size_t n = xyz.size() / 3;
    for (std::size_t i = 0; i < n; ++i) min_dist[i] = std::min(min_dist[i], sq_dist(&xyz[3 * i], q));
}

void dot_rows(std::span<const float> rows, std::span<const float> q, std::size_t dim, std::span<double> out) {
    const std::size_t n = dim ? rows.size() / dim : 0;
    for (std::size_t i = 0; i < n; ++i) out[i] = dot_row(&rows[i * dim], q.data(), dim);
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, const float*, const float*,
                          float*, bool);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, const double*, const double*,
                           double*, bool);

}  // namespace serial

namespace omp {

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
          bool accumulate) {
    gemm_impl<T, true>(ta, tb, M, N, K, A, B, C, accumulate);
}

void squared_distances(std::span<const float> xyz, const float q[3], std::span<double> out) {
    const auto n = static_cast<std::ptrdiff_t>(xyz.size() / 3);
#pragma omp parallel for schedule(static) num_threads(thread_cap())
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = sq_dist(&xyz[3 * i], q);
}

void min_update(std::span<const float> xyz, const float q[3], std::span<double> min_dist) {
    const auto n = static_cast<std::ptrdiff_t>(xyz.size() / 3);
#pragma omp parallel for schedule(static) num_threads(thread_cap())
    for (std::ptrdiff_t i = 0; i < n; ++i) min_dist[i] = std::min(min_dist[i], sq_dist(&xyz[3 * i], q));
}

void dot_rows(std::span<const float> rows, std::span<const float> q, std::size_t dim, std::span<double> out) {
    const auto n = static_cast<std::ptrdiff_t>(dim ? rows.size() / dim : 0);
#pragma omp parallel for schedule(static) num_threads(thread_cap())
    for (std::ptrdiff_t i = 0; i < n; ++i) out[i] = dot_row(&rows[i * dim], q.data(), dim);
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, const float*, const float*,
                          float*, bool);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, const double*, const double*,
                           double*, bool);

}  // namespace omp

template <typename T>
void gemm(Trans ta, Trans tb, std::size_t M, std::size_t N, std::size_t K, const T* A, const T* B, T* C,
          bool accumulate) {
    if (M * N * K >= kGemmParallelWork && M > 1 && !omp_in_parallel())
        omp::gemm(ta, tb, M, N, K, A, B, C, accumulate);
    else
        serial::gemm(ta, tb, M, N, K, A, B, C, accumulate);
}

void squared_distances(std::span<const float> xyz, const float q[3], std::span<double> out) {
    if (xyz.size() >= kPointParallelWork && !omp_in_parallel())
        omp::squared_distances(xyz, q, out);
    else
        serial::squared_distances(xyz, q, out);
}

void min_update(std::span<const float> xyz, const float q[3], std::span<double> min_dist) {
    if (xyz.size() >= kPointParallelWork && !omp_in_parallel())
        omp::min_update(xyz, q, min_dist);
    else
        serial::min_update(xyz, q, min_dist);
}

void dot_rows(std::span<const float> rows, std::span<const float> q, std::size_t dim, std::span<double> out) {
    if (rows.size() >= kPointParallelWork && !omp_in_parallel())
        omp::dot_rows(rows, q, dim, out);
    else
        serial::dot_rows(rows, q, dim, out);
}

template void gemm<float>(Trans, Trans, std::size_t, std::size_t, std::size_t, const float*, const float*, float*,
                          bool);
template void gemm<double>(Trans, Trans, std::size_t, std::size_t, std::size_t, const double*, const double*,
                           double*, bool);

}  // namespace i2p::kernels
