// pesentry - static PE malware/ransomware detection toolkit
// Dense row-major matrix kernels used by the MLP.
//
// The OpenMP kernels split work by output row only, so every output element is
// accumulated by one thread in a fixed order: results are bit-identical for any
// thread count. The *_serial variants are plain triple loops kept as references
// for tests and the benchmark.

#pragma once

#include <cstddef>
#include <span>

namespace pesentry::kernels {

/// C[m x n] = A[m x k] * B[n x k]^T
void matmul_abt(std::span<const double> a, std::span<const double> b, std::span<double> c,
                std::size_t m, std::size_t k, std::size_t n);
/// C[m x n] = A[m x k] * B[k x n]
void matmul_ab(std::span<const double> a, std::span<const double> b, std::span<double> c,
               std::size_t m, std::size_t k, std::size_t n);
/// C[m x n] = A[k x m]^T * B[k x n]
void matmul_atb(std::span<const double> a, std::span<const double> b, std::span<double> c,
                std::size_t m, std::size_t k, std::size_t n);

void matmul_abt_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                       std::size_t m, std::size_t k, std::size_t n);
void matmul_ab_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                      std::size_t m, std::size_t k, std::size_t n);
void matmul_atb_serial(std::span<const double> a, std::span<const double> b, std::span<double> c,
                       std::size_t m, std::size_t k, std::size_t n);

/// Sets the OpenMP worker count; 0 leaves the runtime default.
void set_thread_count(int threads);
int thread_count();

} // namespace pesentry::kernels
