#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "omni/tensor.hpp"

namespace omni::numerics::kernels {

// Work threshold (multiply count) above which the OpenMP paths engage.
// Both paths partition work by output element with a fixed per-element
// accumulation order, so serial and parallel results are bit-identical
// and the dispatch never affects reproducibility.
inline constexpr std::size_t kParallelWorkThreshold = 32768;

// Serial reference kernels. Kept as the ground truth the parallel
// versions are tested and benchmarked against.
void matmul_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n);
void matmul_nt_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n);
void matmul_tn_serial(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
                      std::size_t n);
void row_softmax_masked_serial(const double* scores, const std::uint8_t* mask, double* out,
                               std::size_t rows, std::size_t cols);

// OpenMP kernels (fall back to the serial loops when built without OpenMP).
void matmul_parallel(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n);
void matmul_nt_parallel(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t n);
void matmul_tn_parallel(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
                        std::size_t n);
void row_softmax_masked_parallel(const double* scores, const std::uint8_t* mask, double* out,
                                 std::size_t rows, std::size_t cols);

// Shape-checked dispatching wrappers.
Tensor matmul(const Tensor& a, const Tensor& b);     // (m,k)x(k,n) -> (m,n)
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // (m,k)x(n,k) -> (m,n), b transposed
Tensor matmul_tn(const Tensor& a, const Tensor& b);  // (k,m)x(k,n) -> (m,n), a transposed

// Row-wise softmax over entries where mask != 0; masked entries are exactly
// zero. Throws if any row is fully masked.
Tensor row_softmax_masked(const Tensor& scores, const std::vector<std::uint8_t>& mask);

Tensor transpose(const Tensor& a);

}  // namespace omni::numerics::kernels
