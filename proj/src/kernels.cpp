#include "omni/kernels.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace omni::numerics::kernels {

namespace {

inline void matmul_row(const double* a, const double* b, double* c, std::size_t i, std::size_t k,
                       std::size_t n) {
  double* ci = c + i * n;
  for (std::size_t j = 0; j < n; ++j) ci[j] = 0.0;
  const double* ai = a + i * k;
  for (std::size_t p = 0; p < k; ++p) {
    const double aip = ai[p];
    const double* bp = b + p * n;
    for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
  }
}

inline void matmul_nt_row(const double* a, const double* b, double* c, std::size_t i,
                          std::size_t k, std::size_t n) {
  const double* ai = a + i * k;
  double* ci = c + i * n;
  for (std::size_t j = 0; j < n; ++j) {
    const double* bj = b + j * k;
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
    ci[j] = acc;
  }
}

inline void matmul_tn_row(const double* a, const double* b, double* c, std::size_t i,
                          std::size_t k, std::size_t m, std::size_t n) {
  double* ci = c + i * n;
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += a[p * m + i] * b[p * n + j];
    ci[j] = acc;
  }
}

// Callers must reject fully-masked rows before entering a parallel region;
// throwing from inside one is undefined behavior.
inline void check_softmax_rows(const std::uint8_t* mk, std::size_t rows, std::size_t cols) {
  for (std::size_t i = 0; i < rows; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < cols; ++j) {
      if (mk[i * cols + j]) {
        any = true;
        break;
      }
    }
    if (!any) {
      throw std::invalid_argument("softmax row " + std::to_string(i) +
                                  " is fully masked (isolated node / empty attention row)");
    }
  }
}

inline void softmax_row(const double* s, const std::uint8_t* mk, double* o, std::size_t i,
                        std::size_t cols) {
  const double* si = s + i * cols;
  const std::uint8_t* mi = mk + i * cols;
  double* oi = o + i * cols;
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < cols; ++j) {
    if (mi[j] && si[j] > mx) mx = si[j];
  }
  double denom = 0.0;
  for (std::size_t j = 0; j < cols; ++j) {
    if (mi[j]) {
      oi[j] = std::exp(si[j] - mx);
      denom += oi[j];
    } else {
      oi[j] = 0.0;
    }
  }
  for (std::size_t j = 0; j < cols; ++j) {
    if (mi[j]) oi[j] /= denom;
  }
}

}  // namespace

void matmul_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                   std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_row(a, b, c, i, k, n);
}

void matmul_nt_serial(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                      std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_nt_row(a, b, c, i, k, n);
}

void matmul_tn_serial(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
                      std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) matmul_tn_row(a, b, c, i, k, m, n);
}

void row_softmax_masked_serial(const double* scores, const std::uint8_t* mask, double* out,
                               std::size_t rows, std::size_t cols) {
  check_softmax_rows(mask, rows, cols);
  for (std::size_t i = 0; i < rows; ++i) softmax_row(scores, mask, out, i, cols);
}

void matmul_parallel(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                     std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    matmul_row(a, b, c, static_cast<std::size_t>(i), k, n);
  }
}

void matmul_nt_parallel(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                        std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    matmul_nt_row(a, b, c, static_cast<std::size_t>(i), k, n);
  }
}

void matmul_tn_parallel(const double* a, const double* b, double* c, std::size_t k, std::size_t m,
                        std::size_t n) {
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(m); ++i) {
    matmul_tn_row(a, b, c, static_cast<std::size_t>(i), k, m, n);
  }
}

void row_softmax_masked_parallel(const double* scores, const std::uint8_t* mask, double* out,
                                 std::size_t rows, std::size_t cols) {
  check_softmax_rows(mask, rows, cols);
#pragma omp parallel for schedule(static)
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(rows); ++i) {
    softmax_row(scores, mask, out, static_cast<std::size_t>(i), cols);
  }
}

namespace {

void check_matmul_shapes(const Tensor& a, const Tensor& b, std::size_t a_inner,
                         std::size_t b_inner, const char* what) {
  if (a.rank() != 2 || b.rank() != 2 || a_inner != b_inner) {
    throw std::invalid_argument(std::string(what) + ": incompatible shapes " + a.shape_str() +
                                " and " + b.shape_str());
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_matmul_shapes(a, b, a.cols(), b.rows(), "matmul");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor c = Tensor::zeros({m, n});
  if (m * k * n >= kParallelWorkThreshold && m > 1) {
    matmul_parallel(a.data().data(), b.data().data(), c.data().data(), m, k, n);
  } else {
    matmul_serial(a.data().data(), b.data().data(), c.data().data(), m, k, n);
  }
  c.check_finite("matmul");
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_matmul_shapes(a, b, a.cols(), b.cols(), "matmul_nt");
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  Tensor c = Tensor::zeros({m, n});
  if (m * k * n >= kParallelWorkThreshold && m > 1) {
    matmul_nt_parallel(a.data().data(), b.data().data(), c.data().data(), m, k, n);
  } else {
    matmul_nt_serial(a.data().data(), b.data().data(), c.data().data(), m, k, n);
  }
  c.check_finite("matmul_nt");
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  check_matmul_shapes(a, b, a.rows(), b.rows(), "matmul_tn");
  const std::size_t k = a.rows(), m = a.cols(), n = b.cols();
  Tensor c = Tensor::zeros({m, n});
  if (m * k * n >= kParallelWorkThreshold && m > 1) {
    matmul_tn_parallel(a.data().data(), b.data().data(), c.data().data(), k, m, n);
  } else {
    matmul_tn_serial(a.data().data(), b.data().data(), c.data().data(), k, m, n);
  }
  c.check_finite("matmul_tn");
  return c;
}

Tensor row_softmax_masked(const Tensor& scores, const std::vector<std::uint8_t>& mask) {
  if (scores.rank() != 2 || mask.size() != scores.numel()) {
    throw std::invalid_argument("row_softmax_masked: mask size does not match scores " +
                                scores.shape_str());
  }
  const std::size_t r = scores.rows(), c = scores.cols();
  Tensor out = Tensor::zeros({r, c});
  if (r * c >= kParallelWorkThreshold && r > 1) {
    row_softmax_masked_parallel(scores.data().data(), mask.data(), out.data().data(), r, c);
  } else {
    row_softmax_masked_serial(scores.data().data(), mask.data(), out.data().data(), r, c);
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  const std::size_t r = a.rows(), c = a.cols();
  Tensor t = Tensor::zeros({c, r});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) t.at2(j, i) = a.at2(i, j);
  return t;
}

}  // namespace omni::numerics::kernels
