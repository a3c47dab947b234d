// Benchmark of the OpenMP kernels against their serial references.
// The parallel paths partition work by output element, so outputs must be
// bit-identical; the max |diff| column double-checks that.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "omni/kernels.hpp"
#include "omni/rng.hpp"
#include "omni/tensor.hpp"

using namespace omni::numerics;
namespace chrono = std::chrono;

namespace {

double ms_since(chrono::high_resolution_clock::time_point t0) {
  return chrono::duration<double, std::milli>(chrono::high_resolution_clock::now() - t0).count();
}

Tensor random_matrix(std::size_t r, std::size_t c, SplitMix64& rng) {
  Tensor t = Tensor::zeros({r, c});
  for (std::size_t i = 0; i < t.numel(); ++i) t.at(i) = rng.uniform(-1.0, 1.0);
  return t;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) {
    const double d = a.at(i) - b.at(i);
    worst = std::max(worst, d < 0 ? -d : d);
  }
  return worst;
}

template <typename F>
double time_best_of(F&& f, int reps) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = chrono::high_resolution_clock::now();
    f();
    best = std::min(best, ms_since(t0));
  }
  return best;
}

void bench_matmul(std::size_t n, SplitMix64& rng) {
  const Tensor a = random_matrix(n, n, rng);
  const Tensor b = random_matrix(n, n, rng);
  Tensor serial = Tensor::zeros({n, n});
  Tensor parallel = Tensor::zeros({n, n});

  const int reps = n <= 256 ? 5 : 3;
  const double t_serial = time_best_of(
      [&] {
        kernels::matmul_serial(a.data().data(), b.data().data(), serial.data().data(), n, n, n);
      },
      reps);
  const double t_parallel = time_best_of(
      [&] {
        kernels::matmul_parallel(a.data().data(), b.data().data(), parallel.data().data(), n, n,
                                 n);
      },
      reps);
  std::printf("matmul      %5zu x %-5zu  serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx"
              "  max|diff| %g\n",
              n, n, t_serial, t_parallel, t_serial / t_parallel,
              max_abs_diff(serial, parallel));
}

void bench_softmax(std::size_t rows, std::size_t cols, SplitMix64& rng) {
  const Tensor scores = random_matrix(rows, cols, rng);
  std::vector<std::uint8_t> mask(rows * cols, 0);
  for (std::size_t i = 0; i < rows; ++i) {
    mask[i * cols + rng.next_below(cols)] = 1;
    for (std::size_t j = 0; j < cols; ++j)
      if (rng.next_double() < 0.5) mask[i * cols + j] = 1;
  }
  Tensor serial = Tensor::zeros({rows, cols});
  Tensor parallel = Tensor::zeros({rows, cols});

  const double t_serial = time_best_of(
      [&] {
        kernels::row_softmax_masked_serial(scores.data().data(), mask.data(),
                                           serial.data().data(), rows, cols);
      },
      5);
  const double t_parallel = time_best_of(
      [&] {
        kernels::row_softmax_masked_parallel(scores.data().data(), mask.data(),
                                             parallel.data().data(), rows, cols);
      },
      5);
  std::printf("row_softmax %5zu x %-5zu  serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx"
              "  max|diff| %g\n",
              rows, cols, t_serial, t_parallel, t_serial / t_parallel,
              max_abs_diff(serial, parallel));
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads: %d\n\n", omp_get_max_threads());
#else
  std::printf("built without OpenMP; parallel kernels run their serial loops\n\n");
#endif

  SplitMix64 rng(1234);
  for (std::size_t n : {64, 128, 256, 512}) bench_matmul(n, rng);
  std::printf("\n");
  for (std::size_t n : {256, 512, 1024}) bench_softmax(n, n, rng);
  return 0;
}
