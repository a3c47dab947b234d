#include "omni/pca.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "omni/kernels.hpp"

namespace omni::numerics {

namespace {
constexpr double kRankEps = 1e-10;
constexpr int kMaxSweeps = 100;
}  // namespace

void jacobi_eigen_sym(const Tensor& a, Tensor& eigenvectors, std::vector<double>& eigenvalues) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("jacobi_eigen_sym: matrix not square");
  Tensor w = a;  // working copy, driven to diagonal
  Tensor v = Tensor::identity(n);

  for (int sweep = 0; sweep < kMaxSweeps; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += w.at2(p, q) * w.at2(p, q);
    if (off < 1e-24) break;

    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = w.at2(p, q);
        if (std::abs(apq) < 1e-300) continue;
        const double app = w.at2(p, p);
        const double aqq = w.at2(q, q);
        const double theta = 0.5 * (aqq - app) / apq;
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        for (std::size_t k = 0; k < n; ++k) {
          const double wkp = w.at2(k, p);
          const double wkq = w.at2(k, q);
          w.at2(k, p) = c * wkp - s * wkq;
          w.at2(k, q) = s * wkp + c * wkq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double wpk = w.at2(p, k);
          const double wqk = w.at2(q, k);
          w.at2(p, k) = c * wpk - s * wqk;
          w.at2(q, k) = s * wpk + c * wqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v.at2(k, p);
          const double vkq = v.at2(k, q);
          v.at2(k, p) = c * vkp - s * vkq;
          v.at2(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  eigenvectors = std::move(v);
  eigenvalues.resize(n);
  for (std::size_t i = 0; i < n; ++i) eigenvalues[i] = w.at2(i, i);
}

std::pair<Tensor, PcaModel> pca_fit_transform(const Tensor& x, double variance_target) {
  const std::size_t samples = x.rows();
  const std::size_t features = x.cols();
  if (samples < 2) throw std::invalid_argument("pca_fit_transform: need at least 2 samples");
  if (variance_target <= 0.0 || variance_target > 1.0) {
    throw std::invalid_argument("pca_fit_transform: variance_target must be in (0,1]");
  }

  PcaModel model;
  model.mean = Tensor::zeros({1, features});
  for (std::size_t j = 0; j < features; ++j) {
    double mu = 0.0;
    for (std::size_t i = 0; i < samples; ++i) mu += x.at2(i, j);
    model.mean.at2(0, j) = mu / static_cast<double>(samples);
  }

  Tensor centered = x;
  for (std::size_t i = 0; i < samples; ++i)
    for (std::size_t j = 0; j < features; ++j) centered.at2(i, j) -= model.mean.at2(0, j);

  Tensor cov = kernels::matmul_tn(centered, centered);
  const double denom = static_cast<double>(samples - 1);
  for (std::size_t i = 0; i < cov.numel(); ++i) cov.at(i) /= denom;

  Tensor vecs;
  std::vector<double> vals;
  jacobi_eigen_sym(cov, vecs, vals);

  std::vector<std::size_t> order(features);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return vals[a] > vals[b]; });

  double total = 0.0;
  for (double v : vals) total += std::max(v, 0.0);
  if (total <= 0.0) {
    throw std::invalid_argument("pca_fit_transform: zero total variance");
  }

  std::size_t kept = 0;
  double cum = 0.0;
  for (std::size_t r = 0; r < features; ++r) {
    const double ev = vals[order[r]];
    if (ev < kRankEps) break;  // numerically rank-deficient tail
    cum += ev;
    kept = r + 1;
    if (cum / total >= variance_target) break;
  }
  if (kept == 0) {
    throw std::invalid_argument("pca_fit_transform: covariance has no usable eigenvalues");
  }

  model.basis = Tensor::zeros({features, kept});
  model.eigenvalues.resize(kept);
  for (std::size_t r = 0; r < kept; ++r) {
    const std::size_t src = order[r];
    model.eigenvalues[r] = vals[src];
    for (std::size_t j = 0; j < features; ++j) model.basis.at2(j, r) = vecs.at2(j, src);
  }
  model.explained_ratio = cum / total;

  return {kernels::matmul(centered, model.basis), model};
}

Tensor pca_transform(const PcaModel& model, const Tensor& x) {
  if (x.cols() != model.mean.cols()) {
    throw std::invalid_argument("pca_transform: feature count mismatch");
  }
  Tensor centered = x;
  for (std::size_t i = 0; i < centered.rows(); ++i)
    for (std::size_t j = 0; j < centered.cols(); ++j) centered.at2(i, j) -= model.mean.at2(0, j);
  return kernels::matmul(centered, model.basis);
}

}  // namespace omni::numerics
