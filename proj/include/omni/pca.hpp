#pragma once

#include <utility>
#include <vector>

#include "omni/tensor.hpp"

namespace omni::numerics {

// Fitted PCA: column means, orthonormal basis (features x kept), and the
// kept eigenvalues in descending order.
struct PcaModel {
  Tensor mean;    // 1 x features
  Tensor basis;   // features x kept
  std::vector<double> eigenvalues;
  double explained_ratio = 0.0;

  std::size_t n_components() const { return eigenvalues.size(); }
};

// Cyclic Jacobi eigendecomposition of a symmetric matrix. Eigenvectors are
// returned as columns of V; pairs are unsorted.
void jacobi_eigen_sym(const Tensor& a, Tensor& eigenvectors, std::vector<double>& eigenvalues);

// Centers X (samples x features), fits the minimal set of principal
// components whose explained-variance ratio reaches variance_target, and
// returns the projected samples with the fitted model. Eigenvalues below
// 1e-10 are treated as numerically zero rank and never retained.
std::pair<Tensor, PcaModel> pca_fit_transform(const Tensor& x, double variance_target);

Tensor pca_transform(const PcaModel& model, const Tensor& x);

}  // namespace omni::numerics
