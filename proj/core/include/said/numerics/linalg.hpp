#pragma once

#include <span>
#include <vector>

#include "said/numerics/tensor.hpp"

namespace said::linalg {

Tensor matmul(const Tensor& a, const Tensor& b);
/// a^T * b without materializing the transpose.
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// a * b^T without materializing the transpose.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
std::vector<double> matvec(const Tensor& a, std::span<const double> x);
double trace(const Tensor& a);

/// Largest |a_ij - a_ji|.
double asymmetry(const Tensor& a);

/// Lower-triangular L with L * L^T = a.
///
/// Throws NotPositiveDefinite when a pivot falls to 1e-12 or below.
Tensor cholesky(const Tensor& a);

/// Solves (L L^T) x = b in place for a factor from cholesky().
void cholesky_solve_inplace(const Tensor& l, std::span<double> b);
std::vector<double> cholesky_solve(const Tensor& l, std::span<const double> b);
/// Inverse of L L^T.
Tensor cholesky_inverse(const Tensor& l);
/// log det(L L^T).
double cholesky_logdet(const Tensor& l);

/// Dense LU solve with partial pivoting. Throws NumericalError on a singular matrix.
std::vector<double> solve(const Tensor& a, std::span<const double> b);

struct SymmetricEigen {
  std::vector<double> values;  // ascending
  Tensor vectors;              // columns are eigenvectors
};

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
SymmetricEigen sym_eigen(const Tensor& a, double tol = 1e-15, int max_sweeps = 100);

/// Principal square root of a symmetric PSD matrix.
///
/// Eigenvalues above -1e-10 (relative to the spectral radius when it exceeds 1)
/// are clamped to zero; more negative ones raise NotPSD. Asymmetry above 1e-8
/// raises NotSymmetric.
Tensor sym_sqrt(const Tensor& a);

}  // namespace said::linalg
