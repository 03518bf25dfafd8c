#pragma once

// Dense linear-algebra building blocks shared by every other module.
// All functions are pure; covariance-like inputs are symmetrized before
// any decomposition.

#include <Eigen/Dense>
#include <string_view>

namespace gbc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Default relative singular-value cutoff for pseudoinverses and ranks.
inline constexpr double kDefaultRankTol = 1e-10;

/// Throws InvalidMatrix if any entry is NaN or infinite.
void require_finite(const Eigen::Ref<const Matrix>& a, std::string_view what);

Matrix symmetrize(const Eigen::Ref<const Matrix>& s);

/// Moore-Penrose pseudoinverse via SVD. Singular values below
/// rank_tol * sigma_max are treated as zero.
Matrix pinv(const Eigen::Ref<const Matrix>& a, double rank_tol = kDefaultRankTol);

/// Number of singular values above rank_tol * sigma_max.
Eigen::Index numerical_rank(const Eigen::Ref<const Matrix>& a,
                            double rank_tol = kDefaultRankTol);

struct SymEig {
  Vector values;   ///< sorted descending
  Matrix vectors;  ///< orthonormal, column i pairs with values(i)
};

SymEig sym_eig(const Eigen::Ref<const Matrix>& s);

/// Lower-triangular G with G G^T = S + shift I. Throws NotPositiveDefinite
/// carrying the failing pivot when S + shift I is not numerically PD.
Matrix chol_psd(const Eigen::Ref<const Matrix>& s, double shift = 0.0);

/// lambda_min(S) >= -tol * max(1, |lambda_max(S)|).
bool is_psd(const Eigen::Ref<const Matrix>& s, double tol = 1e-8);

double spectral_radius(const Eigen::Ref<const Matrix>& a);

/// Solves Sigma = A Sigma A^T + Qc for Schur-stable A (squared Smith iteration).
Matrix lyap_discrete(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& qc);

/// Block-diagonal matrix holding `count` copies of `block`.
Matrix block_diag_repeat(const Eigen::Ref<const Matrix>& block, Eigen::Index count);

}  // namespace gbc
