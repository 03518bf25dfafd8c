#include "gbc/matrix_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "gbc/errors.hpp"

namespace gbc {

void require_finite(const Eigen::Ref<const Matrix>& a, std::string_view what) {
  if (!a.allFinite()) {
    throw InvalidMatrix(std::string(what) + ": non-finite entry");
  }
}

Matrix symmetrize(const Eigen::Ref<const Matrix>& s) {
  if (s.rows() != s.cols()) throw InvalidMatrix("symmetrize: matrix is not square");
  return 0.5 * (s + s.transpose());
}

Matrix pinv(const Eigen::Ref<const Matrix>& a, double rank_tol) {
  require_finite(a, "pinv");
  if (a.size() == 0) return Matrix::Zero(a.cols(), a.rows());
  Eigen::BDCSVD<Matrix> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cutoff = rank_tol * (sv.size() > 0 ? sv(0) : 0.0);
  Vector inv = Vector::Zero(sv.size());
  for (Eigen::Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff && sv(i) > 0.0) inv(i) = 1.0 / sv(i);
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

Eigen::Index numerical_rank(const Eigen::Ref<const Matrix>& a, double rank_tol) {
  require_finite(a, "numerical_rank");
  if (a.size() == 0) return 0;
  Eigen::BDCSVD<Matrix> svd(a);
  const Vector& sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0) return 0;
  const double cutoff = rank_tol * sv(0);
  return (sv.array() > cutoff).count();
}

SymEig sym_eig(const Eigen::Ref<const Matrix>& s) {
  if (s.rows() != s.cols()) throw InvalidMatrix("sym_eig: matrix is not square");
  require_finite(s, "sym_eig");
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrize(s));
  if (es.info() != Eigen::Success) throw InvalidMatrix("sym_eig: no convergence");
  // Eigen returns ascending order.
  SymEig out;
  out.values = es.eigenvalues().reverse();
  out.vectors = es.eigenvectors().rowwise().reverse();
  return out;
}

Matrix chol_psd(const Eigen::Ref<const Matrix>& s, double shift) {
  if (s.rows() != s.cols()) throw InvalidMatrix("chol_psd: matrix is not square");
  require_finite(s, "chol_psd");
  if (shift < 0.0) throw InvalidMatrix("chol_psd: negative shift");
  const Eigen::Index n = s.rows();
  Matrix a = symmetrize(s);
  a.diagonal().array() += shift;
  const double scale = std::max(1e-300, a.diagonal().cwiseAbs().maxCoeff());
  const double pivot_tol = static_cast<double>(std::max<Eigen::Index>(n, 1)) *
                           std::numeric_limits<double>::epsilon() * scale;
  Matrix g = Matrix::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = a(j, j) - g.row(j).head(j).squaredNorm();
    if (!(d > pivot_tol)) {
      throw NotPositiveDefinite("chol_psd: matrix is not positive definite", j);
    }
    const double gjj = std::sqrt(d);
    g(j, j) = gjj;
    for (Eigen::Index i = j + 1; i < n; ++i) {
      g(i, j) = (a(i, j) - g.row(i).head(j).dot(g.row(j).head(j))) / gjj;
    }
  }
  return g;
}

bool is_psd(const Eigen::Ref<const Matrix>& s, double tol) {
  if (s.rows() != s.cols() || !s.allFinite()) return false;
  if (s.size() == 0) return true;
  const Vector ev = Eigen::SelfAdjointEigenSolver<Matrix>(symmetrize(s), Eigen::EigenvaluesOnly)
                        .eigenvalues();
  const double lmin = ev(0);
  const double lmax = ev(ev.size() - 1);
  return lmin >= -tol * std::max(1.0, std::abs(lmax));
}

double spectral_radius(const Eigen::Ref<const Matrix>& a) {
  if (a.rows() != a.cols()) throw InvalidMatrix("spectral_radius: matrix is not square");
  require_finite(a, "spectral_radius");
  if (a.size() == 0) return 0.0;
  Eigen::EigenSolver<Matrix> es(a, false);
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

Matrix lyap_discrete(const Eigen::Ref<const Matrix>& a, const Eigen::Ref<const Matrix>& qc) {
  if (a.rows() != a.cols() || qc.rows() != a.rows() || qc.cols() != a.cols()) {
    throw ShapeError("lyap_discrete: A and Qc must be square and of equal size");
  }
  require_finite(qc, "lyap_discrete");
  const double rho = spectral_radius(a);
  if (rho >= 1.0 - 1e-9) {
    throw UnstableSystem("lyap_discrete: spectral radius " + std::to_string(rho) + " >= 1", rho);
  }
  // Sigma_{k+1} = Sigma_k + A_k Sigma_k A_k^T, A_{k+1} = A_k^2 sums 2^k terms per step.
  Matrix sigma = symmetrize(qc);
  Matrix ak = a;
  for (int k = 0; k < 200; ++k) {
    const Matrix incr = ak * sigma * ak.transpose();
    sigma += incr;
    ak = ak * ak;
    if (incr.norm() <= 1e-17 * std::max(1.0, sigma.norm()) || ak.norm() == 0.0) break;
  }
  return symmetrize(sigma);
}

Matrix block_diag_repeat(const Eigen::Ref<const Matrix>& block, Eigen::Index count) {
  Matrix out = Matrix::Zero(block.rows() * count, block.cols() * count);
  for (Eigen::Index i = 0; i < count; ++i) {
    out.block(i * block.rows(), i * block.cols(), block.rows(), block.cols()) = block;
  }
  return out;
}

}  // namespace gbc
