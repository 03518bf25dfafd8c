#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "gbc/errors.hpp"
#include "gbc/matrix_core.hpp"

using namespace gbc;

namespace {

Matrix randn(std::mt19937_64& gen, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Matrix a(r, c);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = n(gen);
  return a;
}

double penrose_residual(const Matrix& a, const Matrix& x) {
  const double s = 1.0 + a.norm();
  const double s_inv = 1.0 + x.norm();
  double r = (a * x * a - a).norm() / s;
  r = std::max(r, (x * a * x - x).norm() / s_inv);
  r = std::max(r, ((a * x).transpose() - a * x).norm());
  r = std::max(r, ((x * a).transpose() - x * a).norm());
  return r;
}

}  // namespace

TEST_CASE("pinv of identity and diagonal") {
  CHECK(pinv(Matrix::Identity(3, 3)).isApprox(Matrix::Identity(3, 3)));
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 2.0;
  const Matrix p = pinv(d);
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(1, 1) == 0.0);
  CHECK(p(0, 1) == 0.0);
}

TEST_CASE("pinv left inverse of a tall full-rank matrix") {
  std::mt19937_64 gen(3);
  const Matrix a = randn(gen, 5, 3);
  CHECK((pinv(a) * a - Matrix::Identity(3, 3)).norm() < 1e-8);
}

TEST_CASE("pinv rejects non-finite input") {
  Matrix a = Matrix::Identity(2, 2);
  a(0, 1) = std::nan("");
  CHECK_THROWS_AS(pinv(a), InvalidMatrix);
}

TEST_CASE("Penrose conditions on random matrices of every rank") {
  std::mt19937_64 gen(11);
  double worst = 0.0;
  for (int k = 0; k < 1000; ++k) {
    const Eigen::Index m = 1 + static_cast<Eigen::Index>(gen() % 7);
    const Eigen::Index n = 1 + static_cast<Eigen::Index>(gen() % 7);
    const Eigen::Index r = 1 + static_cast<Eigen::Index>(gen() % std::min(m, n));
    const Matrix a = randn(gen, m, r) * randn(gen, r, n);
    worst = std::max(worst, penrose_residual(a, pinv(a)));
    if (r == std::min(m, n)) {
      CHECK((pinv(pinv(a)) - a).norm() <= 1e-7 * a.norm());
    }
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("numerical rank") {
  std::mt19937_64 gen(5);
  const Matrix a = randn(gen, 6, 2) * randn(gen, 2, 5);
  CHECK(numerical_rank(a) == 2);
  CHECK(numerical_rank(Matrix::Zero(3, 3)) == 0);
}

TEST_CASE("sym_eig small cases") {
  Matrix d = Matrix::Zero(2, 2);
  d(0, 0) = 1.0;
  d(1, 1) = 3.0;
  SymEig e = sym_eig(d);
  CHECK(e.values(0) == doctest::Approx(3.0));
  CHECK(e.values(1) == doctest::Approx(1.0));

  Matrix swap(2, 2);
  swap << 0, 1, 1, 0;
  e = sym_eig(swap);
  CHECK(e.values(0) == doctest::Approx(1.0));
  CHECK(e.values(1) == doctest::Approx(-1.0));

  CHECK_THROWS_AS(sym_eig(Matrix::Zero(2, 3)), InvalidMatrix);
}

TEST_CASE("sym_eig reconstructs random symmetric matrices") {
  std::mt19937_64 gen(8);
  for (int k = 0; k < 50; ++k) {
    const Matrix a = randn(gen, 6, 6);
    const Matrix s = 0.5 * (a + a.transpose());
    const SymEig e = sym_eig(s);
    const Matrix rec = e.vectors * e.values.asDiagonal() * e.vectors.transpose();
    CHECK((rec - s).norm() <= 1e-10 * (1.0 + s.norm()));
    CHECK((e.vectors.transpose() * e.vectors - Matrix::Identity(6, 6)).norm() <= 1e-10);
    for (Eigen::Index i = 1; i < 6; ++i) CHECK(e.values(i - 1) >= e.values(i));
  }
}

TEST_CASE("chol_psd") {
  CHECK(chol_psd(Matrix::Identity(2, 2)).isApprox(Matrix::Identity(2, 2)));

  Matrix s(2, 2);
  s << 4, 2, 2, 2;
  Matrix expected(2, 2);
  expected << 2, 0, 1, 1;
  CHECK((chol_psd(s) - expected).norm() < 1e-14);

  const Vector v = Vector::Ones(3);
  try {
    chol_psd(v * v.transpose());
    FAIL("expected NotPositiveDefinite");
  } catch (const NotPositiveDefinite& e) {
    CHECK(e.pivot() == 1);
  }

  const Matrix shifted = chol_psd(v * v.transpose(), 0.5);
  CHECK((shifted * shifted.transpose() - v * v.transpose() - 0.5 * Matrix::Identity(3, 3)).norm() <
        1e-12);
}

TEST_CASE("chol_psd reconstruction and is_psd agree with the spectrum") {
  std::mt19937_64 gen(21);
  for (int k = 0; k < 200; ++k) {
    const Matrix a = randn(gen, 5, 5);
    const Matrix s = 0.5 * (a + a.transpose());
    const double lmin = sym_eig(s).values(4);
    CHECK(is_psd(s, 1e-12) == (lmin >= -1e-12 * std::max(1.0, sym_eig(s).values.cwiseAbs().maxCoeff())));
    const Matrix pd = a * a.transpose() + 1e-3 * Matrix::Identity(5, 5);
    const Matrix g = chol_psd(pd);
    CHECK((g * g.transpose() - pd).norm() <= 1e-8 * pd.norm());
    CHECK(g.isLowerTriangular());
  }
  CHECK(is_psd(Matrix::Identity(3, 3)));
  CHECK_FALSE(is_psd(-Matrix::Identity(3, 3)));
}

TEST_CASE("lyap_discrete") {
  CHECK(lyap_discrete(Matrix::Zero(2, 2), Matrix::Identity(2, 2)).isApprox(Matrix::Identity(2, 2)));
  const Matrix s = lyap_discrete(Matrix::Constant(1, 1, 0.5), Matrix::Constant(1, 1, 1.0));
  CHECK(s(0, 0) == doctest::Approx(4.0 / 3.0).epsilon(1e-12));

  std::mt19937_64 gen(4);
  for (int k = 0; k < 20; ++k) {
    Matrix a = randn(gen, 4, 4);
    a *= 0.95 / spectral_radius(a);
    const Matrix b = randn(gen, 4, 4);
    const Matrix qc = b * b.transpose();
    const Matrix x = lyap_discrete(a, qc);
    CHECK((x - a * x * a.transpose() - qc).norm() <= 1e-8 * qc.norm());
  }
  CHECK_THROWS_AS(lyap_discrete(Matrix::Identity(2, 2), Matrix::Identity(2, 2)), UnstableSystem);
}

TEST_CASE("block_diag_repeat") {
  Matrix b(1, 2);
  b << 1, 2;
  const Matrix r = block_diag_repeat(b, 3);
  CHECK(r.rows() == 3);
  CHECK(r.cols() == 6);
  CHECK(r(2, 5) == 2.0);
  CHECK(r(0, 2) == 0.0);
}
