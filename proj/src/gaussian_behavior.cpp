#include "gbc/gaussian_behavior.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "gbc/errors.hpp"
#include "gbc/log.hpp"

namespace gbc {

std::string to_string(Ordering ordering) {
  return ordering == Ordering::Interleaved ? "interleaved" : "stacked";
}

Ordering parse_ordering(const std::string& name) {
  if (name == "interleaved") return Ordering::Interleaved;
  if (name == "stacked") return Ordering::Stacked;
  throw ConfigError("unknown ordering '" + name + "'");
}

std::vector<Eigen::Index> stacked_to_interleaved(SignalDims dims, Eigen::Index window_len) {
  std::vector<Eigen::Index> perm;
  perm.reserve(static_cast<std::size_t>(dims.q() * window_len));
  for (Eigen::Index t = 0; t < window_len; ++t) {
    for (int c = 0; c < dims.m; ++c) perm.push_back(t * dims.m + c);
    for (int c = 0; c < dims.p; ++c) perm.push_back(dims.m * window_len + t * dims.p + c);
  }
  return perm;
}

void GaussianBehavior::validate(double psd_tol) const {
  dims.validate();
  if (window_len < 1) throw ShapeError("GaussianBehavior: window length must be >= 1");
  if (mean.size() != size() || cov.rows() != size() || cov.cols() != size()) {
    throw ShapeError("GaussianBehavior: mean/cov sizes do not match q*L");
  }
  require_finite(mean, "GaussianBehavior mean");
  require_finite(cov, "GaussianBehavior cov");
  if ((cov - cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(1.0, cov.cwiseAbs().maxCoeff())) {
    throw InvalidMatrix("GaussianBehavior: covariance is not symmetric");
  }
  if (!is_psd(cov, psd_tol)) throw InvalidMatrix("GaussianBehavior: covariance is not PSD");
}

GaussianBehavior GaussianBehavior::interleaved() const {
  if (ordering == Ordering::Interleaved) return *this;
  const auto perm = stacked_to_interleaved(dims, window_len);
  GaussianBehavior out = *this;
  out.ordering = Ordering::Interleaved;
  const auto k = static_cast<Eigen::Index>(perm.size());
  for (Eigen::Index i = 0; i < k; ++i) {
    out.mean(i) = mean(perm[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < k; ++j) {
      out.cov(i, j) = cov(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(j)]);
    }
  }
  return out;
}

Vector PredictiveModel::mean(const Eigen::Ref<const Vector>& w_ini,
                             const Eigen::Ref<const Vector>& u_f) const {
  if (w_ini.size() != m_ini.cols() || u_f.size() != m_u.cols()) {
    throw ShapeError("PredictiveModel::mean: w_ini/u_f sizes do not match the model");
  }
  return m_u * u_f + m_ini * w_ini;
}

GaussianBehavior estimate(const Matrix& columns, SignalDims dims, Eigen::Index window_len,
                          bool subtract_mean) {
  dims.validate();
  if (columns.cols() < 1) throw ShapeError("estimate: need at least one column");
  if (columns.rows() != dims.q() * window_len) throw ShapeError("estimate: column height != q*L");
  require_finite(columns, "estimate");
  const double inv_d = 1.0 / static_cast<double>(columns.cols());
  GaussianBehavior gb;
  gb.dims = dims;
  gb.window_len = window_len;
  gb.ordering = Ordering::Interleaved;
  if (subtract_mean) {
    gb.mean = columns.rowwise().mean();
    const Matrix centered = columns.colwise() - gb.mean;
    gb.cov = inv_d * centered * centered.transpose();
  } else {
    gb.mean = Vector::Zero(columns.rows());
    gb.cov = inv_d * columns * columns.transpose();
  }
  gb.cov = symmetrize(gb.cov);
  return gb;
}

GaussianBehavior estimate(const DataMatrix& w, bool subtract_mean) {
  return estimate(w.raw(), w.dims(), w.window_len(), subtract_mean);
}

double log_likelihood(const GaussianBehavior& gb, const Matrix& samples, double jitter) {
  if (samples.rows() != gb.size()) throw ShapeError("log_likelihood: sample height != q*L");
  const Matrix g = chol_psd(gb.cov, jitter);
  const double k = static_cast<double>(gb.size());
  const double log_det = 2.0 * g.diagonal().array().log().sum();
  const Matrix centered = samples.colwise() - gb.mean;
  const Matrix white = g.triangularView<Eigen::Lower>().solve(centered);
  const double n = static_cast<double>(samples.cols());
  return -0.5 * n * (k * std::log(2.0 * std::numbers::pi) + log_det) - 0.5 * white.squaredNorm();
}

ConditionalGaussian condition(const GaussianBehavior& gb, std::span<const Eigen::Index> free_index,
                              const Eigen::Ref<const Vector>& free_value, double rank_tol) {
  const Eigen::Index total = gb.size();
  if (gb.mean.size() != total || gb.cov.rows() != total) {
    throw ShapeError("condition: behavior is inconsistent");
  }
  if (static_cast<Eigen::Index>(free_index.size()) != free_value.size()) {
    throw ShapeError("condition: free_value size does not match free_index");
  }
  std::vector<char> is_free(static_cast<std::size_t>(total), 0);
  for (Eigen::Index i : free_index) {
    if (i < 0 || i >= total) throw ShapeError("condition: index " + std::to_string(i) + " out of range");
    if (is_free[static_cast<std::size_t>(i)]) throw ShapeError("condition: duplicate free index");
    is_free[static_cast<std::size_t>(i)] = 1;
  }
  std::vector<Eigen::Index> dep;
  for (Eigen::Index i = 0; i < total; ++i) {
    if (!is_free[static_cast<std::size_t>(i)]) dep.push_back(i);
  }
  const auto nf = static_cast<Eigen::Index>(free_index.size());
  const auto nd = static_cast<Eigen::Index>(dep.size());

  Matrix s_ff(nf, nf), s_df(nd, nf), s_dd(nd, nd);
  Vector mu_f(nf), mu_d(nd);
  for (Eigen::Index i = 0; i < nf; ++i) {
    mu_f(i) = gb.mean(free_index[static_cast<std::size_t>(i)]);
    for (Eigen::Index j = 0; j < nf; ++j) {
      s_ff(i, j) = gb.cov(free_index[static_cast<std::size_t>(i)], free_index[static_cast<std::size_t>(j)]);
    }
  }
  for (Eigen::Index i = 0; i < nd; ++i) {
    const Eigen::Index di = dep[static_cast<std::size_t>(i)];
    mu_d(i) = gb.mean(di);
    for (Eigen::Index j = 0; j < nf; ++j) s_df(i, j) = gb.cov(di, free_index[static_cast<std::size_t>(j)]);
    for (Eigen::Index j = 0; j < nd; ++j) s_dd(i, j) = gb.cov(di, dep[static_cast<std::size_t>(j)]);
  }
  const Matrix gain = s_df * pinv(symmetrize(s_ff), rank_tol);
  ConditionalGaussian out;
  out.mean = mu_d + gain * (free_value - mu_f);
  out.cov = symmetrize(s_dd - gain * s_df.transpose());
  return out;
}

PredictiveModel predictive_model(const DataMatrix& w, double rank_tol) {
  const Matrix w_free = w.free_block();
  const Matrix w_dep = w.future_outputs();
  const Matrix m_hat = w_dep * pinv(w_free, rank_tol);
  PredictiveModel pm;
  pm.dims = w.dims();
  pm.l_ini = w.l_ini();
  pm.l_f = w.l_f();
  pm.sample_count = w.cols();
  pm.m_ini = m_hat.leftCols(w.past_rows());
  pm.m_u = m_hat.rightCols(w.future_input_rows());
  // (I - W_f^+ W_f) is an orthogonal projector, so Y (I - P) Y^T = R R^T
  // with R the least-squares residual; this keeps the estimate PSD.
  const Matrix residual = w_dep - m_hat * w_free;
  pm.cov = symmetrize(residual * residual.transpose() / static_cast<double>(w.cols()));
  return pm;
}

GaussianBehavior from_state_space(const StochasticLtiModel& model, Eigen::Index window_len,
                                  const Eigen::Ref<const Matrix>& sigma_x,
                                  const Eigen::Ref<const Vector>& mu_x,
                                  const Eigen::Ref<const Matrix>& sigma_u,
                                  const Eigen::Ref<const Vector>& mu_u) {
  model.validate();
  const Eigen::Index n = model.n(), m = model.m(), p = model.p(), len = window_len;
  if (sigma_x.rows() != n || sigma_x.cols() != n || mu_x.size() != n) {
    throw ShapeError("from_state_space: state moments must be n-dimensional");
  }
  if (sigma_u.rows() != m * len || sigma_u.cols() != m * len || mu_u.size() != m * len) {
    throw ShapeError("from_state_space: input moments must be mL-dimensional");
  }
  const BlockOperators ops = build_block_operators(model, len);
  const Matrix& obs = ops.observability;
  const Matrix& tu = ops.toeplitz_u;
  const Matrix& txi = ops.toeplitz_xi;

  GaussianBehavior gb;
  gb.dims = model.dims();
  gb.window_len = len;
  gb.ordering = Ordering::Stacked;
  gb.mean.resize((m + p) * len);
  gb.mean << mu_u, obs * mu_x + tu * mu_u;

  const Matrix su = symmetrize(sigma_u);
  const Matrix yy = obs * symmetrize(sigma_x) * obs.transpose() + tu * su * tu.transpose() +
                    txi * block_diag_repeat(model.sigma_xi, len) * txi.transpose() +
                    block_diag_repeat(model.sigma_eta, len);
  gb.cov.resize((m + p) * len, (m + p) * len);
  gb.cov.topLeftCorner(m * len, m * len) = su;
  gb.cov.topRightCorner(m * len, p * len) = su * tu.transpose();
  gb.cov.bottomLeftCorner(p * len, m * len) = tu * su;
  gb.cov.bottomRightCorner(p * len, p * len) = yy;
  gb.cov = symmetrize(gb.cov);
  return gb;
}

double default_jitter(const Eigen::Ref<const Matrix>& s, double scale) {
  const double k = static_cast<double>(std::max<Eigen::Index>(1, s.rows()));
  const double tr = s.trace();
  return tr > 0.0 ? scale * tr / k : 1e-12;
}

JitteredFactor factor_with_jitter(const Eigen::Ref<const Matrix>& s, std::string_view who,
                                  double scale) {
  try {
    return {chol_psd(s, 0.0), 0.0};
  } catch (const NotPositiveDefinite&) {
    const double jitter = default_jitter(s, scale);
    std::ostringstream msg;
    msg << who << ": covariance not PD, adding jitter " << jitter << " * I";
    log::warn(msg.str());
    return {chol_psd(s, jitter), jitter};
  }
}

double kl_divergence(const ConditionalGaussian& p, const ConditionalGaussian& q) {
  const Eigen::Index k = p.mean.size();
  if (q.mean.size() != k || p.cov.rows() != k || p.cov.cols() != k || q.cov.rows() != k ||
      q.cov.cols() != k) {
    throw ShapeError("kl_divergence: dimension mismatch");
  }
  const JitteredFactor fq = factor_with_jitter(q.cov, "kl_divergence(q)");
  const JitteredFactor fp = factor_with_jitter(p.cov, "kl_divergence(p)");
  const auto gq = fq.lower.triangularView<Eigen::Lower>();
  // tr(Sq^{-1} Sp) = ||Gq^{-1} Gp||_F^2
  const double trace_term = gq.solve(fp.lower).squaredNorm();
  const double maha = gq.solve(p.mean - q.mean).squaredNorm();
  const double logdet_q = 2.0 * fq.lower.diagonal().array().log().sum();
  const double logdet_p = 2.0 * fp.lower.diagonal().array().log().sum();
  const double kl = 0.5 * (trace_term - static_cast<double>(k) + maha + logdet_q - logdet_p);
  return std::max(0.0, kl);
}

Matrix sample_gaussian(const Eigen::Ref<const Vector>& mean, const Eigen::Ref<const Matrix>& cov,
                       Eigen::Index n, std::uint64_t seed) {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) throw ShapeError("sample: size mismatch");
  const Matrix factor = psd_factor(cov);
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5a17u};
  std::mt19937_64 gen(seq);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix z(mean.size(), n);
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = 0; i < mean.size(); ++i) z(i, j) = normal(gen);
  Matrix out = factor * z;
  out.colwise() += mean;
  return out;
}

Matrix sample(const GaussianBehavior& gb, Eigen::Index n, std::uint64_t seed) {
  return sample_gaussian(gb.mean, gb.cov, n, seed);
}

}  // namespace gbc
