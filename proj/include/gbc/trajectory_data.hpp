#pragma once

// Recorded multichannel signals and the windowed data matrix built from them.

#include <filesystem>
#include <string>
#include <vector>

#include "gbc/matrix_core.hpp"

namespace gbc {

/// Channel partition of a signal: m inputs followed by p outputs.
struct SignalDims {
  int m = 1;
  int p = 1;

  int q() const { return m + p; }
  void validate() const;
  friend bool operator==(const SignalDims&, const SignalDims&) = default;
};

/// A finite signal w_0 .. w_{T-1}, each w_t = [u_t; y_t] in R^q.
class Trajectory {
 public:
  /// `samples` is q x T, one column per time step.
  Trajectory(SignalDims dims, Matrix samples);
  Trajectory(SignalDims dims, const Eigen::Ref<const Matrix>& inputs,
             const Eigen::Ref<const Matrix>& outputs);

  const SignalDims& dims() const { return dims_; }
  Eigen::Index length() const { return samples_.cols(); }
  const Matrix& samples() const { return samples_; }
  auto inputs() const { return samples_.topRows(dims_.m); }
  auto outputs() const { return samples_.bottomRows(dims_.p); }

  /// Stacked [w_t; ...; w_{t+len-1}].
  Vector window(Eigen::Index t, Eigen::Index len) const;

 private:
  SignalDims dims_;
  Matrix samples_;
};

enum class WindowMode { Hankel, Disjoint };

WindowMode parse_window_mode(const std::string& name);
std::string to_string(WindowMode mode);

/// qL x D matrix of length-L windows in chronological order of their start.
/// Hankel mode slides by one sample (T - L + 1 columns); disjoint mode
/// emits floor(T / L) non-overlapping windows. Hankel windows are not
/// independent samples; no correction for that is made here.
Matrix window_trajectory(const Trajectory& traj, Eigen::Index window_len, WindowMode mode);

/// Windows of several independent records side by side.
Matrix window_trajectories(const std::vector<Trajectory>& trajs, Eigen::Index window_len,
                           WindowMode mode);

/// Data matrix W with the row partition [W_p; U_f; Y_f].
///
/// `raw()` keeps each column in chronological window order. `row_index()`
/// maps ordered row r to raw row row_index()[r], where the ordered layout is
/// the first q*L_ini raw rows (w_ini) followed by the input channels of the
/// last L_f steps (u_f) and then their output channels (y_f).
class DataMatrix {
 public:
  DataMatrix(SignalDims dims, int l_ini, int l_f, Matrix columns);

  const SignalDims& dims() const { return dims_; }
  int l_ini() const { return l_ini_; }
  int l_f() const { return l_f_; }
  int window_len() const { return l_ini_ + l_f_; }
  Eigen::Index cols() const { return raw_.cols(); }
  const Matrix& raw() const { return raw_; }
  const std::vector<Eigen::Index>& row_index() const { return row_index_; }

  Eigen::Index past_rows() const { return Eigen::Index{dims_.q()} * l_ini_; }
  Eigen::Index future_input_rows() const { return Eigen::Index{dims_.m} * l_f_; }
  Eigen::Index future_output_rows() const { return Eigen::Index{dims_.p} * l_f_; }
  Eigen::Index free_rows() const { return past_rows() + future_input_rows(); }

  /// Rows permuted into [W_p; U_f; Y_f].
  const Matrix& ordered() const { return ordered_; }
  auto past() const { return ordered_.topRows(past_rows()); }
  auto future_inputs() const { return ordered_.middleRows(past_rows(), future_input_rows()); }
  auto future_outputs() const { return ordered_.bottomRows(future_output_rows()); }
  /// [W_p; U_f], the rows treated as given when predicting y_f.
  auto free_block() const { return ordered_.topRows(free_rows()); }

  /// Map a vector in ordered layout back to chronological window layout.
  Vector to_chronological(const Eigen::Ref<const Vector>& ordered) const;
  Vector to_ordered(const Eigen::Ref<const Vector>& chronological) const;

 private:
  SignalDims dims_;
  int l_ini_;
  int l_f_;
  Matrix raw_;
  Matrix ordered_;
  std::vector<Eigen::Index> row_index_;
};

/// Ordered-row permutation for a window of length l_ini + l_f.
std::vector<Eigen::Index> partition_row_index(SignalDims dims, int l_ini, int l_f);

DataMatrix assemble(const Matrix& columns, SignalDims dims, int l_ini, int l_f);

struct ExcitationRank {
  Eigen::Index rank = 0;
  bool satisfied = false;
};

/// Numerical rank of W versus the expected m*L + n.
ExcitationRank excitation_rank(const DataMatrix& w, Eigen::Index expected,
                               double rank_tol = kDefaultRankTol);

/// CSV with header u1..um,y1..yp (names free-form), one row per time step.
/// Column count must equal dims.q(); values are written in shortest
/// round-trip decimal form.
Trajectory load_csv(const std::filesystem::path& path, SignalDims dims);
Trajectory parse_csv(std::istream& in, SignalDims dims);
/// Header row plus numeric rows of exactly `cols` fields; returns cols x rows.
Matrix parse_table(std::istream& in, Eigen::Index cols);
void save_csv(const Trajectory& traj, const std::filesystem::path& path);
void write_csv(const Trajectory& traj, std::ostream& out);

/// Shortest decimal representation that parses back to the same double.
std::string format_double(double v);

}  // namespace gbc
