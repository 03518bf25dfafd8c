#include "gbc/trajectory_data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "gbc/errors.hpp"

namespace gbc {

void SignalDims::validate() const {
  if (m < 1 || p < 1) {
    throw ShapeError("SignalDims: need m >= 1 and p >= 1, got m=" + std::to_string(m) +
                     " p=" + std::to_string(p));
  }
}

Trajectory::Trajectory(SignalDims dims, Matrix samples) : dims_(dims), samples_(std::move(samples)) {
  dims_.validate();
  if (samples_.rows() != dims_.q()) {
    throw ShapeError("Trajectory: sample height " + std::to_string(samples_.rows()) +
                     " != q = " + std::to_string(dims_.q()));
  }
  if (samples_.cols() < 1) throw TooShort("Trajectory: no samples");
  require_finite(samples_, "Trajectory");
}

Trajectory::Trajectory(SignalDims dims, const Eigen::Ref<const Matrix>& inputs,
                       const Eigen::Ref<const Matrix>& outputs)
    : Trajectory(dims, [&] {
        if (inputs.cols() != outputs.cols()) {
          throw ShapeError("Trajectory: input/output lengths differ");
        }
        Matrix s(inputs.rows() + outputs.rows(), inputs.cols());
        s << inputs, outputs;
        return s;
      }()) {}

Vector Trajectory::window(Eigen::Index t, Eigen::Index len) const {
  if (t < 0 || len < 1 || t + len > length()) throw TooShort("Trajectory::window out of range");
  Vector w(dims_.q() * len);
  for (Eigen::Index k = 0; k < len; ++k) w.segment(k * dims_.q(), dims_.q()) = samples_.col(t + k);
  return w;
}

WindowMode parse_window_mode(const std::string& name) {
  if (name == "hankel") return WindowMode::Hankel;
  if (name == "disjoint") return WindowMode::Disjoint;
  throw ConfigError("unknown window mode '" + name + "' (expected hankel|disjoint)");
}

std::string to_string(WindowMode mode) {
  return mode == WindowMode::Hankel ? "hankel" : "disjoint";
}

Matrix window_trajectory(const Trajectory& traj, Eigen::Index window_len, WindowMode mode) {
  if (window_len < 1) throw ShapeError("window_trajectory: window length must be >= 1");
  const Eigen::Index t_len = traj.length();
  if (t_len < window_len) {
    throw TooShort("window_trajectory: trajectory length " + std::to_string(t_len) +
                   " < window length " + std::to_string(window_len));
  }
  const Eigen::Index stride = mode == WindowMode::Hankel ? 1 : window_len;
  const Eigen::Index count =
      mode == WindowMode::Hankel ? t_len - window_len + 1 : t_len / window_len;
  Matrix out(traj.dims().q() * window_len, count);
  for (Eigen::Index j = 0; j < count; ++j) out.col(j) = traj.window(j * stride, window_len);
  return out;
}

Matrix window_trajectories(const std::vector<Trajectory>& trajs, Eigen::Index window_len,
                           WindowMode mode) {
  std::vector<Matrix> parts;
  Eigen::Index total = 0;
  for (const auto& t : trajs) {
    parts.push_back(window_trajectory(t, window_len, mode));
    total += parts.back().cols();
  }
  if (parts.empty()) throw TooShort("window_trajectories: no trajectories");
  Matrix out(parts.front().rows(), total);
  Eigen::Index c = 0;
  for (const auto& p : parts) {
    if (p.rows() != out.rows()) throw ShapeError("window_trajectories: channel counts differ");
    out.middleCols(c, p.cols()) = p;
    c += p.cols();
  }
  return out;
}

std::vector<Eigen::Index> partition_row_index(SignalDims dims, int l_ini, int l_f) {
  const Eigen::Index q = dims.q();
  std::vector<Eigen::Index> idx;
  idx.reserve(static_cast<std::size_t>(q * (l_ini + l_f)));
  for (Eigen::Index r = 0; r < q * l_ini; ++r) idx.push_back(r);
  for (int k = 0; k < l_f; ++k) {
    for (int c = 0; c < dims.m; ++c) idx.push_back((l_ini + k) * q + c);
  }
  for (int k = 0; k < l_f; ++k) {
    for (int c = 0; c < dims.p; ++c) idx.push_back((l_ini + k) * q + dims.m + c);
  }
  return idx;
}

DataMatrix::DataMatrix(SignalDims dims, int l_ini, int l_f, Matrix columns)
    : dims_(dims), l_ini_(l_ini), l_f_(l_f), raw_(std::move(columns)) {
  dims_.validate();
  if (l_ini < 0 || l_f < 1) throw ShapeError("DataMatrix: need L_ini >= 0 and L_f >= 1");
  if (raw_.rows() != Eigen::Index{dims_.q()} * (l_ini + l_f)) {
    throw ShapeError("DataMatrix: column height " + std::to_string(raw_.rows()) +
                     " != q*L = " + std::to_string(dims_.q() * (l_ini + l_f)));
  }
  if (raw_.cols() < 1) throw ShapeError("DataMatrix: needs at least one column");
  require_finite(raw_, "DataMatrix");
  row_index_ = partition_row_index(dims_, l_ini_, l_f_);
  ordered_.resize(raw_.rows(), raw_.cols());
  for (std::size_t r = 0; r < row_index_.size(); ++r) {
    ordered_.row(static_cast<Eigen::Index>(r)) = raw_.row(row_index_[r]);
  }
}

Vector DataMatrix::to_chronological(const Eigen::Ref<const Vector>& ordered) const {
  if (ordered.size() != raw_.rows()) throw ShapeError("to_chronological: size mismatch");
  Vector out(ordered.size());
  for (std::size_t r = 0; r < row_index_.size(); ++r) {
    out(row_index_[r]) = ordered(static_cast<Eigen::Index>(r));
  }
  return out;
}

Vector DataMatrix::to_ordered(const Eigen::Ref<const Vector>& chronological) const {
  if (chronological.size() != raw_.rows()) throw ShapeError("to_ordered: size mismatch");
  Vector out(chronological.size());
  for (std::size_t r = 0; r < row_index_.size(); ++r) {
    out(static_cast<Eigen::Index>(r)) = chronological(row_index_[r]);
  }
  return out;
}

DataMatrix assemble(const Matrix& columns, SignalDims dims, int l_ini, int l_f) {
  return DataMatrix(dims, l_ini, l_f, columns);
}

ExcitationRank excitation_rank(const DataMatrix& w, Eigen::Index expected, double rank_tol) {
  ExcitationRank out;
  out.rank = numerical_rank(w.raw(), rank_tol);
  out.satisfied = out.rank >= expected && out.rank > 0;
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream ss(line);
  while (std::getline(ss, cur, ',')) out.push_back(trim(cur));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

Matrix parse_table(std::istream& in, Eigen::Index cols) {
  if (cols < 1) throw ShapeError("parse_table: need at least one column");
  std::string line;
  std::size_t line_no = 0;
  bool have_header = false;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto fields = split_fields(line);
    if (static_cast<Eigen::Index>(fields.size()) != cols) {
      throw ParseError("expected " + std::to_string(cols) + " columns, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    if (!have_header) {
      have_header = true;
      continue;
    }
    std::vector<double> vals;
    vals.reserve(fields.size());
    for (const auto& f : fields) {
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size() || !std::isfinite(v)) {
        throw ParseError("malformed number '" + f + "'", line_no);
      }
      vals.push_back(v);
    }
    rows.push_back(std::move(vals));
  }
  if (!have_header) throw ParseError("missing header row", line_no == 0 ? 1 : line_no);
  if (rows.empty()) throw TooShort("CSV has no data rows");
  Matrix samples(cols, static_cast<Eigen::Index>(rows.size()));
  for (std::size_t t = 0; t < rows.size(); ++t) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      samples(c, static_cast<Eigen::Index>(t)) = rows[t][static_cast<std::size_t>(c)];
    }
  }
  return samples;
}

Trajectory parse_csv(std::istream& in, SignalDims dims) {
  dims.validate();
  return Trajectory(dims, parse_table(in, dims.q()));
}

Trajectory load_csv(const std::filesystem::path& path, SignalDims dims) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return parse_csv(in, dims);
}

void write_csv(const Trajectory& traj, std::ostream& out) {
  const auto& d = traj.dims();
  for (int c = 0; c < d.m; ++c) out << (c ? "," : "") << 'u' << (c + 1);
  for (int c = 0; c < d.p; ++c) out << ",y" << (c + 1);
  out << '\n';
  for (Eigen::Index t = 0; t < traj.length(); ++t) {
    for (int c = 0; c < d.q(); ++c) {
      out << (c ? "," : "") << format_double(traj.samples()(c, t));
    }
    out << '\n';
  }
}

void save_csv(const Trajectory& traj, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  write_csv(traj, out);
}

}  // namespace gbc
