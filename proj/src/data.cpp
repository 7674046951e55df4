#include "alphagp/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace alphagp {

namespace csv {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

}  // namespace

Table read_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open file: " + path);
  Table t;
  std::string line;
  bool have_header = false;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      t.comments.push_back(line);
      continue;
    }
    if (!have_header) {
      t.columns = split_line(line);
      if (t.columns.empty()) throw InputError(path + ": empty header");
      have_header = true;
      continue;
    }
    std::vector<std::string> cells = split_line(line);
    if (cells.size() != t.columns.size())
      throw InputError(path + ": row has " + std::to_string(cells.size()) +
                       " cells, header has " + std::to_string(t.columns.size()));
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i) {
      try {
        std::size_t pos = 0;
        row[i] = std::stod(cells[i], &pos);
        if (pos != cells[i].size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw InputError(path + ": non-numeric cell '" + cells[i] + "'");
      }
    }
    rows.push_back(std::move(row));
  }
  if (!have_header) throw InputError(path + ": missing header row");
  t.values.resize(static_cast<Eigen::Index>(rows.size()),
                  static_cast<Eigen::Index>(t.columns.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
          rows[i][j];
  return t;
}

void write_table(const std::string& path, const Table& t) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write file: " + path);
  for (const std::string& c : t.comments)
    out << (c.empty() || c[0] == '#' ? c : "# " + c) << "\n";
  for (std::size_t j = 0; j < t.columns.size(); ++j)
    out << (j ? "," : "") << t.columns[j];
  out << "\n";
  for (Eigen::Index i = 0; i < t.values.rows(); ++i) {
    for (Eigen::Index j = 0; j < t.values.cols(); ++j)
      out << (j ? "," : "") << format_double(t.values(i, j));
    out << "\n";
  }
}

}  // namespace csv

void Dataset::validate() const {
  if (X.rows() < 1 || X.cols() < 1)
    throw InputError("dataset: need N >= 1 and D >= 1");
  if (y.size() != X.rows())
    throw InputError("dataset: target length does not match inputs");
  if (!X.allFinite() || !y.allFinite())
    throw InputError("dataset: NaN/Inf values after ingestion");
}

Eigen::MatrixXd Standardization::apply_x(const Eigen::MatrixXd& X) const {
  if (!applied) return X;
  return (X.rowwise() - x_mean.transpose()).array().rowwise() /
         x_std.transpose().array();
}

Eigen::MatrixXd Standardization::invert_x(const Eigen::MatrixXd& X) const {
  if (!applied) return X;
  return (X.array().rowwise() * x_std.transpose().array()).matrix().rowwise() +
         x_mean.transpose();
}

Eigen::VectorXd Standardization::apply_y(const Eigen::VectorXd& v) const {
  if (!applied) return v;
  return (v.array() - y_mean) / y_std;
}

Eigen::VectorXd Standardization::invert_y(const Eigen::VectorXd& v) const {
  if (!applied) return v;
  return (v.array() * y_std + y_mean).matrix();
}

Dataset standardize(const Dataset& raw) {
  raw.validate();
  if (raw.standardization.applied) return raw;
  const Eigen::Index n = raw.n(), d = raw.d();
  if (n < 2) throw InputError("standardize: need at least 2 rows");
  Standardization s;
  s.x_mean = raw.X.colwise().mean();
  s.x_std.resize(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var =
        (raw.X.col(j).array() - s.x_mean(j)).square().sum() / double(n - 1);
    if (var <= 0.0)
      throw InputError("standardize: column x" + std::to_string(j + 1) +
                       " has zero variance");
    s.x_std(j) = std::sqrt(var);
  }
  s.y_mean = raw.y.mean();
  const double yvar = (raw.y.array() - s.y_mean).square().sum() / double(n - 1);
  if (yvar <= 0.0) throw InputError("standardize: target has zero variance");
  s.y_std = std::sqrt(yvar);
  s.applied = true;

  Dataset out;
  out.standardization = s;
  out.X = s.apply_x(raw.X);
  out.y = s.apply_y(raw.y);
  return out;
}

Dataset destandardize(const Dataset& data) {
  if (!data.standardization.applied) return data;
  Dataset out;
  out.X = data.standardization.invert_x(data.X);
  out.y = data.standardization.invert_y(data.y);
  out.standardization = Standardization{};
  return out;
}

Dataset dataset_from_table(const csv::Table& t, const std::string& target) {
  int target_idx = -1;
  std::vector<int> feature_idx;
  for (std::size_t j = 0; j < t.columns.size(); ++j) {
    if (t.columns[j] == target) {
      target_idx = static_cast<int>(j);
    } else {
      feature_idx.push_back(static_cast<int>(j));
    }
  }
  if (target_idx < 0)
    throw InputError("dataset: target column '" + target + "' not found");
  if (feature_idx.empty()) throw InputError("dataset: no feature columns");
  Dataset d;
  d.X.resize(t.values.rows(), static_cast<Eigen::Index>(feature_idx.size()));
  for (std::size_t j = 0; j < feature_idx.size(); ++j)
    d.X.col(static_cast<Eigen::Index>(j)) = t.values.col(feature_idx[j]);
  d.y = t.values.col(target_idx);
  d.validate();
  return d;
}

csv::Table dataset_to_table(const Dataset& data, const std::string& target) {
  csv::Table t;
  for (Eigen::Index j = 0; j < data.d(); ++j)
    t.columns.push_back("x" + std::to_string(j + 1));
  t.columns.push_back(target);
  t.values.resize(data.n(), data.d() + 1);
  t.values.leftCols(data.d()) = data.X;
  t.values.col(data.d()) = data.y;
  return t;
}

Split seeded_split(Eigen::Index n, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw InputError("split fraction must lie in (0, 1)");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  auto rng = make_rng(seed, 0x5b117);
  std::shuffle(perm.begin(), perm.end(), rng);
  const Eigen::Index n_train = static_cast<Eigen::Index>(
      std::ceil(train_fraction * static_cast<double>(n)));
  Split s;
  s.train.assign(perm.begin(), perm.begin() + n_train);
  s.test.assign(perm.begin() + n_train, perm.end());
  return s;
}

Dataset subset(const Dataset& data, const std::vector<int>& rows) {
  Dataset out;
  out.X.resize(static_cast<Eigen::Index>(rows.size()), data.d());
  out.y.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.X.row(static_cast<Eigen::Index>(i)) = data.X.row(rows[i]);
    out.y(static_cast<Eigen::Index>(i)) = data.y(rows[i]);
  }
  out.standardization = data.standardization;
  return out;
}

}  // namespace alphagp
