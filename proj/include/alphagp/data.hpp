#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "alphagp/common.hpp"

namespace alphagp {

namespace csv {

/// Numeric CSV with a header row. Lines starting with '#' are comments and
/// are skipped on read; writers may emit them before the header.
struct Table {
  std::vector<std::string> columns;
  Eigen::MatrixXd values;
  std::vector<std::string> comments;
};

Table read_table(const std::string& path);
void write_table(const std::string& path, const Table& table);

/// Shared shortest-round-trip formatting for every emitted double.
std::string format_double(double v);

}  // namespace csv

/// Per-column affine transform record; invertible by construction.
struct Standardization {
  Eigen::VectorXd x_mean, x_std;
  double y_mean = 0.0;
  double y_std = 1.0;
  bool applied = false;

  Eigen::MatrixXd apply_x(const Eigen::MatrixXd& X) const;
  Eigen::MatrixXd invert_x(const Eigen::MatrixXd& X) const;
  Eigen::VectorXd apply_y(const Eigen::VectorXd& y) const;
  Eigen::VectorXd invert_y(const Eigen::VectorXd& y) const;
};

struct Dataset {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Standardization standardization;

  Eigen::Index n() const { return X.rows(); }
  Eigen::Index d() const { return X.cols(); }
  void validate() const;
};

/// Column-wise standardization with the sample (N-1) standard deviation.
/// Constant columns are rejected by name.
Dataset standardize(const Dataset& raw);

/// Inverse transform back to original units.
Dataset destandardize(const Dataset& data);

/// Feature columns are named x1..xD; the target column defaults to "y".
Dataset dataset_from_table(const csv::Table& table,
                           const std::string& target = "y");
csv::Table dataset_to_table(const Dataset& data,
                            const std::string& target = "y");

struct Split {
  std::vector<int> train, test;
};

/// Seeded uniform permutation split; train gets ceil(fraction * N) rows.
Split seeded_split(Eigen::Index n, double train_fraction, std::uint64_t seed);

Dataset subset(const Dataset& data, const std::vector<int>& rows);

}  // namespace alphagp
