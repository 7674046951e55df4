#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "alphagp/data.hpp"
#include "alphagp/objective.hpp"

namespace alphagp {

enum class InducingStrategy { RandomSubset, KDppExact, KDppApprox, UserProvided };

struct InducingSet {
  Eigen::MatrixXd Z;  // in the units of the data it was selected from
  InducingStrategy provenance = InducingStrategy::RandomSubset;
  std::uint64_t seed = 0;
  double eps = 1e-6;           // KDppApprox only
  std::vector<int> indices;    // training-row indices for subset provenances

  Eigen::Index m() const { return Z.rows(); }
};

/// Picks M inducing rows from the data: a seeded uniform subset, or a
/// determinantal sample on the training Gram matrix (exact at desk scale,
/// swap-chain approximation otherwise).
InducingSet select_inducing(const Dataset& data, int M,
                            InducingStrategy strategy, const KernelSpec& kernel,
                            std::uint64_t seed, double eps = 1e-6);

struct FitConfig {
  int max_iterations = 10000;
  double objective_tolerance = 1e-8;  // relative objective change
  double gradient_tolerance = 1e-6;   // max-norm per data point
  int restarts = 1;
  int max_line_search_steps = 40;
  // start from the caller's hyperparameters instead of the median-distance
  // heuristic (lengthscale = median pairwise distance, v = 1, sigma2 = 0.1)
  bool use_initial_hyperparams = false;
  SolverConfig solver;
  std::uint64_t seed = 0;

  void validate() const;
};

struct FitDiagnostics {
  int iterations = 0;
  double final_objective = std::numeric_limits<double>::quiet_NaN();
  double gradient_norm = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  bool hit_max_iterations = false;
  int restarts_run = 1;
  double cache_residual = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> objective_trace;
};

/// Trained state. Inducing inputs and standardization are stored in original
/// units; hyperparameters are on the standardized scale the optimizer saw.
/// predict_coeff and predict_quad are the M-sized solve artifacts that make
/// prediction independent of the training set.
struct GPModel {
  KernelSpec spec;
  AlphaParam alpha;
  InducingSet inducing;
  Standardization standardization;
  Eigen::VectorXd xi_inv_y;
  Eigen::VectorXd predict_coeff;  // K_UU^-1 K_Uf Xi^-1 y
  Eigen::MatrixXd predict_quad;   // K_UU^-1 K_Uf Xi^-1 K_fU K_UU^-1
  double variance_floor = 1e-12;
  FitDiagnostics diagnostics;

  void save(const std::string& path) const;
  static GPModel load(const std::string& path);
};

struct AlphaChoice {
  bool cross_validate = false;
  AlphaParam value;
  std::vector<double> grid;

  static AlphaChoice fixed(double alpha);
  static AlphaChoice cv(std::vector<double> grid);
};

/// Gradient ascent with backtracking line search on the log hyperparameters;
/// the accepted-objective trace is non-decreasing. Data is standardized
/// internally when it is not already. Best of `restarts` seeded starts wins.
GPModel fit(const Dataset& data, int M, InducingStrategy strategy,
            const AlphaChoice& alpha, const KernelSpec& initial,
            const FitConfig& config);
GPModel fit(const Dataset& data, const InducingSet& inducing,
            const AlphaChoice& alpha, const KernelSpec& initial,
            const FitConfig& config);

struct Prediction {
  Eigen::VectorXd mean;      // original target units
  Eigen::VectorXd variance;  // original units, includes observation noise
  int clamped = 0;           // entries raised to the variance floor
};

Prediction predict(const GPModel& model, const Eigen::MatrixXd& X_star);

struct AlphaTableRow {
  double alpha = 0.0;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  double objective = std::numeric_limits<double>::quiet_NaN();
  int iterations = 0;
  bool ok = false;
};

struct AlphaSelection {
  AlphaParam best;
  std::vector<AlphaTableRow> table;
};

struct CvConfig {
  double train_fraction = 0.6;  // single holdout by default
  int folds = 1;
};

/// Fits once per grid entry on the training portion, scores held-out RMSE in
/// original units, and returns the minimizer (ties break toward smaller
/// alpha). Failed fits are recorded and excluded from the argmin.
AlphaSelection select_alpha(const Dataset& data,
                            const std::vector<double>& grid, int M,
                            InducingStrategy strategy,
                            const KernelSpec& initial, const FitConfig& config,
                            const CvConfig& cv = CvConfig{});

/// Minimum-RMSE entry among successful rows; RMSEs within 1e-12 are treated
/// as tied and the smallest alpha wins. Throws when every row failed.
double select_alpha_argmin(const std::vector<AlphaTableRow>& table);

double rmse(const Eigen::VectorXd& predictions, const Eigen::VectorXd& truth);

}  // namespace alphagp
