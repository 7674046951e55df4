#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "alphagp/kernels.hpp"
#include "alphagp/objective.hpp"

namespace alphagp {

/// Inputs to the divergence-rate bounds. `eigen_tail_C` plays the role of
/// N * sum_{m > M} lambda_m for the operator spectrum, or the tail of the
/// empirical Gram eigenvalues on measured instances; `R` bounds ||y||^2 <= RN.
struct BoundInputs {
  int N = 0;
  int M = 0;
  double alpha = 0.5;
  double delta = 0.1;
  double eps = 0.0;
  double gamma = 1.0;
  double sigma2 = 0.1;
  double v0 = 1.0;
  double eigen_tail_C = 0.0;
  double y_norm_sq = 0.0;
  double R = 1.0;
  double near_one_threshold = 1e-4;

  void validate() const;
};

/// alpha T / (2 delta sigma2)
///   + (1/delta) (alpha / (2(1-alpha))) N log(1 + ((1-alpha)/sigma2) T/N),
/// with T = (M+1) C + 2 N v0 eps. Near alpha = 1 the log term is evaluated
/// through its limit alpha T / (2 sigma2).
double theorem1_bound(const BoundInputs& in);

/// Same log term plus the quadratic term amplified by ||y||^2 / sigma2;
/// coincides with theorem1_bound when ||y||^2 / sigma2 = 1.
double theorem2_bound(const BoundInputs& in);

/// Inducing count for the squared-exponential spectrum:
///   ceil( ((3+gamma) log N + log eta) / log(1/B) ),
///   eta = v sqrt(2a) / (a sqrt(A) sigma2 delta (1-B)).
/// Grows as O(log N).
int se_corollary_inducing_count(int N, double gamma, double delta,
                                const SeSpectrum& spectrum, double sigma2);

/// Matern r+1/2 needs M = N^t inducing points with t = (gamma + 2) / (2r).
double matern_inducing_exponent(int r, double gamma);

/// Risk-bound right-hand side assembled from objective outputs:
///   (alpha/(n(1-alpha))) (logp_theta + logp_theta_star - gaussian_term
///                          - regularizer) + log(1/delta)/(n(1-alpha)).
/// Undefined at alpha = 0.
double risk_bound_rhs(double logp_theta, double logp_theta_star,
                      double gaussian_term, double regularizer, int n,
                      double alpha, double delta);

struct TrialRecord {
  int trial = 0;
  double divergence = 0.0;
  double theorem1 = 0.0;
  double theorem2 = 0.0;
  bool violation = false;
  bool ok = true;
  std::string error;
};

struct BoundReport {
  std::vector<TrialRecord> trials;
  int M = 0;
  double eps = 0.0;
  double violation_fraction = 0.0;
  double envelope = 0.0;  // delta + 3 sqrt(delta(1-delta)/trials)
  bool pass = false;
  int failures = 0;
};

struct VerifyOptions {
  int trials = 200;
  int N = 100;
  int D = 1;
  int M = 0;        // 0 = take the SE-corollary count
  double alpha = 0.5;
  double delta = 0.1;
  double gamma = 1.0;
  double eps = 0.0;  // 0 = delta sigma2 / (v N^(gamma+2))
  KernelSpec spec;
  std::uint64_t seed = 0;
};

/// Monte-Carlo check of the divergence bound: inputs drawn standard normal,
/// targets from the prior generative model, inducing rows by determinantal
/// sampling on the Gram matrix. Each trial compares the measured divergence
/// against the bounds evaluated with the trial's empirical Gram eigenvalue
/// tail; the report passes when the violation fraction stays inside the
/// Monte-Carlo envelope around delta.
BoundReport verify_bounds_empirically(const VerifyOptions& options,
                                      const SolverConfig& solver);

struct SandwichResult {
  double lower_gap = 0.0;   // exact - lower bound
  double upper_gap = 0.0;   // upper bound - exact
  double neg_log_cx = 0.0;  // penalty magnitude, >= 0
  bool amgm_ok = false;     // trace bound on the penalty holds
  double refined_upper = 0.0;  // max-eigenvalue variant, tighter
};

/// Dense-instance ordering check: lower bound <= exact <= upper bound, the
/// penalty is nonnegative, and the arithmetic-geometric-mean trace bound
/// dominates the penalty. Also evaluates the tighter upper bound that uses
/// the largest eigenvalue of K - Q instead of its trace.
SandwichResult sandwich_check(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& Z, const KernelSpec& spec,
                              const AlphaParam& alpha,
                              const SolverConfig& solver);

}  // namespace alphagp
