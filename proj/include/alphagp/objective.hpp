#pragma once

#include <Eigen/Dense>

#include "alphagp/kernels.hpp"
#include "alphagp/linalg.hpp"

namespace alphagp {

enum class AlphaRegime { Exact, General, NearOne, LemmaDegenerate };

/// The interpolation parameter of the objective, with the two numerical
/// guard bands: near alpha = 1 the exponent alpha/(2(1-alpha)) blows up and
/// the sparse-limit form is used instead; near alpha = 1/2 the M x M
/// determinant reduction is bypassed in favor of direct estimation.
struct AlphaParam {
  double alpha = 0.5;
  double near_one_threshold = 1e-4;
  double lemma_threshold = 1e-3;

  void validate() const;
  AlphaRegime regime() const;
};

struct ObjectiveDiagnostics {
  bool used_dense = true;
  bool lemma_fallback = false;
  bool degraded = false;  // an iterative solve missed its tolerance
  double max_relative_residual = 0.0;
  int max_cg_iterations = 0;
  int probe_count = 0;
  double jitter_xi = 0.0;
  double jitter_kuu = 0.0;
};

/// Objective value split into its two bookkeeping parts:
/// value = gaussian_term + regularizer, regularizer <= 0.
struct ObjectiveValue {
  double value = 0.0;
  double gaussian_term = 0.0;
  double regularizer = 0.0;
  ObjectiveDiagnostics diag;
};

/// Blended-covariance lower bound on the log marginal likelihood:
///   L_alpha = log N(y; 0, Xi) - (alpha / (2(1-alpha))) log|A|
/// with Xi = sigma2 I + (1-alpha) K + alpha Q and
/// A = I + ((1-alpha)/sigma2)(K - Q), Q the Nystrom approximation from the
/// inducing rows Z. alpha = 0 gives the exact log likelihood; alpha -> 1
/// gives the sparse variational bound.
ObjectiveValue alpha_elbo(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const Eigen::MatrixXd& Z, const KernelSpec& spec,
                          const AlphaParam& alpha, const SolverConfig& config);

/// Gradient of alpha_elbo with respect to
/// (log lengthscale, log signal_variance, log noise_variance).
Eigen::Vector3d alpha_elbo_grad(const Eigen::MatrixXd& X,
                                const Eigen::VectorXd& y,
                                const Eigen::MatrixXd& Z,
                                const KernelSpec& spec, const AlphaParam& alpha,
                                const SolverConfig& config);

/// Value and gradient in one evaluation (shared kernel assembly).
struct ObjectiveEval {
  ObjectiveValue value;
  Eigen::Vector3d grad;
};
ObjectiveEval alpha_elbo_value_and_grad(const Eigen::MatrixXd& X,
                                        const Eigen::VectorXd& y,
                                        const Eigen::MatrixXd& Z,
                                        const KernelSpec& spec,
                                        const AlphaParam& alpha,
                                        const SolverConfig& config);

/// log N(y; 0, sigma2 I + K): dense below the threshold, mBCG + Lanczos above.
ObjectiveValue exact_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const KernelSpec& spec, const SolverConfig& config);

/// Sparse variational bound
///   log N(y; 0, sigma2 I + Q) - Tr(K - Q) / (2 sigma2),
/// the alpha -> 1 limit of alpha_elbo. M x M work only.
ObjectiveValue svgp_elbo(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& Z, const KernelSpec& spec,
                         const SolverConfig& config);

/// Data-dependent upper bound on the log marginal likelihood:
///   -0.5 log|2 pi Xi| - 0.5 y' (Xi + alpha Tr(K - Q) I)^-1 y.
double upper_bound(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   const Eigen::MatrixXd& Z, const KernelSpec& spec,
                   const AlphaParam& alpha, const SolverConfig& config);

/// Closed-form Renyi alpha-divergence between two multivariate Gaussians.
/// Validation oracle; continuous in alpha with the KL divergence as the
/// alpha -> 1 limit.
double renyi_div_gaussians(const Eigen::VectorXd& mean1,
                           const Eigen::MatrixXd& cov1,
                           const Eigen::VectorXd& mean2,
                           const Eigen::MatrixXd& cov2, double alpha);

/// exact_loglik - alpha_elbo: the realized divergence the bound gives up.
/// Requires the dense path (N <= dense threshold).
double measured_divergence(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::MatrixXd& Z, const KernelSpec& spec,
                           const AlphaParam& alpha, const SolverConfig& config);

}  // namespace alphagp
