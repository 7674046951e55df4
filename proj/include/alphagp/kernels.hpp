#pragma once

#include <Eigen/Dense>
#include <optional>

#include "alphagp/common.hpp"

namespace alphagp {

/// Kernel hyperparameters. All strictly positive; optimizers work on the logs
/// so positivity is structural.
struct Hyperparams {
  double lengthscale = 1.0;
  double signal_variance = 1.0;
  double noise_variance = 0.1;

  void validate() const;
};

enum class KernelFamily { SquaredExponential, Matern };

/// A stationary kernel: squared exponential, or Matern with half-integer
/// smoothness r + 1/2 for r in {1, 2, 3} (the orders with closed forms).
struct KernelSpec {
  KernelFamily family = KernelFamily::SquaredExponential;
  int matern_r = 1;
  Hyperparams hp;

  void validate() const;
};

double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& y);

/// Cross-covariance matrix, entry (i,j) = k(X1.row(i), X2.row(j)).
/// Row-parallel; bit-identical to gram_serial.
Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::MatrixXd& X1,
                     const Eigen::MatrixXd& X2);
Eigen::MatrixXd gram_serial(const KernelSpec& spec, const Eigen::MatrixXd& X1,
                            const Eigen::MatrixXd& X2);

/// Entrywise derivative of gram() with respect to log(lengthscale).
/// (The derivative w.r.t. log(signal_variance) is gram() itself.)
Eigen::MatrixXd gram_grad_log_lengthscale(const KernelSpec& spec,
                                          const Eigen::MatrixXd& X1,
                                          const Eigen::MatrixXd& X2);

/// Spectral constants of the squared-exponential kernel operator for
/// Gaussian inputs: eigenvalue(m) = v * sqrt(2a/A) * B^(m-1), with
/// a = 1/(4*a_scale), b = 1/(2*l^2), c = sqrt(a^2 + 2ab), A = a+b+c, B = b/A.
/// `a_scale` defaults to the noise variance; pass the input-distribution
/// variance instead to get the classical operator spectrum.
struct SeSpectrum {
  double a, b, c, A, B;
  double signal_variance;

  static SeSpectrum from(const Hyperparams& hp,
                         std::optional<double> a_scale = std::nullopt);

  double eigenvalue(int m) const;  // m >= 1
};

/// Exact geometric tail sum_{m > M} eigenvalue(m) of the SE spectrum.
double se_eigen_tail(const SeSpectrum& spectrum, int M);

/// Three-term Euler-Maclaurin estimate of sum_{m > M} m^(-(2r+2)), the
/// eigenvalue tail scale of a Matern r+1/2 kernel operator. Accurate for
/// moderate M; at M = 1 the asymptotic expansion is poor (documented caveat).
double matern_tail_bound(int r, int M);

}  // namespace alphagp
