#pragma once

// Test-only oracles. These deliberately recompute quantities along routes
// that are independent of the production paths they check: explicit dense
// matrices, eigendecompositions, brute-force sums, quadrature, and finite
// differences.

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "alphagp/kernels.hpp"

namespace oracle {

inline std::mt19937_64 rng(std::uint64_t seed) { return std::mt19937_64(seed); }

inline Eigen::MatrixXd random_matrix(int rows, int cols, std::uint64_t seed) {
  auto gen = rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd M(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) M(i, j) = dist(gen);
  return M;
}

inline Eigen::VectorXd random_vector(int n, std::uint64_t seed) {
  return random_matrix(n, 1, seed).col(0);
}

/// SPD matrix with a prescribed spectrum: Q diag(lambda) Q'.
inline Eigen::MatrixXd spd_with_spectrum(const Eigen::VectorXd& lambda,
                                         std::uint64_t seed) {
  const int n = static_cast<int>(lambda.size());
  Eigen::MatrixXd G = random_matrix(n, n, seed);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(G);
  Eigen::MatrixXd Q = qr.householderQ();
  return Q * lambda.asDiagonal() * Q.transpose();
}

inline Eigen::MatrixXd random_spd(int n, std::uint64_t seed,
                                  double min_eig = 0.5, double max_eig = 5.0) {
  auto gen = rng(seed ^ 0x77);
  std::uniform_real_distribution<double> dist(min_eig, max_eig);
  Eigen::VectorXd lambda(n);
  for (int i = 0; i < n; ++i) lambda(i) = dist(gen);
  return spd_with_spectrum(lambda, seed);
}

inline double logdet(const Eigen::MatrixXd& A) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(A);
  return es.eigenvalues().array().log().sum();
}

inline Eigen::MatrixXd solve(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  return Eigen::LDLT<Eigen::MatrixXd>(A).solve(B);
}

inline double gaussian_loglik(const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& cov) {
  const double n = static_cast<double>(y.size());
  return -0.5 * (n * std::log(2.0 * 3.14159265358979323846) + logdet(cov) +
                 y.dot(solve(cov, y)));
}

struct DenseObjective {
  Eigen::MatrixXd K, Q, Xi, A;
  double gaussian = 0.0, regularizer = 0.0, value = 0.0;
};

/// Explicit evaluation of the blended-covariance bound: builds Q, Xi and A as
/// dense matrices and takes dense log-determinants. Assumes zero jitter.
inline DenseObjective dense_alpha_objective(const Eigen::MatrixXd& X,
                                            const Eigen::VectorXd& y,
                                            const Eigen::MatrixXd& Z,
                                            const alphagp::KernelSpec& spec,
                                            double alpha) {
  DenseObjective o;
  const double s2 = spec.hp.noise_variance;
  const int n = static_cast<int>(X.rows());
  o.K = alphagp::gram_serial(spec, X, X);
  Eigen::MatrixXd K_fU = alphagp::gram_serial(spec, X, Z);
  Eigen::MatrixXd K_UU = alphagp::gram_serial(spec, Z, Z);
  o.Q = K_fU * solve(K_UU, K_fU.transpose());
  o.Q = 0.5 * (o.Q + o.Q.transpose()).eval();
  o.Xi = (1.0 - alpha) * o.K + alpha * o.Q;
  o.Xi.diagonal().array() += s2;
  o.A = ((1.0 - alpha) / s2) * (o.K - o.Q);
  o.A.diagonal().array() += 1.0;
  o.gaussian = gaussian_loglik(y, o.Xi);
  o.regularizer =
      alpha == 0.0 ? 0.0 : -(alpha / (2.0 * (1.0 - alpha))) * logdet(o.A);
  o.value = o.gaussian + o.regularizer;
  return o;
}

/// Central finite difference of a scalar function of one coordinate.
inline double central_diff(const std::function<double(double)>& f, double x0,
                           double h) {
  return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

/// Adaptive Simpson quadrature.
inline double adaptive_simpson(const std::function<double(double)>& f, double a,
                               double b, double tol = 1e-12, int depth = 24) {
  auto simpson = [&f](double lo, double hi) {
    return (hi - lo) / 6.0 * (f(lo) + 4.0 * f(0.5 * (lo + hi)) + f(hi));
  };
  std::function<double(double, double, double, int)> rec =
      [&](double lo, double hi, double whole, int d) -> double {
    const double mid = 0.5 * (lo + hi);
    const double left = simpson(lo, mid), right = simpson(mid, hi);
    if (d <= 0 || std::abs(left + right - whole) < 15.0 * tol)
      return left + right + (left + right - whole) / 15.0;
    return rec(lo, mid, left, d - 1) + rec(mid, hi, right, d - 1);
  };
  return rec(a, b, simpson(a, b), depth);
}

/// All size-M index subsets of {0..N-1}, lexicographic.
inline std::vector<std::vector<int>> combinations(int n, int m) {
  std::vector<std::vector<int>> out;
  std::vector<int> comb(m);
  for (int i = 0; i < m; ++i) comb[i] = i;
  while (true) {
    out.push_back(comb);
    int i = m - 1;
    while (i >= 0 && comb[i] == n - m + i) --i;
    if (i < 0) break;
    ++comb[i];
    for (int j = i + 1; j < m; ++j) comb[j] = comb[j - 1] + 1;
  }
  return out;
}

inline double subset_det(const Eigen::MatrixXd& K, const std::vector<int>& idx) {
  const int m = static_cast<int>(idx.size());
  Eigen::MatrixXd S(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) S(i, j) = K(idx[i], idx[j]);
  return S.fullPivLu().determinant();
}

}  // namespace oracle
