#include "alphagp/kernels.hpp"

#include <cmath>
#include <string>

namespace alphagp {

void Hyperparams::validate() const {
  if (!(lengthscale > 0.0) || !std::isfinite(lengthscale))
    throw InputError("lengthscale must be positive and finite");
  if (!(signal_variance > 0.0) || !std::isfinite(signal_variance))
    throw InputError("signal_variance must be positive and finite");
  if (!(noise_variance > 0.0) || !std::isfinite(noise_variance))
    throw InputError("noise_variance must be positive and finite");
}

void KernelSpec::validate() const {
  hp.validate();
  if (family == KernelFamily::Matern && (matern_r < 1 || matern_r > 3))
    throw InputError("Matern smoothness index r must be in {1, 2, 3}");
}

namespace {

// Matern r+1/2 closed forms in u = sqrt(2r+1) * d / l:
//   r=1: (1 + u) e^-u
//   r=2: (1 + u + u^2/3) e^-u
//   r=3: (1 + u + 2u^2/5 + u^3/15) e^-u
double matern_poly(int r, double u) {
  switch (r) {
    case 1:
      return 1.0 + u;
    case 2:
      return 1.0 + u + u * u / 3.0;
    default:
      return 1.0 + u + 0.4 * u * u + u * u * u / 15.0;
  }
}

// d/du of matern_poly; the log-lengthscale derivative of the kernel is
// v * u * (P(u) - P'(u)) * e^-u.
double matern_poly_deriv(int r, double u) {
  switch (r) {
    case 1:
      return 1.0;
    case 2:
      return 1.0 + 2.0 * u / 3.0;
    default:
      return 1.0 + 0.8 * u + 0.2 * u * u;
  }
}

double eval_from_sqdist(const KernelSpec& spec, double d2) {
  const double v = spec.hp.signal_variance;
  const double l = spec.hp.lengthscale;
  if (spec.family == KernelFamily::SquaredExponential)
    return v * std::exp(-0.5 * d2 / (l * l));
  const double u = std::sqrt((2.0 * spec.matern_r + 1.0) * d2) / l;
  return v * matern_poly(spec.matern_r, u) * std::exp(-u);
}

double grad_logl_from_sqdist(const KernelSpec& spec, double d2) {
  const double v = spec.hp.signal_variance;
  const double l = spec.hp.lengthscale;
  if (spec.family == KernelFamily::SquaredExponential)
    return v * std::exp(-0.5 * d2 / (l * l)) * (d2 / (l * l));
  const double u = std::sqrt((2.0 * spec.matern_r + 1.0) * d2) / l;
  return v * u *
         (matern_poly(spec.matern_r, u) - matern_poly_deriv(spec.matern_r, u)) *
         std::exp(-u);
}

template <typename EntryFn>
Eigen::MatrixXd assemble(const Eigen::MatrixXd& X1, const Eigen::MatrixXd& X2,
                         EntryFn entry, bool parallel) {
  if (X1.cols() != X2.cols())
    throw InputError("gram: input dimension mismatch (" +
                     std::to_string(X1.cols()) + " vs " +
                     std::to_string(X2.cols()) + ")");
  const Eigen::Index n1 = X1.rows(), n2 = X2.rows();
  Eigen::MatrixXd K(n1, n2);
  if (parallel) {
#pragma omp parallel for schedule(static)
    for (Eigen::Index i = 0; i < n1; ++i)
      for (Eigen::Index j = 0; j < n2; ++j)
        K(i, j) = entry((X1.row(i) - X2.row(j)).squaredNorm());
  } else {
    for (Eigen::Index i = 0; i < n1; ++i)
      for (Eigen::Index j = 0; j < n2; ++j)
        K(i, j) = entry((X1.row(i) - X2.row(j)).squaredNorm());
  }
  return K;
}

}  // namespace

double kernel_eval(const KernelSpec& spec, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& y) {
  spec.validate();
  if (x.size() != y.size())
    throw InputError("kernel_eval: input dimension mismatch");
  return eval_from_sqdist(spec, (x - y).squaredNorm());
}

Eigen::MatrixXd gram(const KernelSpec& spec, const Eigen::MatrixXd& X1,
                     const Eigen::MatrixXd& X2) {
  spec.validate();
  return assemble(
      X1, X2, [&](double d2) { return eval_from_sqdist(spec, d2); }, true);
}

Eigen::MatrixXd gram_serial(const KernelSpec& spec, const Eigen::MatrixXd& X1,
                            const Eigen::MatrixXd& X2) {
  spec.validate();
  return assemble(
      X1, X2, [&](double d2) { return eval_from_sqdist(spec, d2); }, false);
}

Eigen::MatrixXd gram_grad_log_lengthscale(const KernelSpec& spec,
                                          const Eigen::MatrixXd& X1,
                                          const Eigen::MatrixXd& X2) {
  spec.validate();
  return assemble(
      X1, X2, [&](double d2) { return grad_logl_from_sqdist(spec, d2); }, true);
}

SeSpectrum SeSpectrum::from(const Hyperparams& hp,
                            std::optional<double> a_scale) {
  hp.validate();
  const double scale = a_scale.value_or(hp.noise_variance);
  if (!(scale > 0.0)) throw InputError("SeSpectrum: a_scale must be positive");
  SeSpectrum s;
  s.a = 1.0 / (4.0 * scale);
  s.b = 1.0 / (2.0 * hp.lengthscale * hp.lengthscale);
  s.c = std::sqrt(s.a * s.a + 2.0 * s.a * s.b);
  s.A = s.a + s.b + s.c;
  s.B = s.b / s.A;
  s.signal_variance = hp.signal_variance;
  return s;
}

double SeSpectrum::eigenvalue(int m) const {
  if (m < 1) throw InputError("SeSpectrum::eigenvalue: m must be >= 1");
  return signal_variance * std::sqrt(2.0 * a / A) * std::pow(B, m - 1);
}

double se_eigen_tail(const SeSpectrum& s, int M) {
  if (M < 0) throw InputError("se_eigen_tail: M must be >= 0");
  // sum_{m>M} v sqrt(2a/A) B^(m-1) = v sqrt(2a) / ((1-B) sqrt(A)) * B^M
  return s.signal_variance * std::sqrt(2.0 * s.a) /
         ((1.0 - s.B) * std::sqrt(s.A)) * std::pow(s.B, M);
}

double matern_tail_bound(int r, int M) {
  if (r < 1) throw InputError("matern_tail_bound: r must be >= 1");
  if (M < 1) throw InputError("matern_tail_bound: M must be >= 1");
  const double s = 2.0 * r + 2.0;  // eigenvalue decay exponent
  const double m = static_cast<double>(M);
  return std::pow(m, 1.0 - s) / (s - 1.0) - 0.5 * std::pow(m, -s) +
         (s / 12.0) * std::pow(m, -s - 1.0);
}

}  // namespace alphagp
