#include "alphagp/theory.hpp"

#include <algorithm>
#include <cmath>

namespace alphagp {

void BoundInputs::validate() const {
  if (N < 1 || M < 0) throw InputError("bound inputs: need N >= 1, M >= 0");
  if (!(delta > 0.0 && delta < 1.0))
    throw InputError("bound inputs: delta must lie in (0, 1)");
  if (!(alpha >= 0.0 && alpha < 1.0))
    throw InputError("bound inputs: alpha must lie in [0, 1)");
  if (eps < 0.0) throw InputError("bound inputs: eps must be >= 0");
  if (!(gamma > 0.0)) throw InputError("bound inputs: gamma must be positive");
  if (eigen_tail_C < 0.0) throw InputError("bound inputs: C must be >= 0");
  if (!(sigma2 > 0.0) || !(v0 > 0.0))
    throw InputError("bound inputs: sigma2 and v0 must be positive");
  if (y_norm_sq < 0.0) throw InputError("bound inputs: ||y||^2 must be >= 0");
}

namespace {

double bound_T(const BoundInputs& in) {
  return (in.M + 1) * in.eigen_tail_C + 2.0 * in.N * in.v0 * in.eps;
}

// (1/delta) (alpha/(2(1-alpha))) N log(1 + ((1-alpha)/sigma2) T/N),
// with the alpha -> 1 limit (1/delta) alpha T / (2 sigma2) inside the band.
double log_term(const BoundInputs& in) {
  const double T = bound_T(in);
  if (in.alpha >= 1.0 - in.near_one_threshold)
    return in.alpha * T / (2.0 * in.sigma2 * in.delta);
  const double arg = (1.0 - in.alpha) / in.sigma2 * T / in.N;
  return in.alpha / (2.0 * (1.0 - in.alpha) * in.delta) * in.N *
         std::log1p(arg);
}

}  // namespace

double theorem1_bound(const BoundInputs& in) {
  in.validate();
  const double T = bound_T(in);
  return in.alpha * T / (2.0 * in.delta * in.sigma2) + log_term(in);
}

double theorem2_bound(const BoundInputs& in) {
  in.validate();
  const double T = bound_T(in);
  return log_term(in) + in.alpha * T / (2.0 * in.delta * in.sigma2) *
                            (in.y_norm_sq / in.sigma2);
}

int se_corollary_inducing_count(int N, double gamma, double delta,
                                const SeSpectrum& s, double sigma2) {
  if (N < 2) throw InputError("se_corollary_inducing_count: N must be >= 2");
  if (!(gamma > 0.0)) throw InputError("gamma must be positive");
  if (!(delta > 0.0 && delta < 1.0))
    throw InputError("delta must lie in (0, 1)");
  const double eta = s.signal_variance * std::sqrt(2.0 * s.a) /
                     (s.a * std::sqrt(s.A) * sigma2 * delta * (1.0 - s.B));
  const double m = ((3.0 + gamma) * std::log(static_cast<double>(N)) +
                    std::log(eta)) /
                   std::log(1.0 / s.B);
  return std::max(1, static_cast<int>(std::ceil(m)));
}

double matern_inducing_exponent(int r, double gamma) {
  if (r < 1) throw InputError("matern_inducing_exponent: r must be >= 1");
  if (!(gamma > 0.0)) throw InputError("gamma must be positive");
  return (gamma + 2.0) / (2.0 * r);
}

double risk_bound_rhs(double logp_theta, double logp_theta_star,
                      double gaussian_term, double regularizer, int n,
                      double alpha, double delta) {
  if (n < 1) throw InputError("risk_bound_rhs: n must be >= 1");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw InputError("risk_bound_rhs: alpha must lie in (0, 1)");
  if (!(delta > 0.0 && delta < 1.0))
    throw InputError("risk_bound_rhs: delta must lie in (0, 1)");
  const double bracket =
      logp_theta + logp_theta_star - gaussian_term - regularizer;
  const double scale = 1.0 / (n * (1.0 - alpha));
  return alpha * scale * bracket + scale * std::log(1.0 / delta);
}

BoundReport verify_bounds_empirically(const VerifyOptions& opt,
                                      const SolverConfig& solver) {
  if (opt.trials < 1) throw InputError("verify_bounds: trials must be >= 1");
  if (opt.N < 2 || opt.D < 1) throw InputError("verify_bounds: bad N or D");
  if (opt.N > solver.dense_threshold)
    throw InputError("verify_bounds: N must stay within the dense threshold");
  opt.spec.validate();
  AlphaParam alpha{opt.alpha};
  alpha.validate();

  const Hyperparams& hp = opt.spec.hp;
  const double sigma2 = hp.noise_variance;
  const double eps =
      opt.eps > 0.0
          ? opt.eps
          : opt.delta * sigma2 /
                (hp.signal_variance *
                 std::pow(static_cast<double>(opt.N), opt.gamma + 2.0));
  int M = opt.M;
  if (M <= 0) {
    if (opt.spec.family != KernelFamily::SquaredExponential)
      throw InputError(
          "verify_bounds: automatic inducing count needs the SE kernel");
    SeSpectrum spectrum = SeSpectrum::from(hp);
    M = se_corollary_inducing_count(opt.N, opt.gamma, opt.delta, spectrum,
                                    sigma2);
  }
  M = std::min(M, opt.N);

  BoundReport report;
  report.M = M;
  report.eps = eps;
  report.trials.resize(opt.trials);

#pragma omp parallel for schedule(dynamic)
  for (int t = 0; t < opt.trials; ++t) {
    TrialRecord rec;
    rec.trial = t;
    try {
      auto rng = make_rng(opt.seed, 0xb0 + 4 * static_cast<std::uint64_t>(t));
      std::normal_distribution<double> normal(0.0, 1.0);
      Eigen::MatrixXd X(opt.N, opt.D);
      for (Eigen::Index i = 0; i < X.rows(); ++i)
        for (Eigen::Index j = 0; j < X.cols(); ++j) X(i, j) = normal(rng);

      Eigen::MatrixXd K = gram(opt.spec, X, X);
      // draw y from the prior generative model: y = f + noise
      Eigen::MatrixXd Kj = K;
      Kj.diagonal().array() += 1e-10 * std::max(1.0, K.trace() / opt.N);
      Eigen::LLT<Eigen::MatrixXd> llt(Kj);
      if (llt.info() != Eigen::Success)
        throw NumericalError("verify_bounds: prior covariance not PD");
      Eigen::VectorXd zf(opt.N), ze(opt.N);
      for (int i = 0; i < opt.N; ++i) zf(i) = normal(rng);
      for (int i = 0; i < opt.N; ++i) ze(i) = normal(rng);
      Eigen::VectorXd y =
          llt.matrixL() * zf + std::sqrt(sigma2) * ze;

      const KdppMode mode =
          opt.N <= 20 ? KdppMode::Exact : KdppMode::EpsApprox;
      std::vector<int> idx = kdpp_sample(
          K, M, mode, eps, opt.seed + 7919 * static_cast<std::uint64_t>(t + 1));
      Eigen::MatrixXd Z(M, opt.D);
      for (int i = 0; i < M; ++i) Z.row(i) = X.row(idx[i]);

      rec.divergence =
          measured_divergence(X, y, Z, opt.spec, alpha, solver);

      // empirical Gram eigenvalue tail beyond M
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
      if (es.info() != Eigen::Success)
        throw NumericalError("verify_bounds: eigendecomposition failed");
      double tail = 0.0;  // eigenvalues ascend; skip the top M
      for (Eigen::Index i = 0; i + M < opt.N; ++i)
        tail += std::max(es.eigenvalues()(i), 0.0);

      BoundInputs in;
      in.N = opt.N;
      in.M = M;
      in.alpha = opt.alpha;
      in.delta = opt.delta;
      in.eps = eps;
      in.gamma = opt.gamma;
      in.sigma2 = sigma2;
      in.v0 = hp.signal_variance;
      in.eigen_tail_C = tail;
      in.y_norm_sq = y.squaredNorm();
      rec.theorem1 = theorem1_bound(in);
      rec.theorem2 = theorem2_bound(in);
      rec.violation = rec.divergence > rec.theorem2;
    } catch (const std::exception& e) {
      rec.ok = false;
      rec.error = e.what();
    }
    report.trials[t] = rec;
  }

  int ok = 0, violations = 0;
  for (const TrialRecord& r : report.trials) {
    if (!r.ok) {
      ++report.failures;
      continue;
    }
    ++ok;
    if (r.violation) ++violations;
  }
  if (ok == 0) throw NumericalError("verify_bounds: every trial failed");
  report.violation_fraction = static_cast<double>(violations) / ok;
  report.envelope =
      opt.delta + 3.0 * std::sqrt(opt.delta * (1.0 - opt.delta) / ok);
  report.pass = report.violation_fraction <= report.envelope;
  return report;
}

SandwichResult sandwich_check(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                              const Eigen::MatrixXd& Z, const KernelSpec& spec,
                              const AlphaParam& alpha,
                              const SolverConfig& solver) {
  if (X.rows() > solver.dense_threshold)
    throw InputError("sandwich_check: requires the dense path");
  ObjectiveValue lower = alpha_elbo(X, y, Z, spec, alpha, solver);
  ObjectiveValue exact = exact_loglik(X, y, spec, solver);
  const double upper = upper_bound(X, y, Z, spec, alpha, solver);

  SandwichResult out;
  out.lower_gap = exact.value - lower.value;
  out.upper_gap = upper - exact.value;
  out.neg_log_cx = -lower.regularizer;

  // trace bound on the penalty and the max-eigenvalue upper-bound variant
  const double s2 = spec.hp.noise_variance;
  const double a = alpha.alpha;
  Eigen::MatrixXd K = gram(spec, X, X);
  Eigen::MatrixXd K_fU = gram(spec, X, Z);
  Eigen::MatrixXd K_UU = gram(spec, Z, Z);
  K_UU.diagonal().array() += solver.effective_jitter(K_UU.trace(), Z.rows());
  Eigen::LLT<Eigen::MatrixXd> llt_uu(K_UU);
  if (llt_uu.info() != Eigen::Success)
    throw NumericalError("sandwich_check: inducing Gram not PD");
  Eigen::MatrixXd Q = K_fU * llt_uu.solve(K_fU.transpose());
  Q = 0.5 * (Q + Q.transpose()).eval();
  Eigen::MatrixXd R = K - Q;
  const double n = static_cast<double>(X.rows());
  const double tr_A = n + (1.0 - a) / s2 * R.trace();
  if (a > 0.0 && alpha.regime() != AlphaRegime::NearOne) {
    const double amgm_rhs =
        a / (2.0 * (1.0 - a)) * n * std::log(tr_A / n);
    out.amgm_ok = out.neg_log_cx <= amgm_rhs + 1e-10;
  } else {
    out.amgm_ok = true;
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(R);
  const double lambda_max = std::max(es.eigenvalues().maxCoeff(), 0.0);
  Eigen::MatrixXd Xi = (1.0 - a) * K + a * Q;
  Xi.diagonal().array() += s2;
  const double xi_jit = solver.effective_jitter(Xi.trace(), X.rows());
  Xi.diagonal().array() += xi_jit;
  Eigen::LLT<Eigen::MatrixXd> llt_xi(Xi);
  if (llt_xi.info() != Eigen::Success)
    throw NumericalError("sandwich_check: blended covariance not PD");
  const double logdet_xi =
      2.0 * llt_xi.matrixLLT().diagonal().array().log().sum();
  Eigen::MatrixXd shifted = Xi;
  shifted.diagonal().array() += a * lambda_max;
  Eigen::LLT<Eigen::MatrixXd> llt_sh(shifted);
  constexpr double kLog2Pi = 1.8378770664093454836;
  out.refined_upper =
      -0.5 * (n * kLog2Pi + logdet_xi + y.dot(llt_sh.solve(y)));
  return out;
}

}  // namespace alphagp
