#include "alphagp/objective.hpp"

#include <cmath>
#include <numbers>

namespace alphagp {

void AlphaParam::validate() const {
  if (!(alpha >= 0.0) || !(alpha < 1.0))
    throw InputError("alpha must lie in [0, 1)");
  if (!(near_one_threshold > 0.0) || !(lemma_threshold > 0.0))
    throw InputError("alpha regime thresholds must be positive");
}

AlphaRegime AlphaParam::regime() const {
  validate();
  if (alpha == 0.0) return AlphaRegime::Exact;
  if (alpha >= 1.0 - near_one_threshold) return AlphaRegime::NearOne;
  if (std::abs(1.0 - 2.0 * alpha) < lemma_threshold)
    return AlphaRegime::LemmaDegenerate;
  return AlphaRegime::General;
}

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

// Kernel blocks shared by every objective form. K_UU carries the recorded
// jitter; Q is always the Nystrom form built from the jittered factor so all
// downstream quantities are mutually consistent.
struct Workspace {
  Eigen::Index n = 0, m = 0;
  Eigen::MatrixXd K;       // N x N
  Eigen::MatrixXd K_fU;    // N x M
  Eigen::MatrixXd K_UU;    // M x M, jittered
  Eigen::MatrixXd K_UU_raw;
  Eigen::LLT<Eigen::MatrixXd> llt_uu;
  Eigen::MatrixXd G;  // K_UU^-1 K_Uf, M x N
  Eigen::VectorXd diag_Q;
  double trace_K = 0.0, trace_Q = 0.0;
  double kuu_jitter = 0.0;
  double sigma2 = 0.0;
};

Workspace build_workspace(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const Eigen::MatrixXd& Z, const KernelSpec& spec,
                          const SolverConfig& cfg) {
  spec.validate();
  cfg.validate();
  if (X.rows() < 1 || Z.rows() < 1)
    throw InputError("objective: need N >= 1 and M >= 1");
  if (y.size() != X.rows())
    throw InputError("objective: X and y row counts differ");
  if (Z.cols() != X.cols())
    throw InputError("objective: inducing dimension mismatch");
  if (!X.allFinite() || !y.allFinite() || !Z.allFinite())
    throw InputError("objective: non-finite inputs");

  Workspace ws;
  ws.n = X.rows();
  ws.m = Z.rows();
  ws.sigma2 = spec.hp.noise_variance;
  ws.K = gram(spec, X, X);
  ws.K_fU = gram(spec, X, Z);
  ws.K_UU_raw = gram(spec, Z, Z);

  double jit = cfg.effective_jitter(ws.K_UU_raw.trace(), ws.m);
  for (int attempt = 0;; ++attempt) {
    ws.K_UU = ws.K_UU_raw;
    ws.K_UU.diagonal().array() += jit;
    ws.llt_uu.compute(ws.K_UU);
    if (ws.llt_uu.info() == Eigen::Success) break;
    if (attempt >= 5)
      throw NumericalError("objective: inducing Gram not PD after jitter");
    jit = (jit == 0.0) ? 1e-12 * std::max(1.0, ws.K_UU_raw.trace() / ws.m)
                       : 10.0 * jit;
  }
  ws.kuu_jitter = jit;
  ws.G = ws.llt_uu.solve(ws.K_fU.transpose());
  ws.diag_Q = (ws.K_fU.array() * ws.G.transpose().array()).rowwise().sum();
  ws.trace_K = ws.K.trace();
  ws.trace_Q = ws.diag_Q.sum();
  return ws;
}

// Dense or factorization-free view of an SPD covariance, with one recorded
// jitter and a reusable factorization on the dense path.
class SpdContext {
 public:
  SpdContext(LinearOperator op, const SolverConfig& cfg)
      : op_(std::move(op)), cfg_(cfg) {
    const Eigen::Index n = op_.dim();
    if (op_.has_dense() && n <= cfg_.dense_threshold) {
      used_dense_ = true;
      jitter_ = cfg_.effective_jitter(op_.dense().trace(), n);
      for (int attempt = 0;; ++attempt) {
        Eigen::MatrixXd Aj = op_.dense();
        Aj.diagonal().array() += jitter_;
        llt_.compute(Aj);
        if (llt_.info() == Eigen::Success) break;
        if (attempt >= 5)
          throw NumericalError("objective: covariance not PD after jitter");
        jitter_ = (jitter_ == 0.0)
                      ? 1e-12 * std::max(1.0, op_.dense().trace() / n)
                      : 10.0 * jitter_;
      }
    } else {
      const double trace_est =
          op_.diagonal() ? op_.diagonal()->sum() : static_cast<double>(n);
      jitter_ = cfg_.effective_jitter(trace_est, n);
      shifted_ = (jitter_ > 0.0) ? op_.shifted(jitter_) : op_;
    }
  }

  Eigen::MatrixXd solve(const Eigen::MatrixXd& B) {
    if (used_dense_) return llt_.solve(B);
    MbcgResult mb = mbcg_solve(*shifted_, B, cfg_, false);
    degraded_ = degraded_ || !mb.converged;
    if (mb.relative_residuals.size())
      max_resid_ = std::max(max_resid_, mb.relative_residuals.maxCoeff());
    for (int it : mb.iterations) max_iters_ = std::max(max_iters_, it);
    return mb.solutions;
  }

  double logdet() {
    if (used_dense_)
      return 2.0 * llt_.matrixLLT().diagonal().array().log().sum();
    return logdet_lanczos(*shifted_, cfg_);
  }

  bool used_dense() const { return used_dense_; }
  double jitter() const { return jitter_; }
  bool degraded() const { return degraded_; }
  double max_resid() const { return max_resid_; }
  int max_iters() const { return max_iters_; }
  const LinearOperator& op() const { return op_; }

 private:
  LinearOperator op_;
  SolverConfig cfg_;
  std::optional<LinearOperator> shifted_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  bool used_dense_ = false;
  double jitter_ = 0.0;
  bool degraded_ = false;
  double max_resid_ = 0.0;
  int max_iters_ = 0;
};

LinearOperator make_exact_cov_operator(const Workspace& ws,
                                       const SolverConfig& cfg) {
  const Eigen::Index n = ws.n;
  const double s2 = ws.sigma2;
  if (n <= cfg.dense_threshold) {
    Eigen::MatrixXd C = ws.K;
    C.diagonal().array() += s2;
    return LinearOperator::from_dense(C);
  }
  const Eigen::MatrixXd& K = ws.K;
  Eigen::VectorXd diag = K.diagonal().array() + s2;
  return LinearOperator(
      n,
      [&K, s2](const Eigen::MatrixXd& Xb) -> Eigen::MatrixXd {
        return K.selfadjointView<Eigen::Lower>() * Xb + s2 * Xb;
      },
      diag);
}

// Xi = sigma2 I + (1-alpha) K + alpha Q; Q is never materialized above the
// dense threshold.
LinearOperator make_xi_operator(const Workspace& ws, double alpha,
                                const SolverConfig& cfg) {
  const Eigen::Index n = ws.n;
  const double s2 = ws.sigma2;
  if (n <= cfg.dense_threshold) {
    Eigen::MatrixXd Q = ws.K_fU * ws.G;
    Q = 0.5 * (Q + Q.transpose()).eval();
    Eigen::MatrixXd Xi = (1.0 - alpha) * ws.K + alpha * Q;
    Xi.diagonal().array() += s2;
    return LinearOperator::from_dense(Xi);
  }
  Eigen::VectorXd diag =
      s2 + (1.0 - alpha) * ws.K.diagonal().array() + alpha * ws.diag_Q.array();
  const Eigen::MatrixXd& K = ws.K;
  const Eigen::MatrixXd& K_fU = ws.K_fU;
  const Eigen::MatrixXd& G = ws.G;
  return LinearOperator(
      n,
      [&K, &K_fU, &G, alpha, s2](const Eigen::MatrixXd& Xb) -> Eigen::MatrixXd {
        Eigen::MatrixXd out = s2 * Xb;
        out.noalias() += (1.0 - alpha) * (K.selfadjointView<Eigen::Lower>() * Xb);
        out.noalias() += alpha * (K_fU * (G * Xb));
        return out;
      },
      diag);
}

// A = I + ((1-alpha)/sigma2) (K - Q).
LinearOperator make_A_operator(const Workspace& ws, double alpha,
                               const SolverConfig& cfg) {
  const Eigen::Index n = ws.n;
  const double scale = (1.0 - alpha) / ws.sigma2;
  if (n <= cfg.dense_threshold) {
    Eigen::MatrixXd Q = ws.K_fU * ws.G;
    Q = 0.5 * (Q + Q.transpose()).eval();
    Eigen::MatrixXd A = scale * (ws.K - Q);
    A.diagonal().array() += 1.0;
    return LinearOperator::from_dense(A);
  }
  Eigen::VectorXd diag =
      1.0 + scale * (ws.K.diagonal() - ws.diag_Q).array();
  const Eigen::MatrixXd& K = ws.K;
  const Eigen::MatrixXd& K_fU = ws.K_fU;
  const Eigen::MatrixXd& G = ws.G;
  return LinearOperator(
      n,
      [&K, &K_fU, &G, scale](const Eigen::MatrixXd& Xb) -> Eigen::MatrixXd {
        Eigen::MatrixXd out = Xb;
        out.noalias() += scale * (K.selfadjointView<Eigen::Lower>() * Xb);
        out.noalias() -= scale * (K_fU * (G * Xb));
        return out;
      },
      diag);
}

void fill_diag(ObjectiveDiagnostics& d, const SpdContext& ctx) {
  d.used_dense = ctx.used_dense();
  d.degraded = d.degraded || ctx.degraded();
  d.max_relative_residual =
      std::max(d.max_relative_residual, ctx.max_resid());
  d.max_cg_iterations = std::max(d.max_cg_iterations, ctx.max_iters());
  d.jitter_xi = ctx.jitter();
}

ObjectiveValue exact_core(const Workspace& ws, const Eigen::VectorXd& y,
                          const SolverConfig& cfg) {
  SpdContext ctx(make_exact_cov_operator(ws, cfg), cfg);
  Eigen::VectorXd w = ctx.solve(y);
  const double logdet = ctx.logdet();
  ObjectiveValue out;
  out.gaussian_term =
      -0.5 * (static_cast<double>(ws.n) * kLog2Pi + logdet + y.dot(w));
  out.regularizer = 0.0;
  out.value = out.gaussian_term;
  fill_diag(out.diag, ctx);
  out.diag.jitter_kuu = ws.kuu_jitter;
  return out;
}

// log N(y; 0, sigma2 I + Q) - Tr(K - Q)/(2 sigma2), via the M x M Woodbury
// route; exact at any N.
ObjectiveValue svgp_core(const Workspace& ws, const Eigen::VectorXd& y) {
  const double s2 = ws.sigma2;
  const double n = static_cast<double>(ws.n);
  Eigen::MatrixXd Cm = s2 * ws.K_UU + ws.K_fU.transpose() * ws.K_fU;
  Cm = 0.5 * (Cm + Cm.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt_cm(Cm);
  if (llt_cm.info() != Eigen::Success)
    throw NumericalError("svgp: M x M factorization failed");
  const double logdet_cm =
      2.0 * llt_cm.matrixLLT().diagonal().array().log().sum();
  const double logdet_uu =
      2.0 * ws.llt_uu.matrixLLT().diagonal().array().log().sum();
  const double logdet_sq =
      (n - static_cast<double>(ws.m)) * std::log(s2) + logdet_cm - logdet_uu;
  Eigen::VectorXd KUf_y = ws.K_fU.transpose() * y;
  Eigen::VectorXd u = (y - ws.K_fU * llt_cm.solve(KUf_y)) / s2;
  ObjectiveValue out;
  out.gaussian_term = -0.5 * (n * kLog2Pi + logdet_sq + y.dot(u));
  out.regularizer = -(ws.trace_K - ws.trace_Q) / (2.0 * s2);
  out.value = out.gaussian_term + out.regularizer;
  out.diag.jitter_kuu = ws.kuu_jitter;
  return out;
}

double logdet_A(const Workspace& ws, double alpha, const AlphaParam& ap,
                const SolverConfig& cfg, SpdContext& xi_ctx, double logdet_xi,
                const Eigen::MatrixXd& Xi_inv_KfU, ObjectiveDiagnostics& diag) {
  if (ap.regime() != AlphaRegime::LemmaDegenerate) {
    auto lemma = detlemma_logdet_A(ws.K_UU, ws.K_fU, Xi_inv_KfU, alpha,
                                   ws.sigma2, logdet_xi, ap.lemma_threshold);
    if (lemma) return *lemma;
  }
  // direct route on A: dense log-determinant below the threshold, stochastic
  // Lanczos above it
  diag.lemma_fallback = true;
  LinearOperator A = make_A_operator(ws, alpha, cfg);
  if (A.has_dense() && ws.n <= cfg.dense_threshold) {
    Eigen::LLT<Eigen::MatrixXd> llt(A.dense());
    if (llt.info() != Eigen::Success)
      throw NumericalError("objective: A not PD in fallback log-determinant");
    return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  }
  diag.probe_count = cfg.probe_count;
  (void)xi_ctx;
  return logdet_lanczos(A, cfg);
}

ObjectiveValue alpha_elbo_core(const Workspace& ws, const Eigen::VectorXd& y,
                               const AlphaParam& ap, const SolverConfig& cfg,
                               Eigen::VectorXd* out_w = nullptr,
                               Eigen::MatrixXd* out_W = nullptr,
                               double* out_logdet_xi = nullptr) {
  const AlphaRegime regime = ap.regime();
  if (regime == AlphaRegime::Exact) return exact_core(ws, y, cfg);
  if (regime == AlphaRegime::NearOne) return svgp_core(ws, y);

  const double a = ap.alpha;
  SpdContext xi(make_xi_operator(ws, a, cfg), cfg);
  // one batched solve: [y | K_fU]
  Eigen::MatrixXd B(ws.n, 1 + ws.m);
  B.col(0) = y;
  B.rightCols(ws.m) = ws.K_fU;
  Eigen::MatrixXd sol = xi.solve(B);
  Eigen::VectorXd w = sol.col(0);
  Eigen::MatrixXd W = sol.rightCols(ws.m);
  const double logdet_xi = xi.logdet();

  ObjectiveValue out;
  out.gaussian_term =
      -0.5 * (static_cast<double>(ws.n) * kLog2Pi + logdet_xi + y.dot(w));
  const double lda = logdet_A(ws, a, ap, cfg, xi, logdet_xi, W, out.diag);
  out.regularizer = -(a / (2.0 * (1.0 - a))) * lda;
  out.value = out.gaussian_term + out.regularizer;
  fill_diag(out.diag, xi);
  out.diag.jitter_kuu = ws.kuu_jitter;
  if (out_w) *out_w = std::move(w);
  if (out_W) *out_W = std::move(W);
  if (out_logdet_xi) *out_logdet_xi = logdet_xi;
  return out;
}

// Per-hyperparameter kernel block derivatives (log-scale).
struct KernelDerivs {
  Eigen::MatrixXd dK, dK_fU, dK_UU;  // empty when identically zero
  bool zero = false;
  bool noise_param = false;
};

KernelDerivs kernel_derivs(const Eigen::MatrixXd& X, const Eigen::MatrixXd& Z,
                           const KernelSpec& spec, const Workspace& ws,
                           int param) {
  KernelDerivs d;
  switch (param) {
    case 0:  // log lengthscale
      d.dK = gram_grad_log_lengthscale(spec, X, X);
      d.dK_fU = gram_grad_log_lengthscale(spec, X, Z);
      d.dK_UU = gram_grad_log_lengthscale(spec, Z, Z);
      return d;
    case 1:  // log signal variance: every block scales linearly
      d.dK = ws.K;
      d.dK_fU = ws.K_fU;
      d.dK_UU = ws.K_UU_raw;
      return d;
    default:  // log noise variance: kernel blocks unaffected
      d.zero = true;
      d.noise_param = true;
      return d;
  }
}

// dQ = B + B' - G' dK_UU G, B = dK_fU G. Dense; used on the exact gradient
// path and for operator-free matvecs.
Eigen::MatrixXd dQ_dense(const Workspace& ws, const KernelDerivs& d) {
  Eigen::MatrixXd B = d.dK_fU * ws.G;
  Eigen::MatrixXd out = B + B.transpose();
  out.noalias() -= ws.G.transpose() * (d.dK_UU * ws.G);
  return out;
}

Eigen::Vector3d svgp_grad(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const Eigen::MatrixXd& Z, const KernelSpec& spec,
                          const Workspace& ws) {
  const double s2 = ws.sigma2;
  const double n = static_cast<double>(ws.n);
  Eigen::MatrixXd Cm = s2 * ws.K_UU + ws.K_fU.transpose() * ws.K_fU;
  Cm = 0.5 * (Cm + Cm.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt_cm(Cm);
  if (llt_cm.info() != Eigen::Success)
    throw NumericalError("svgp gradient: M x M factorization failed");
  auto sq_solve = [&](const Eigen::MatrixXd& Bb) -> Eigen::MatrixXd {
    return (Bb - ws.K_fU * llt_cm.solve(ws.K_fU.transpose() * Bb)) / s2;
  };
  Eigen::VectorXd u = sq_solve(y);
  Eigen::MatrixXd H = sq_solve(ws.G.transpose());   // Sq^-1 G', N x M
  Eigen::MatrixXd GH = ws.G * H;                    // G Sq^-1 G', M x M
  Eigen::MatrixXd GGt = ws.G * ws.G.transpose();
  const double trace_sq_inv =
      (n - llt_cm.solve(ws.K_fU.transpose() * ws.K_fU).trace()) / s2;

  Eigen::Vector3d grad;
  for (int p = 0; p < 3; ++p) {
    KernelDerivs d = kernel_derivs(X, Z, spec, ws, p);
    if (d.noise_param) {
      // dSq = sigma2 I; penalty term depends on sigma2 directly
      const double quad = 0.5 * s2 * u.squaredNorm();
      const double tr = 0.5 * s2 * trace_sq_inv;
      grad(p) = quad - tr + (ws.trace_K - ws.trace_Q) / (2.0 * s2);
      continue;
    }
    // dSq = dQ = B + B' - G' dK_UU G with B = dK_fU G; everything below is a
    // low-rank contraction, exact at any N.
    Eigen::VectorXd Gu = ws.G * u;
    const double u_dQ_u = 2.0 * (d.dK_fU.transpose() * u).dot(Gu) -
                          Gu.dot(d.dK_UU * Gu);
    Eigen::MatrixXd P = sq_solve(d.dK_fU);  // Sq^-1 dK_fU
    const double tr1 = (ws.G * P).trace();  // Tr(Sq^-1 dK_fU G)
    const double tr2 = (d.dK_UU.array() * GH.array()).sum();
    const double tr_sq_dQ = 2.0 * tr1 - tr2;
    const double tr_dK = d.dK.diagonal().sum();
    const double tr_dQ =
        2.0 * (d.dK_fU.array() * ws.G.transpose().array()).sum() -
        (d.dK_UU.array() * GGt.array()).sum();
    grad(p) = 0.5 * u_dQ_u - 0.5 * tr_sq_dQ - (tr_dK - tr_dQ) / (2.0 * s2);
  }
  return grad;
}

}  // namespace

ObjectiveValue alpha_elbo(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                          const Eigen::MatrixXd& Z, const KernelSpec& spec,
                          const AlphaParam& alpha, const SolverConfig& cfg) {
  alpha.validate();
  Workspace ws = build_workspace(X, y, Z, spec, cfg);
  return alpha_elbo_core(ws, y, alpha, cfg);
}

ObjectiveValue exact_loglik(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                            const KernelSpec& spec, const SolverConfig& cfg) {
  // A single training row stands in for the unused inducing blocks.
  Workspace ws = build_workspace(X, y, X.topRows(1), spec, cfg);
  return exact_core(ws, y, cfg);
}

ObjectiveValue svgp_elbo(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                         const Eigen::MatrixXd& Z, const KernelSpec& spec,
                         const SolverConfig& cfg) {
  Workspace ws = build_workspace(X, y, Z, spec, cfg);
  return svgp_core(ws, y);
}

double upper_bound(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   const Eigen::MatrixXd& Z, const KernelSpec& spec,
                   const AlphaParam& alpha, const SolverConfig& cfg) {
  alpha.validate();
  Workspace ws = build_workspace(X, y, Z, spec, cfg);
  const double a = alpha.alpha;
  SpdContext xi(make_xi_operator(ws, a, cfg), cfg);
  const double logdet_xi = xi.logdet();
  const double shift = a * (ws.trace_K - ws.trace_Q);
  SpdContext shifted(xi.op().shifted(shift), cfg);
  Eigen::VectorXd u = shifted.solve(y);
  return -0.5 * (static_cast<double>(ws.n) * kLog2Pi + logdet_xi + y.dot(u));
}

double measured_divergence(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                           const Eigen::MatrixXd& Z, const KernelSpec& spec,
                           const AlphaParam& alpha, const SolverConfig& cfg) {
  if (X.rows() > cfg.dense_threshold)
    throw InputError("measured_divergence: requires the dense path");
  Workspace ws = build_workspace(X, y, Z, spec, cfg);
  const double exact = exact_core(ws, y, cfg).value;
  const double bound = alpha_elbo_core(ws, y, alpha, cfg).value;
  return exact - bound;
}

double renyi_div_gaussians(const Eigen::VectorXd& mean1,
                           const Eigen::MatrixXd& cov1,
                           const Eigen::VectorXd& mean2,
                           const Eigen::MatrixXd& cov2, double alpha) {
  const Eigen::Index d = mean1.size();
  if (mean2.size() != d || cov1.rows() != d || cov1.cols() != d ||
      cov2.rows() != d || cov2.cols() != d)
    throw InputError("renyi_div_gaussians: dimension mismatch");
  Eigen::LLT<Eigen::MatrixXd> l1(cov1), l2(cov2);
  if (l1.info() != Eigen::Success || l2.info() != Eigen::Success)
    throw InputError("renyi_div_gaussians: covariances must be PD");
  if (alpha == 1.0) {
    // KL limit
    Eigen::VectorXd diff = mean1 - mean2;
    const double logdet1 = 2.0 * l1.matrixLLT().diagonal().array().log().sum();
    const double logdet2 = 2.0 * l2.matrixLLT().diagonal().array().log().sum();
    return 0.5 * (logdet2 - logdet1 - static_cast<double>(d) +
                  l2.solve(cov1).trace() + diff.dot(l2.solve(diff)));
  }
  Eigen::MatrixXd blend = (1.0 - alpha) * cov1 + alpha * cov2;
  Eigen::LLT<Eigen::MatrixXd> lb(blend);
  if (lb.info() != Eigen::Success)
    throw InputError("renyi_div_gaussians: indefinite covariance blend");
  Eigen::VectorXd diff = mean1 - mean2;
  const double quad = 0.5 * alpha * diff.dot(lb.solve(diff));
  const double logdet_blend =
      2.0 * lb.matrixLLT().diagonal().array().log().sum();
  const double logdet1 = 2.0 * l1.matrixLLT().diagonal().array().log().sum();
  const double logdet2 = 2.0 * l2.matrixLLT().diagonal().array().log().sum();
  return quad + (logdet_blend - (1.0 - alpha) * logdet1 - alpha * logdet2) /
                    (2.0 * (1.0 - alpha));
}

ObjectiveEval alpha_elbo_value_and_grad(const Eigen::MatrixXd& X,
                                        const Eigen::VectorXd& y,
                                        const Eigen::MatrixXd& Z,
                                        const KernelSpec& spec,
                                        const AlphaParam& ap,
                                        const SolverConfig& cfg) {
  ap.validate();
  Workspace ws = build_workspace(X, y, Z, spec, cfg);
  const AlphaRegime regime = ap.regime();
  ObjectiveEval out;

  if (regime == AlphaRegime::NearOne) {
    out.value = svgp_core(ws, y);
    out.grad = svgp_grad(X, y, Z, spec, ws);
    return out;
  }

  const double a = ap.alpha;
  const double s2 = ws.sigma2;
  Eigen::VectorXd w;
  Eigen::MatrixXd W;
  double logdet_xi = 0.0;
  if (regime == AlphaRegime::Exact) {
    out.value = exact_core(ws, y, cfg);
  } else {
    out.value = alpha_elbo_core(ws, y, ap, cfg, &w, &W, &logdet_xi);
  }

  const bool dense_path = ws.n <= cfg.dense_threshold;
  LinearOperator xi_op = (regime == AlphaRegime::Exact)
                             ? make_exact_cov_operator(ws, cfg)
                             : make_xi_operator(ws, a, cfg);
  SpdContext xi(xi_op, cfg);
  if (regime == AlphaRegime::Exact) w = xi.solve(y);

  // shared solve artifacts for the trace terms
  Eigen::MatrixXd Xi_inv_dense;  // dense path only
  Eigen::MatrixXd probes, Xi_inv_probes;
  if (dense_path) {
    Xi_inv_dense = xi.solve(Eigen::MatrixXd::Identity(ws.n, ws.n));
  } else {
    probes = draw_probes(ws.n, cfg.probe_count, cfg, 0x9c0de);
    Xi_inv_probes = xi.solve(probes);
  }
  auto trace_xi_inv = [&](const Eigen::MatrixXd& D) -> double {
    if (dense_path) return (Xi_inv_dense.array() * D.array()).sum();
    std::vector<double> terms(probes.cols());
    for (int i = 0; i < probes.cols(); ++i)
      terms[i] = Xi_inv_probes.col(i).dot(D.selfadjointView<Eigen::Lower>() *
                                          probes.col(i));
    double sum = 0.0;
    for (double t : terms) sum += t;
    return sum / static_cast<double>(probes.cols());
  };

  // fallback artifacts for Tr(A^-1 dA) in the degenerate band
  Eigen::MatrixXd A_inv_dense, A_inv_probes;
  const bool need_fallback = regime == AlphaRegime::LemmaDegenerate;
  if (need_fallback) {
    LinearOperator A = make_A_operator(ws, a, cfg);
    if (dense_path) {
      Eigen::LLT<Eigen::MatrixXd> llt(A.dense());
      if (llt.info() != Eigen::Success)
        throw NumericalError("gradient: A not PD in fallback");
      A_inv_dense = llt.solve(Eigen::MatrixXd::Identity(ws.n, ws.n));
    } else {
      if (probes.size() == 0)
        probes = draw_probes(ws.n, cfg.probe_count, cfg, 0x9c0de);
      A_inv_probes = mbcg_solve(A, probes, cfg, false).solutions;
    }
  }

  for (int p = 0; p < 3; ++p) {
    KernelDerivs d = kernel_derivs(X, Z, spec, ws, p);
    double term1, term2, term3 = 0.0;

    if (regime == AlphaRegime::Exact) {
      // dXi0 = dK (+ sigma2 I for the noise parameter)
      if (d.noise_param) {
        term1 = 0.5 * s2 * w.squaredNorm();
        term2 = dense_path
                    ? -0.5 * s2 * Xi_inv_dense.trace()
                    : -0.5 * s2 *
                          trace_xi_inv(Eigen::MatrixXd::Identity(ws.n, ws.n));
      } else {
        term1 = 0.5 * w.dot(d.dK.selfadjointView<Eigen::Lower>() * w);
        term2 = -0.5 * trace_xi_inv(d.dK);
      }
      out.grad(p) = term1 + term2;
      continue;
    }

    Eigen::MatrixXd dQ;
    Eigen::MatrixXd dXi, dA;
    if (d.noise_param) {
      dXi = s2 * Eigen::MatrixXd::Identity(ws.n, ws.n);
      Eigen::MatrixXd Q = ws.K_fU * ws.G;
      Q = 0.5 * (Q + Q.transpose()).eval();
      dA = -((1.0 - a) / s2) * (ws.K - Q);
    } else {
      dQ = dQ_dense(ws, d);
      dXi = (1.0 - a) * d.dK + a * dQ;
      dA = ((1.0 - a) / s2) * (d.dK - dQ);
    }

    term1 = 0.5 * w.dot(dXi.selfadjointView<Eigen::Lower>() * w);
    term2 = -0.5 * trace_xi_inv(dXi);

    double tr_Ainv_dA;
    if (need_fallback) {
      if (dense_path) {
        tr_Ainv_dA = (A_inv_dense.array() * dA.array()).sum();
      } else {
        std::vector<double> terms(probes.cols());
        for (int i = 0; i < probes.cols(); ++i)
          terms[i] = A_inv_probes.col(i).dot(
              dA.selfadjointView<Eigen::Lower>() * probes.col(i));
        double sum = 0.0;
        for (double t : terms) sum += t;
        tr_Ainv_dA = sum / static_cast<double>(probes.cols());
      }
    } else {
      const double tr_xi_inv_dA = trace_xi_inv(dA);
      auto wb = woodbury_trace_term(
          ws.K_UU, ws.K_fU, W, a, s2,
          [&dA](const Eigen::MatrixXd& Bb) -> Eigen::MatrixXd {
            return dA.selfadjointView<Eigen::Lower>() * Bb;
          },
          tr_xi_inv_dA, ap.lemma_threshold);
      if (!wb) throw NumericalError("gradient: unexpected lemma degeneracy");
      tr_Ainv_dA = *wb;
    }
    term3 = -(a / (2.0 * (1.0 - a))) * tr_Ainv_dA;
    out.grad(p) = term1 + term2 + term3;
  }
  return out;
}

Eigen::Vector3d alpha_elbo_grad(const Eigen::MatrixXd& X,
                                const Eigen::VectorXd& y,
                                const Eigen::MatrixXd& Z,
                                const KernelSpec& spec, const AlphaParam& alpha,
                                const SolverConfig& cfg) {
  return alpha_elbo_value_and_grad(X, y, Z, spec, alpha, cfg).grad;
}

}  // namespace alphagp
