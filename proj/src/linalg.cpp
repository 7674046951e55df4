#include "alphagp/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace alphagp {

void SolverConfig::validate() const {
  if (!(cg_tolerance > 0.0)) throw InputError("cg_tolerance must be positive");
  if (cg_max_iterations < 0)
    throw InputError("cg_max_iterations must be >= 0 (0 = auto)");
  if (probe_count < 1) throw InputError("probe_count must be >= 1");
  if (jitter && *jitter < 0.0) throw InputError("jitter must be >= 0");
  if (dense_threshold < 1) throw InputError("dense_threshold must be >= 1");
  if (lanczos_max_steps < 1) throw InputError("lanczos_max_steps must be >= 1");
  if (preconditioner_rank < 1)
    throw InputError("preconditioner_rank must be >= 1");
}

double SolverConfig::effective_jitter(double trace, Eigen::Index n) const {
  if (jitter) return *jitter;
  return 1e-6 * trace / static_cast<double>(n);
}

int SolverConfig::effective_max_iterations(Eigen::Index n) const {
  if (cg_max_iterations > 0) return cg_max_iterations;
  return static_cast<int>(10 * n);
}

LinearOperator::LinearOperator(Eigen::Index dim, ApplyFn apply,
                               std::optional<Eigen::VectorXd> diagonal)
    : dim_(dim), apply_(std::move(apply)), diagonal_(std::move(diagonal)) {
  if (dim_ < 1) throw InputError("LinearOperator: dimension must be >= 1");
}

LinearOperator LinearOperator::from_dense(const Eigen::MatrixXd& A) {
  if (A.rows() != A.cols())
    throw InputError("LinearOperator::from_dense: matrix must be square");
  auto shared = std::make_shared<const Eigen::MatrixXd>(A);
  LinearOperator op(
      A.rows(),
      [shared](const Eigen::MatrixXd& X) -> Eigen::MatrixXd {
        return (*shared).selfadjointView<Eigen::Lower>() * X;
      },
      A.diagonal());
  op.dense_ = shared;
  return op;
}

Eigen::MatrixXd LinearOperator::apply(const Eigen::MatrixXd& X) const {
  if (X.rows() != dim_)
    throw InputError("LinearOperator::apply: dimension mismatch");
  return apply_(X);
}

const Eigen::MatrixXd& LinearOperator::dense() const {
  if (!dense_) throw InputError("LinearOperator: no dense form available");
  return *dense_;
}

LinearOperator LinearOperator::shifted(double shift) const {
  LinearOperator base = *this;
  std::optional<Eigen::VectorXd> diag;
  if (diagonal_)
    diag = (diagonal_->array() + shift).matrix();
  LinearOperator op(
      dim_,
      [base, shift](const Eigen::MatrixXd& X) -> Eigen::MatrixXd {
        return base.apply(X) + shift * X;
      },
      std::move(diag));
  return op;
}

Eigen::MatrixXd TridiagonalBatch::dense(std::size_t i) const {
  const Eigen::VectorXd& d = diagonal.at(i);
  const Eigen::VectorXd& e = off_diagonal.at(i);
  const Eigen::Index k = d.size();
  Eigen::MatrixXd T = Eigen::MatrixXd::Zero(k, k);
  T.diagonal() = d;
  for (Eigen::Index j = 0; j + 1 < k; ++j) T(j, j + 1) = T(j + 1, j) = e(j);
  return T;
}

namespace {

// Solve-with-preconditioner callback; identity when no preconditioning.
using PrecondFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

PrecondFn build_preconditioner(const LinearOperator& op,
                               const SolverConfig& cfg) {
  switch (cfg.preconditioner) {
    case Preconditioner::None:
      return [](const Eigen::VectorXd& r) { return r; };
    case Preconditioner::Diagonal: {
      if (!op.diagonal())
        throw InputError(
            "diagonal preconditioner requires the operator diagonal");
      Eigen::VectorXd d = *op.diagonal();
      if ((d.array() <= 0.0).any())
        throw NumericalError("diagonal preconditioner: non-positive diagonal");
      Eigen::VectorXd inv = d.cwiseInverse();
      return [inv](const Eigen::VectorXd& r) -> Eigen::VectorXd {
        return inv.cwiseProduct(r);
      };
    }
    case Preconditioner::PivotedCholesky: {
      if (!op.has_dense())
        throw InputError(
            "pivoted-Cholesky preconditioner requires a dense operator");
      const Eigen::MatrixXd& A = op.dense();
      const int rank =
          std::min<int>(cfg.preconditioner_rank, static_cast<int>(A.rows()));
      Eigen::MatrixXd L = pivoted_cholesky(A, rank);
      double resid = (A.diagonal().sum() - L.squaredNorm());
      double shift =
          std::max(resid / static_cast<double>(A.rows()), 1e-12 * A.trace());
      // (shift I + L L')^-1 = (1/shift) [I - L (shift I + L'L)^-1 L']
      Eigen::MatrixXd inner =
          shift * Eigen::MatrixXd::Identity(L.cols(), L.cols()) +
          L.transpose() * L;
      Eigen::LLT<Eigen::MatrixXd> llt(inner);
      if (llt.info() != Eigen::Success)
        throw NumericalError("pivoted-Cholesky preconditioner factorization");
      return [L, llt, shift](const Eigen::VectorXd& r) -> Eigen::VectorXd {
        Eigen::VectorXd t = llt.solve(L.transpose() * r);
        return (r - L * t) / shift;
      };
    }
  }
  throw InputError("unknown preconditioner");
}

struct ColumnResult {
  Eigen::VectorXd x;
  double rel_residual = 0.0;
  int iterations = 0;
  bool converged = false;
  Eigen::VectorXd tridiag_d, tridiag_e;
  bool failed = false;
  std::string failure;
};

ColumnResult cg_column(const LinearOperator& op, const Eigen::VectorXd& b,
                       const PrecondFn& precond, double tol, int max_iter,
                       bool record) {
  ColumnResult out;
  const Eigen::Index n = b.size();
  const double bnorm = b.norm();
  out.x = Eigen::VectorXd::Zero(n);
  if (bnorm == 0.0) {
    out.converged = true;
    if (record) {
      out.tridiag_d = Eigen::VectorXd();
      out.tridiag_e = Eigen::VectorXd();
    }
    return out;
  }
  Eigen::VectorXd r = b;
  Eigen::VectorXd z = precond(r);
  Eigen::VectorXd p = z;
  double rz = r.dot(z);
  std::vector<double> alphas, betas;

  for (int k = 0; k < max_iter; ++k) {
    Eigen::VectorXd v = op.apply(p);
    const double pv = p.dot(v);
    if (!std::isfinite(pv)) {
      out.failed = true;
      out.failure = "mbcg: NaN/Inf encountered";
      return out;
    }
    if (pv <= 0.0) {
      out.failed = true;
      out.failure = "mbcg: operator is not positive definite";
      return out;
    }
    const double alpha = rz / pv;
    out.x += alpha * p;
    r -= alpha * v;
    alphas.push_back(alpha);
    out.iterations = k + 1;
    const double res = r.norm() / bnorm;
    out.rel_residual = res;
    if (!std::isfinite(res)) {
      out.failed = true;
      out.failure = "mbcg: NaN/Inf encountered";
      return out;
    }
    if (res <= tol) {
      out.converged = true;
      break;
    }
    z = precond(r);
    const double rz_new = r.dot(z);
    if (rz_new == 0.0) {
      out.converged = true;
      break;
    }
    const double beta = rz_new / rz;
    betas.push_back(beta);
    rz = rz_new;
    p = z + beta * p;
  }

  if (record) {
    // CG coefficients map to the Lanczos tridiagonal of (op, b):
    //   T(1,1) = 1/a_1,  T(k,k) = 1/a_k + b_{k-1}/a_{k-1},
    //   T(k,k+1) = sqrt(b_k)/a_k.
    const int k = out.iterations;
    out.tridiag_d.resize(k);
    out.tridiag_e.resize(std::max(0, k - 1));
    for (int i = 0; i < k; ++i) {
      out.tridiag_d(i) = 1.0 / alphas[i];
      if (i > 0) out.tridiag_d(i) += betas[i - 1] / alphas[i - 1];
      if (i + 1 < k) out.tridiag_e(i) = std::sqrt(betas[i]) / alphas[i];
    }
  }
  return out;
}

MbcgResult mbcg_impl(const LinearOperator& op, const Eigen::MatrixXd& B,
                     const SolverConfig& cfg, bool record, bool parallel) {
  cfg.validate();
  if (B.rows() != op.dim()) throw InputError("mbcg_solve: dimension mismatch");
  if (!B.allFinite()) throw InputError("mbcg_solve: right-hand sides not finite");
  const int s = static_cast<int>(B.cols());
  const int max_iter = cfg.effective_max_iterations(op.dim());
  PrecondFn precond = build_preconditioner(op, cfg);

  std::vector<ColumnResult> cols(s);
  if (parallel) {
#pragma omp parallel for schedule(dynamic)
    for (int j = 0; j < s; ++j)
      cols[j] = cg_column(op, B.col(j), precond, cfg.cg_tolerance, max_iter,
                          record);
  } else {
    for (int j = 0; j < s; ++j)
      cols[j] = cg_column(op, B.col(j), precond, cfg.cg_tolerance, max_iter,
                          record);
  }

  MbcgResult out;
  out.solutions.resize(B.rows(), s);
  out.relative_residuals.resize(s);
  out.iterations.resize(s);
  out.converged = true;
  for (int j = 0; j < s; ++j) {
    if (cols[j].failed) throw NumericalError(cols[j].failure);
    out.solutions.col(j) = cols[j].x;
    out.relative_residuals(j) = cols[j].rel_residual;
    out.iterations[j] = cols[j].iterations;
    out.converged = out.converged && cols[j].converged;
    if (record) {
      out.tridiagonal.diagonal.push_back(cols[j].tridiag_d);
      out.tridiagonal.off_diagonal.push_back(cols[j].tridiag_e);
      out.tridiagonal.iterations.push_back(cols[j].iterations);
    }
  }
  return out;
}

// Lanczos with full reorthogonalization, from a unit start vector.
void lanczos_tridiagonal(const LinearOperator& op, const Eigen::VectorXd& q1,
                         int max_steps, Eigen::VectorXd& diag,
                         Eigen::VectorXd& off) {
  const Eigen::Index n = op.dim();
  const int k_max = std::min<int>(max_steps, static_cast<int>(n));
  Eigen::MatrixXd Q(n, k_max);
  std::vector<double> a, b;
  Q.col(0) = q1;
  Eigen::VectorXd w;
  for (int j = 0; j < k_max; ++j) {
    w = op.apply(Q.col(j));
    if (j > 0) w -= b[j - 1] * Q.col(j - 1);
    const double alpha = Q.col(j).dot(w);
    if (!std::isfinite(alpha))
      throw NumericalError("lanczos: NaN/Inf encountered");
    a.push_back(alpha);
    w -= alpha * Q.col(j);
    // full reorthogonalization, applied twice
    for (int pass = 0; pass < 2; ++pass)
      w -= Q.leftCols(j + 1) * (Q.leftCols(j + 1).transpose() * w);
    const double beta = w.norm();
    if (j + 1 == k_max || beta < 1e-12) break;
    b.push_back(beta);
    Q.col(j + 1) = w / beta;
  }
  diag = Eigen::Map<Eigen::VectorXd>(a.data(), a.size());
  off = Eigen::Map<Eigen::VectorXd>(b.data(), std::min(b.size(), a.size() - 1));
}

// Gauss quadrature e1' f(T) e1 for f = log, from tridiagonal coefficients.
double log_quadrature(const Eigen::VectorXd& diag, const Eigen::VectorXd& off) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, off);
  if (es.info() != Eigen::Success)
    throw NumericalError("lanczos: tridiagonal eigensolve failed");
  double sum = 0.0;
  for (Eigen::Index i = 0; i < diag.size(); ++i) {
    const double node = es.eigenvalues()(i);
    if (node <= 0.0)
      throw NumericalError("lanczos: non-positive Ritz value, log undefined");
    const double weight = es.eigenvectors()(0, i) * es.eigenvectors()(0, i);
    sum += weight * std::log(node);
  }
  return sum;
}

}  // namespace

MbcgResult mbcg_solve(const LinearOperator& op, const Eigen::MatrixXd& B,
                      const SolverConfig& cfg, bool record) {
  return mbcg_impl(op, B, cfg, record, true);
}

MbcgResult mbcg_solve_serial(const LinearOperator& op, const Eigen::MatrixXd& B,
                             const SolverConfig& cfg, bool record) {
  return mbcg_impl(op, B, cfg, record, false);
}

double logdet_lanczos(const LinearOperator& op, const SolverConfig& cfg) {
  cfg.validate();
  const Eigen::Index n = op.dim();
  const int t = cfg.probe_count;
  Eigen::MatrixXd Z = draw_probes(n, t, cfg, /*stream=*/0x51d);
  std::vector<double> estimates(t, 0.0);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < t; ++i) {
    Eigen::VectorXd q = Z.col(i).normalized();
    Eigen::VectorXd diag, off;
    lanczos_tridiagonal(op, q, cfg.lanczos_max_steps, diag, off);
    estimates[i] = log_quadrature(diag, off);
  }
  // fixed summation order for reproducibility
  double sum = 0.0;
  for (int i = 0; i < t; ++i) sum += estimates[i];
  return static_cast<double>(n) * sum / static_cast<double>(t);
}

Eigen::MatrixXd pivoted_cholesky(const Eigen::MatrixXd& K, int rank,
                                 double jitter) {
  const Eigen::Index n = K.rows();
  if (K.cols() != n) throw InputError("pivoted_cholesky: matrix must be square");
  if (rank < 1 || rank > n)
    throw InputError("pivoted_cholesky: rank must be in [1, N]");
  Eigen::VectorXd d = K.diagonal().array() + jitter;
  const double neg_tol =
      std::max(jitter, 1e-12 * std::max(1.0, d.cwiseAbs().maxCoeff()));
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, rank);
  std::vector<bool> used(n, false);
  int k = 0;
  for (; k < rank; ++k) {
    int pivot = -1;
    double best = -std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < n; ++j)
      if (!used[j] && d(j) > best) {
        best = d(j);
        pivot = static_cast<int>(j);
      }
    if (best < -neg_tol)
      throw InputError("pivoted_cholesky: negative diagonal, input not PSD");
    if (best <= 0.0) break;  // PSD mass exhausted
    used[pivot] = true;
    const double root = std::sqrt(best);
    Eigen::VectorXd col = K.col(pivot);
    if (jitter > 0.0) col(pivot) += jitter;
    if (k > 0) col -= L.leftCols(k) * L.row(pivot).head(k).transpose();
    L.col(k) = col / root;
    L(pivot, k) = root;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (used[j]) {
        L(j, k) = (j == static_cast<Eigen::Index>(pivot)) ? root : 0.0;
      } else {
        d(j) -= L(j, k) * L(j, k);
      }
    }
    d(pivot) = 0.0;
  }
  return (k == rank) ? L : Eigen::MatrixXd(L.leftCols(k));
}

Eigen::MatrixXd draw_probes(Eigen::Index n, int count, const SolverConfig& cfg,
                            std::uint64_t stream) {
  Eigen::MatrixXd Z(n, count);
  auto rng = make_rng(cfg.seed, stream);
  if (cfg.probe_distribution == ProbeDistribution::Normal) {
    std::normal_distribution<double> dist(0.0, 1.0);
    for (int j = 0; j < count; ++j)
      for (Eigen::Index i = 0; i < n; ++i) Z(i, j) = dist(rng);
  } else {
    std::bernoulli_distribution dist(0.5);
    for (int j = 0; j < count; ++j)
      for (Eigen::Index i = 0; i < n; ++i) Z(i, j) = dist(rng) ? 1.0 : -1.0;
  }
  return Z;
}

double stochastic_trace(const TraceOperands& ops, const Eigen::MatrixXd& probes,
                        const SolverConfig& cfg) {
  cfg.validate();
  if (ops.dim < 1) throw InputError("stochastic_trace: bad dimension");
  if (ops.dense_op && ops.dense_d && ops.dim <= cfg.dense_threshold) {
    // exact: Tr(op^-1 D) = <op^-1, D> elementwise for symmetric D
    Eigen::LLT<Eigen::MatrixXd> llt(*ops.dense_op);
    if (llt.info() != Eigen::Success)
      throw NumericalError("stochastic_trace: dense factorization failed");
    return llt.solve(*ops.dense_d).trace();
  }
  if (probes.rows() != ops.dim)
    throw InputError("stochastic_trace: probe dimension mismatch");
  const int t = static_cast<int>(probes.cols());
  std::vector<double> terms(t, 0.0);
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < t; ++i) {
    Eigen::VectorXd z = probes.col(i);
    Eigen::VectorXd a = ops.solve(z);
    Eigen::VectorXd b = ops.apply_d(z);
    terms[i] = a.dot(b);
  }
  double sum = 0.0;
  for (int i = 0; i < t; ++i) sum += terms[i];
  return sum / static_cast<double>(t);
}

namespace {

double logdet_llt(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

std::optional<double> detlemma_logdet_A(const Eigen::MatrixXd& K_UU,
                                        const Eigen::MatrixXd& K_fU,
                                        const Eigen::MatrixXd& Xi_inv_KfU,
                                        double alpha, double sigma2,
                                        double logdet_Xi,
                                        double lemma_tolerance) {
  if (std::abs(1.0 - 2.0 * alpha) < lemma_tolerance) return std::nullopt;
  const Eigen::Index n = K_fU.rows();
  Eigen::MatrixXd S = K_UU - K_fU.transpose() * Xi_inv_KfU;
  S = 0.5 * (S + S.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt_S(S);
  Eigen::LLT<Eigen::MatrixXd> llt_uu(K_UU);
  if (llt_S.info() != Eigen::Success || llt_uu.info() != Eigen::Success)
    throw NumericalError("detlemma_logdet_A: M x M factorization failed");
  return logdet_Xi + logdet_llt(llt_S) - logdet_llt(llt_uu) -
         static_cast<double>(n) * std::log(sigma2);
}

std::optional<double> woodbury_trace_term(
    const Eigen::MatrixXd& K_UU, const Eigen::MatrixXd& K_fU,
    const Eigen::MatrixXd& Xi_inv_KfU, double alpha, double sigma2,
    const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& apply_dA,
    double trace_Xi_inv_dA, double lemma_tolerance) {
  if (std::abs(1.0 - 2.0 * alpha) < lemma_tolerance) return std::nullopt;
  Eigen::MatrixXd S = K_UU - K_fU.transpose() * Xi_inv_KfU;
  S = 0.5 * (S + S.transpose()).eval();
  Eigen::LLT<Eigen::MatrixXd> llt_S(S);
  if (llt_S.info() != Eigen::Success)
    throw NumericalError("woodbury_trace_term: M x M factorization failed");
  Eigen::MatrixXd dA_W = apply_dA(Xi_inv_KfU);           // N x M
  Eigen::MatrixXd inner = Xi_inv_KfU.transpose() * dA_W;  // W' dA W
  const double correction = llt_S.solve(inner).trace();
  return sigma2 * (trace_Xi_inv_dA + correction);
}

namespace {

double logdet_psd_submatrix(const Eigen::MatrixXd& K,
                            const std::vector<int>& idx, bool& singular) {
  const int m = static_cast<int>(idx.size());
  Eigen::MatrixXd S(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) S(i, j) = K(idx[i], idx[j]);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(S);
  singular = false;
  double logdet = 0.0;
  for (int i = 0; i < m; ++i) {
    const double d = ldlt.vectorD()(i);
    if (d <= 0.0) {
      singular = true;
      return -std::numeric_limits<double>::infinity();
    }
    logdet += std::log(d);
  }
  return logdet;
}

std::vector<int> kdpp_exact(const Eigen::MatrixXd& K, int M,
                            std::uint64_t seed) {
  const int n = static_cast<int>(K.rows());
  // enumerate all size-M subsets in lexicographic order
  std::vector<std::vector<int>> subsets;
  std::vector<int> comb(M);
  std::iota(comb.begin(), comb.end(), 0);
  while (true) {
    subsets.push_back(comb);
    int i = M - 1;
    while (i >= 0 && comb[i] == n - M + i) --i;
    if (i < 0) break;
    ++comb[i];
    for (int j = i + 1; j < M; ++j) comb[j] = comb[j - 1] + 1;
  }
  std::vector<double> dets(subsets.size());
  double total = 0.0;
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    bool singular;
    const double ld = logdet_psd_submatrix(K, subsets[s], singular);
    dets[s] = singular ? 0.0 : std::exp(ld);
    total += dets[s];
  }
  if (total <= 0.0)
    throw InputError("kdpp_sample: all principal minors are zero");
  auto rng = make_rng(seed, 0xd99);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double u = unif(rng) * total;
  double acc = 0.0;
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    acc += dets[s];
    if (u <= acc) return subsets[s];
  }
  return subsets.back();
}

std::vector<int> kdpp_mcmc(const Eigen::MatrixXd& K, int M, double eps,
                           std::uint64_t seed) {
  const int n = static_cast<int>(K.rows());
  // start from the greedy max-diagonal pivots, a positive-determinant subset
  Eigen::MatrixXd L = pivoted_cholesky(K, M);
  if (L.cols() < M)
    throw InputError("kdpp_sample: kernel rank below M, all minors singular");
  std::vector<int> current;
  {
    // recover the pivot order from the factor: pivot rows are the ones whose
    // entry appears first in each column
    Eigen::VectorXd d = K.diagonal();
    std::vector<bool> used(n, false);
    for (int k = 0; k < M; ++k) {
      int pivot = -1;
      double best = -std::numeric_limits<double>::infinity();
      for (int j = 0; j < n; ++j)
        if (!used[j] && d(j) > best) {
          best = d(j);
          pivot = j;
        }
      used[pivot] = true;
      current.push_back(pivot);
      for (int j = 0; j < n; ++j)
        if (!used[j]) d(j) -= L(j, k) * L(j, k);
    }
  }

  const long steps = static_cast<long>(
      std::ceil(n * static_cast<double>(M) *
                std::max(1.0, std::log(1.0 / std::max(eps, 1e-300)))));
  auto rng = make_rng(seed, 0xd77);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> pick_in(0, M - 1);

  std::vector<char> in_set(n, 0);
  for (int i : current) in_set[i] = 1;
  std::vector<int> complement;
  complement.reserve(n - M);
  for (int i = 0; i < n; ++i)
    if (!in_set[i]) complement.push_back(i);
  if (complement.empty()) {  // M == N
    std::sort(current.begin(), current.end());
    return current;
  }
  std::uniform_int_distribution<int> pick_out(0,
                                              static_cast<int>(complement.size()) - 1);

  std::vector<int> rest(M - 1);
  for (long step = 0; step < steps; ++step) {
    const int si = pick_in(rng);
    const int oi = pick_out(rng);
    const int s = current[si];
    const int t = complement[oi];
    int r = 0;
    for (int j = 0; j < M; ++j)
      if (j != si) rest[r++] = current[j];
    // Metropolis ratio det(K_{rest+t}) / det(K_{rest+s}) via Schur
    // complements against the shared block K_rest.
    double schur_s, schur_t;
    if (M == 1) {
      schur_s = K(s, s);
      schur_t = K(t, t);
    } else {
      Eigen::MatrixXd Kr(M - 1, M - 1);
      Eigen::VectorXd ks(M - 1), kt(M - 1);
      for (int i = 0; i < M - 1; ++i) {
        for (int j = 0; j < M - 1; ++j) Kr(i, j) = K(rest[i], rest[j]);
        ks(i) = K(rest[i], s);
        kt(i) = K(rest[i], t);
      }
      Eigen::LDLT<Eigen::MatrixXd> ldlt(Kr);
      if ((ldlt.vectorD().array() <= 0.0).any()) continue;  // degenerate block
      schur_s = K(s, s) - ks.dot(ldlt.solve(ks));
      schur_t = K(t, t) - kt.dot(ldlt.solve(kt));
    }
    if (schur_t <= 0.0) continue;  // proposal has zero determinant
    const double ratio = schur_t / std::max(schur_s, 1e-300);
    if (ratio >= 1.0 || unif(rng) < ratio) {
      current[si] = t;
      complement[oi] = s;
      in_set[s] = 0;
      in_set[t] = 1;
    }
  }
  std::sort(current.begin(), current.end());
  return current;
}

}  // namespace

std::vector<int> kdpp_sample(const Eigen::MatrixXd& K, int M, KdppMode mode,
                             double eps, std::uint64_t seed,
                             int exhaustive_threshold) {
  const int n = static_cast<int>(K.rows());
  if (K.cols() != n) throw InputError("kdpp_sample: matrix must be square");
  if (M < 1 || M > n) throw InputError("kdpp_sample: M must be in [1, N]");
  if (M == n) {
    std::vector<int> all(n);
    std::iota(all.begin(), all.end(), 0);
    return all;
  }
  if (mode == KdppMode::Exact) {
    if (n > exhaustive_threshold)
      throw InputError("kdpp_sample: exact mode is capped at N = " +
                       std::to_string(exhaustive_threshold));
    return kdpp_exact(K, M, seed);
  }
  return kdpp_mcmc(K, M, eps, seed);
}

SpdSolveResult solve_spd(const LinearOperator& op, const Eigen::MatrixXd& B,
                         const SolverConfig& cfg, bool want_logdet) {
  cfg.validate();
  const Eigen::Index n = op.dim();
  SpdSolveResult out;
  if (op.has_dense() && n <= cfg.dense_threshold) {
    out.used_dense = true;
    double jit = cfg.effective_jitter(op.dense().trace(), n);
    Eigen::MatrixXd A = op.dense();
    Eigen::LLT<Eigen::MatrixXd> llt;
    for (int attempt = 0;; ++attempt) {
      Eigen::MatrixXd Aj = A;
      Aj.diagonal().array() += jit;
      llt.compute(Aj);
      if (llt.info() == Eigen::Success) break;
      if (attempt >= 5)
        throw NumericalError("solve_spd: matrix not PD after jitter escalation");
      jit = (jit == 0.0) ? 1e-12 * std::max(1.0, A.trace() / n) : 10.0 * jit;
    }
    out.jitter_used = jit;
    out.solutions = llt.solve(B);
    if (want_logdet)
      out.logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
    return out;
  }
  const double trace_est =
      op.diagonal() ? op.diagonal()->sum() : static_cast<double>(n);
  const double jit = cfg.effective_jitter(trace_est, n);
  LinearOperator shifted = (jit > 0.0) ? op.shifted(jit) : op;
  out.jitter_used = jit;
  MbcgResult mb = mbcg_solve(shifted, B, cfg, false);
  out.solutions = mb.solutions;
  out.converged = mb.converged;
  out.max_relative_residual =
      mb.relative_residuals.size() ? mb.relative_residuals.maxCoeff() : 0.0;
  out.max_iterations =
      mb.iterations.empty()
          ? 0
          : *std::max_element(mb.iterations.begin(), mb.iterations.end());
  if (want_logdet) out.logdet = logdet_lanczos(shifted, cfg);
  return out;
}

}  // namespace alphagp
