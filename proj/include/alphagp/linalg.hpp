#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <vector>

#include "alphagp/common.hpp"

namespace alphagp {

enum class Preconditioner { None, Diagonal, PivotedCholesky };
enum class ProbeDistribution { Normal, Rademacher };

struct SolverConfig {
  double cg_tolerance = 1e-6;
  int cg_max_iterations = 0;  // 0 = auto, 10 * N
  int probe_count = 16;
  Preconditioner preconditioner = Preconditioner::None;
  int preconditioner_rank = 15;
  std::optional<double> jitter;  // unset = auto, 1e-6 * trace / N
  std::uint64_t seed = 0;
  int dense_threshold = 500;
  ProbeDistribution probe_distribution = ProbeDistribution::Normal;
  int lanczos_max_steps = 100;

  void validate() const;
  double effective_jitter(double trace, Eigen::Index n) const;
  int effective_max_iterations(Eigen::Index n) const;
};

/// Symmetric positive (semi)definite operator known through its action on
/// blocks of vectors. Carries an explicit dense form and/or diagonal when the
/// builder can supply them cheaply.
class LinearOperator {
 public:
  using ApplyFn = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>;

  LinearOperator(Eigen::Index dim, ApplyFn apply,
                 std::optional<Eigen::VectorXd> diagonal = std::nullopt);
  static LinearOperator from_dense(const Eigen::MatrixXd& A);

  Eigen::Index dim() const { return dim_; }
  Eigen::MatrixXd apply(const Eigen::MatrixXd& X) const;
  bool has_dense() const { return dense_ != nullptr; }
  const Eigen::MatrixXd& dense() const;
  const std::optional<Eigen::VectorXd>& diagonal() const { return diagonal_; }

  /// op + shift * I, sharing this operator's storage.
  LinearOperator shifted(double shift) const;

 private:
  Eigen::Index dim_;
  ApplyFn apply_;
  std::optional<Eigen::VectorXd> diagonal_;
  std::shared_ptr<const Eigen::MatrixXd> dense_;
};

/// Lanczos tridiagonal coefficients recorded per right-hand-side column.
struct TridiagonalBatch {
  std::vector<Eigen::VectorXd> diagonal;
  std::vector<Eigen::VectorXd> off_diagonal;
  std::vector<int> iterations;

  Eigen::MatrixXd dense(std::size_t i) const;
};

struct MbcgResult {
  Eigen::MatrixXd solutions;
  Eigen::VectorXd relative_residuals;  // achieved, per column
  std::vector<int> iterations;
  bool converged = false;  // every column met the tolerance
  TridiagonalBatch tridiagonal;
};

/// Batched conjugate gradients: solves op X = B column by column (columns run
/// in parallel) and optionally records the CG-equivalent Lanczos tridiagonal
/// per column. Non-convergence is reported in the result, not thrown;
/// NaN/Inf or loss of positive definiteness throws NumericalError.
MbcgResult mbcg_solve(const LinearOperator& op, const Eigen::MatrixXd& B,
                      const SolverConfig& config,
                      bool record_tridiagonal = false);
MbcgResult mbcg_solve_serial(const LinearOperator& op, const Eigen::MatrixXd& B,
                             const SolverConfig& config,
                             bool record_tridiagonal = false);

/// Stochastic Lanczos quadrature estimate of log|op|: probe-averaged
/// e1' log(T) e1, scaled by N. Probes are unit-normalized, so the estimator
/// is unbiased over the probe distribution and its variance scales with the
/// spread of the spectrum rather than its magnitude.
double logdet_lanczos(const LinearOperator& op, const SolverConfig& config);

/// Greedy max-diagonal pivoted partial Cholesky. Returns L (n x r, r <= rank)
/// with L L' ~= K; the trace error equals the sum of the skipped pivots.
Eigen::MatrixXd pivoted_cholesky(const Eigen::MatrixXd& K, int rank,
                                 double jitter = 0.0);

/// Operands for trace estimation of Tr(solve(.) * d(.)).
struct TraceOperands {
  Eigen::Index dim = 0;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> solve;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> apply_d;
  // When both dense forms are supplied and dim <= dense_threshold the trace
  // is evaluated exactly instead of stochastically.
  const Eigen::MatrixXd* dense_op = nullptr;
  const Eigen::MatrixXd* dense_d = nullptr;
};

/// Hutchinson estimate (1/t) sum_i (solve(z_i))' (d z_i) of Tr(op^-1 d).
/// Probes are accumulated in a fixed order so results are reproducible for a
/// given (seed, probe_count) regardless of thread count.
double stochastic_trace(const TraceOperands& ops, const Eigen::MatrixXd& probes,
                        const SolverConfig& config);

/// Seeded probe block (n x count) for the configured probe distribution.
Eigen::MatrixXd draw_probes(Eigen::Index n, int count,
                            const SolverConfig& config, std::uint64_t stream);

/// log|A| with A = I + ((1-alpha)/sigma2) (K_ff - Q), reduced to M x M
/// factorizations plus the already-computed Xi-solves of K_fU:
///   log|A| = log|Xi| + log|K_UU - K_Uf Xi^-1 K_fU| - log|K_UU| - N log sigma2.
/// Returns nullopt inside the degenerate alpha band (|1 - 2 alpha| below
/// tolerance); the caller falls back to estimating log|A| on A directly.
std::optional<double> detlemma_logdet_A(const Eigen::MatrixXd& K_UU,
                                        const Eigen::MatrixXd& K_fU,
                                        const Eigen::MatrixXd& Xi_inv_KfU,
                                        double alpha, double sigma2,
                                        double logdet_Xi,
                                        double lemma_tolerance = 1e-3);

/// Tr(A^-1 dA) through the Woodbury identity on A = (Xi - Q)/sigma2:
///   Tr(A^-1 dA) = sigma2 * [ Tr(Xi^-1 dA) + Tr(S^-1 W' dA W) ],
/// with W = Xi^-1 K_fU and S = K_UU - K_Uf W. The caller supplies
/// Tr(Xi^-1 dA) (exact on the dense path, probe-estimated otherwise).
/// Returns nullopt inside the degenerate alpha band.
std::optional<double> woodbury_trace_term(
    const Eigen::MatrixXd& K_UU, const Eigen::MatrixXd& K_fU,
    const Eigen::MatrixXd& Xi_inv_KfU, double alpha, double sigma2,
    const std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)>& apply_dA,
    double trace_Xi_inv_dA, double lemma_tolerance = 1e-3);

enum class KdppMode { Exact, EpsApprox };

/// Samples an index set S of size M with P(S) proportional to det(K_S).
/// Exact mode enumerates all subsets (requires N <= exhaustive_threshold);
/// EpsApprox runs a Metropolis swap chain of ceil(N * M * max(1, ln(1/eps)))
/// steps, a mixing heuristic rather than a guarantee.
std::vector<int> kdpp_sample(const Eigen::MatrixXd& K, int M, KdppMode mode,
                             double eps, std::uint64_t seed,
                             int exhaustive_threshold = 20);

/// Dense or iterative SPD solve behind one interface: Cholesky with recorded
/// jitter below the dense threshold, mBCG + Lanczos above it.
struct SpdSolveResult {
  Eigen::MatrixXd solutions;
  double logdet = std::numeric_limits<double>::quiet_NaN();
  bool used_dense = false;
  double jitter_used = 0.0;
  int max_iterations = 0;
  double max_relative_residual = 0.0;
  bool converged = true;
};

SpdSolveResult solve_spd(const LinearOperator& op, const Eigen::MatrixXd& B,
                         const SolverConfig& config, bool want_logdet);

}  // namespace alphagp
