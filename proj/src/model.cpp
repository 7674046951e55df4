#include "alphagp/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace alphagp {

void FitConfig::validate() const {
  if (max_iterations < 0) throw InputError("max_iterations must be >= 0");
  if (!(objective_tolerance > 0.0) || !(gradient_tolerance > 0.0))
    throw InputError("fit tolerances must be positive");
  if (restarts < 1) throw InputError("restarts must be >= 1");
  if (max_line_search_steps < 1)
    throw InputError("max_line_search_steps must be >= 1");
  solver.validate();
}

AlphaChoice AlphaChoice::fixed(double alpha) {
  AlphaChoice c;
  c.value.alpha = alpha;
  c.value.validate();
  return c;
}

AlphaChoice AlphaChoice::cv(std::vector<double> grid) {
  AlphaChoice c;
  c.cross_validate = true;
  c.grid = std::move(grid);
  if (c.grid.empty()) throw InputError("alpha grid must be nonempty");
  for (double a : c.grid) AlphaParam{a}.validate();
  return c;
}

InducingSet select_inducing(const Dataset& data, int M,
                            InducingStrategy strategy, const KernelSpec& kernel,
                            std::uint64_t seed, double eps) {
  data.validate();
  const int n = static_cast<int>(data.n());
  if (M < 1 || M > n) throw InputError("select_inducing: M must be in [1, N]");
  InducingSet out;
  out.provenance = strategy;
  out.seed = seed;
  out.eps = eps;
  switch (strategy) {
    case InducingStrategy::RandomSubset: {
      std::vector<int> perm(n);
      std::iota(perm.begin(), perm.end(), 0);
      auto rng = make_rng(seed, 0x1dc);
      std::shuffle(perm.begin(), perm.end(), rng);
      out.indices.assign(perm.begin(), perm.begin() + M);
      std::sort(out.indices.begin(), out.indices.end());
      break;
    }
    case InducingStrategy::KDppExact:
    case InducingStrategy::KDppApprox: {
      Eigen::MatrixXd K = gram(kernel, data.X, data.X);
      const KdppMode mode = strategy == InducingStrategy::KDppExact
                                ? KdppMode::Exact
                                : KdppMode::EpsApprox;
      out.indices = kdpp_sample(K, M, mode, eps, seed);
      break;
    }
    case InducingStrategy::UserProvided:
      throw InputError("select_inducing: pass user rows through InducingSet");
  }
  out.Z.resize(M, data.d());
  for (int i = 0; i < M; ++i) out.Z.row(i) = data.X.row(out.indices[i]);
  return out;
}

double rmse(const Eigen::VectorXd& predictions, const Eigen::VectorXd& truth) {
  if (predictions.size() != truth.size())
    throw InputError("rmse: length mismatch");
  if (predictions.size() < 1) throw InputError("rmse: empty inputs");
  return std::sqrt((predictions - truth).squaredNorm() /
                   static_cast<double>(truth.size()));
}

namespace {

Eigen::Vector3d to_log(const Hyperparams& hp) {
  return {std::log(hp.lengthscale), std::log(hp.signal_variance),
          std::log(hp.noise_variance)};
}

Hyperparams from_log(const Eigen::Vector3d& t) {
  Hyperparams hp;
  hp.lengthscale = std::exp(t(0));
  hp.signal_variance = std::exp(t(1));
  hp.noise_variance = std::exp(t(2));
  return hp;
}

double median_pairwise_distance(const Eigen::MatrixXd& X) {
  const Eigen::Index n = X.rows();
  if (n < 2) return 1.0;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      d.push_back((X.row(i) - X.row(j)).norm());
  auto mid = d.begin() + d.size() / 2;
  std::nth_element(d.begin(), mid, d.end());
  return std::max(*mid, 1e-8);
}

struct AscentResult {
  Eigen::Vector3d theta = Eigen::Vector3d::Zero();
  double objective = -std::numeric_limits<double>::infinity();
  double grad_norm = std::numeric_limits<double>::quiet_NaN();
  FitDiagnostics diag;
};

AscentResult ascend(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                    const Eigen::MatrixXd& Z, KernelSpec spec,
                    const AlphaParam& alpha, const FitConfig& cfg,
                    Eigen::Vector3d theta0) {
  SolverConfig solver = cfg.solver;
  auto eval_value = [&](const Eigen::Vector3d& t) -> double {
    KernelSpec s = spec;
    s.hp = from_log(t);
    try {
      return alpha_elbo(X, y, Z, s, alpha, solver).value;
    } catch (const NumericalError&) {
      return -std::numeric_limits<double>::infinity();
    }
  };
  auto eval_both = [&](const Eigen::Vector3d& t) -> ObjectiveEval {
    KernelSpec s = spec;
    s.hp = from_log(t);
    return alpha_elbo_value_and_grad(X, y, Z, s, alpha, solver);
  };

  AscentResult out;
  out.theta = theta0;
  double f = eval_value(theta0);
  for (int rejitter = 0; !std::isfinite(f) && rejitter < 3; ++rejitter) {
    solver.jitter = std::max(solver.jitter.value_or(1e-8), 1e-12) * 100.0;
    f = eval_value(theta0);
  }
  if (!std::isfinite(f))
    throw NumericalError("fit: objective not finite at initialization");

  ObjectiveEval cur = eval_both(theta0);
  f = cur.value.value;
  Eigen::Vector3d g = cur.grad;
  out.diag.objective_trace.push_back(f);

  const double grad_tol =
      cfg.gradient_tolerance * std::max<double>(1, X.rows());
  double step = 1.0 / std::max(1.0, g.norm());
  int it = 0;
  for (; it < cfg.max_iterations; ++it) {
    if (g.lpNorm<Eigen::Infinity>() <= grad_tol) {
      out.diag.converged = true;
      break;
    }
    const double g2 = g.squaredNorm();
    double s = std::min(step * 2.0, 1e6);
    bool accepted = false;
    Eigen::Vector3d theta_new;
    double f_new = 0.0;
    for (int ls = 0; ls < cfg.max_line_search_steps; ++ls) {
      theta_new = out.theta + s * g;
      f_new = eval_value(theta_new);
      if (std::isfinite(f_new) && f_new >= f + 1e-4 * s * g2) {
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    if (!accepted) {
      // no ascent direction progress at any feasible step
      out.diag.converged = true;
      break;
    }
    step = s;
    out.theta = theta_new;
    const double f_prev = f;
    cur = eval_both(theta_new);
    f = cur.value.value;
    g = cur.grad;
    out.diag.objective_trace.push_back(f);
    if (std::abs(f - f_prev) <= cfg.objective_tolerance * (1.0 + std::abs(f))) {
      ++it;
      out.diag.converged = true;
      break;
    }
  }
  out.diag.iterations = it;
  out.diag.hit_max_iterations =
      !out.diag.converged && it >= cfg.max_iterations;
  out.objective = f;
  out.grad_norm = g.norm();
  out.diag.final_objective = f;
  out.diag.gradient_norm = out.grad_norm;
  return out;
}

GPModel fit_impl(const Dataset& raw, InducingSet inducing_raw, int M,
                 InducingStrategy strategy, const AlphaChoice& alpha_choice,
                 const KernelSpec& initial, const FitConfig& cfg) {
  cfg.validate();
  initial.validate();
  raw.validate();
  const Dataset data =
      raw.standardization.applied ? raw : standardize(raw);

  // inducing rows live in input units; the optimizer sees standardized ones
  if (strategy != InducingStrategy::UserProvided) {
    Dataset std_view = data;
    inducing_raw = select_inducing(std_view, M, strategy, initial, cfg.seed,
                                   inducing_raw.eps);
    // map back to input units through the training rows
    inducing_raw.Z.resize(static_cast<Eigen::Index>(inducing_raw.indices.size()),
                          raw.d());
    for (std::size_t i = 0; i < inducing_raw.indices.size(); ++i)
      inducing_raw.Z.row(static_cast<Eigen::Index>(i)) =
          raw.X.row(inducing_raw.indices[i]);
  }
  Eigen::MatrixXd Z_std = data.standardization.apply_x(inducing_raw.Z);

  AlphaParam alpha = alpha_choice.value;
  if (alpha_choice.cross_validate) {
    if (strategy == InducingStrategy::UserProvided)
      throw InputError("fit: alpha cross-validation needs a subset strategy");
    AlphaSelection sel = select_alpha(raw, alpha_choice.grid,
                                      static_cast<int>(Z_std.rows()), strategy,
                                      initial, cfg);
    alpha = sel.best;
  }

  // base initialization, perturbed per restart
  Hyperparams hp0 = initial.hp;
  if (!cfg.use_initial_hyperparams) {
    hp0.lengthscale = median_pairwise_distance(data.X);
    hp0.signal_variance = 1.0;
    hp0.noise_variance = 0.1;
  }
  const Eigen::Vector3d theta0 = to_log(hp0);

  AscentResult best;
  bool have_best = false;
  for (int r = 0; r < cfg.restarts; ++r) {
    Eigen::Vector3d start = theta0;
    if (r > 0) {
      auto rng = make_rng(cfg.seed, 0xf17 + static_cast<std::uint64_t>(r));
      std::normal_distribution<double> dist(0.0, 0.3);
      for (int i = 0; i < 3; ++i) start(i) += dist(rng);
    }
    AscentResult res =
        ascend(data.X, data.y, Z_std, initial, alpha, cfg, start);
    if (!have_best || res.objective > best.objective) {
      best = std::move(res);
      have_best = true;
    }
  }
  best.diag.restarts_run = cfg.restarts;

  GPModel model;
  model.spec = initial;
  model.spec.hp = from_log(best.theta);
  model.alpha = alpha;
  model.inducing = inducing_raw;
  model.standardization = data.standardization;
  model.diagnostics = best.diag;

  // cache the solve artifacts prediction needs
  const KernelSpec& spec = model.spec;
  Eigen::MatrixXd K_fU = gram(spec, data.X, Z_std);
  Eigen::MatrixXd K_UU = gram(spec, Z_std, Z_std);
  const double kuu_jit =
      cfg.solver.effective_jitter(K_UU.trace(), K_UU.rows());
  K_UU.diagonal().array() += kuu_jit;
  Eigen::LLT<Eigen::MatrixXd> llt_uu(K_UU);
  if (llt_uu.info() != Eigen::Success)
    throw NumericalError("fit: inducing Gram not PD while caching");
  Eigen::MatrixXd G = llt_uu.solve(K_fU.transpose());

  Eigen::MatrixXd K = gram(spec, data.X, data.X);
  const double a = alpha.alpha;
  const double s2 = spec.hp.noise_variance;
  const Eigen::Index n = data.n();
  Eigen::MatrixXd rhs(n, 1 + G.rows());
  rhs.col(0) = data.y;
  rhs.rightCols(G.rows()) = G.transpose();
  double xi_jit;
  Eigen::MatrixXd sol;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&)> xi_apply;
  if (n <= cfg.solver.dense_threshold) {
    Eigen::MatrixXd Q = K_fU * G;
    Q = 0.5 * (Q + Q.transpose()).eval();
    Eigen::MatrixXd Xi = (1.0 - a) * K + a * Q;
    Xi.diagonal().array() += s2;
    xi_jit = cfg.solver.effective_jitter(Xi.trace(), n);
    Xi.diagonal().array() += xi_jit;
    Eigen::LLT<Eigen::MatrixXd> llt_xi(Xi);
    if (llt_xi.info() != Eigen::Success)
      throw NumericalError("fit: blended covariance not PD while caching");
    sol = llt_xi.solve(rhs);
    xi_apply = [Xi](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      return Xi.selfadjointView<Eigen::Lower>() * v;
    };
  } else {
    // structured application; the blended covariance is never materialized
    LinearOperator xi_op(
        n,
        [&K, &K_fU, &G, a, s2](const Eigen::MatrixXd& Xb) -> Eigen::MatrixXd {
          Eigen::MatrixXd r = s2 * Xb;
          r.noalias() += (1.0 - a) * (K.selfadjointView<Eigen::Lower>() * Xb);
          r.noalias() += a * (K_fU * (G * Xb));
          return r;
        },
        Eigen::VectorXd(s2 + (1.0 - a) * K.diagonal().array() +
                        a * (K_fU.array() * G.transpose().array())
                                .rowwise()
                                .sum()));
    xi_jit = cfg.solver.effective_jitter(xi_op.diagonal()->sum(), n);
    LinearOperator shifted = xi_op.shifted(xi_jit);
    sol = mbcg_solve(shifted, rhs, cfg.solver, false).solutions;
    xi_apply = [shifted](const Eigen::VectorXd& v) -> Eigen::VectorXd {
      return shifted.apply(v);
    };
  }
  model.xi_inv_y = sol.col(0);
  model.predict_coeff = G * model.xi_inv_y;
  model.predict_quad = G * sol.rightCols(G.rows());
  model.predict_quad =
      0.5 * (model.predict_quad + model.predict_quad.transpose()).eval();
  model.variance_floor = std::max(xi_jit, 1e-12);
  model.diagnostics.cache_residual =
      (xi_apply(model.xi_inv_y) - data.y).norm() /
      std::max(data.y.norm(), 1e-300);
  return model;
}

}  // namespace

GPModel fit(const Dataset& data, int M, InducingStrategy strategy,
            const AlphaChoice& alpha, const KernelSpec& initial,
            const FitConfig& config) {
  if (strategy == InducingStrategy::UserProvided)
    throw InputError("fit: user-provided inducing rows need an InducingSet");
  return fit_impl(data, InducingSet{}, M, strategy, alpha, initial, config);
}

GPModel fit(const Dataset& data, const InducingSet& inducing,
            const AlphaChoice& alpha, const KernelSpec& initial,
            const FitConfig& config) {
  if (inducing.Z.rows() < 1)
    throw InputError("fit: inducing set must be nonempty");
  if (inducing.Z.cols() != data.d())
    throw InputError("fit: inducing dimension mismatch");
  InducingSet user = inducing;
  user.provenance = InducingStrategy::UserProvided;
  return fit_impl(data, user, static_cast<int>(inducing.Z.rows()),
                  InducingStrategy::UserProvided, alpha, initial, config);
}

Prediction predict(const GPModel& model, const Eigen::MatrixXd& X_star) {
  if (X_star.cols() != model.inducing.Z.cols())
    throw InputError("predict: input dimension mismatch");
  Prediction out;
  const Eigen::Index ns = X_star.rows();
  out.mean.resize(ns);
  out.variance.resize(ns);
  if (ns == 0) return out;
  if (!X_star.allFinite()) throw InputError("predict: non-finite inputs");

  Eigen::MatrixXd Xs = model.standardization.apply_x(X_star);
  Eigen::MatrixXd Zs = model.standardization.apply_x(model.inducing.Z);
  Eigen::MatrixXd K_sU = gram(model.spec, Xs, Zs);

  const double prior_var =
      model.spec.hp.signal_variance + model.spec.hp.noise_variance;
  Eigen::VectorXd mean_std = K_sU * model.predict_coeff;
  Eigen::VectorXd corr =
      (K_sU.array() * (K_sU * model.predict_quad).array()).rowwise().sum();
  Eigen::VectorXd var_std = (prior_var - corr.array()).matrix();
  for (Eigen::Index i = 0; i < ns; ++i) {
    if (var_std(i) < model.variance_floor) {
      var_std(i) = model.variance_floor;
      ++out.clamped;
    }
  }
  const double ys = model.standardization.applied
                        ? model.standardization.y_std
                        : 1.0;
  out.mean = model.standardization.invert_y(mean_std);
  out.variance = var_std * ys * ys;
  return out;
}

AlphaSelection select_alpha(const Dataset& data,
                            const std::vector<double>& grid, int M,
                            InducingStrategy strategy,
                            const KernelSpec& initial, const FitConfig& config,
                            const CvConfig& cv) {
  if (grid.empty()) throw InputError("select_alpha: grid must be nonempty");
  for (double a : grid) AlphaParam{a}.validate();
  if (cv.folds < 1) throw InputError("select_alpha: folds must be >= 1");
  data.validate();

  // fold index sets: a single seeded holdout, or k disjoint test folds
  std::vector<Split> folds;
  if (cv.folds == 1) {
    folds.push_back(seeded_split(data.n(), cv.train_fraction, config.seed));
  } else {
    std::vector<int> perm(data.n());
    std::iota(perm.begin(), perm.end(), 0);
    auto rng = make_rng(config.seed, 0xf01d);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int f = 0; f < cv.folds; ++f) {
      Split s;
      for (std::size_t i = 0; i < perm.size(); ++i) {
        if (static_cast<int>(i % cv.folds) == f)
          s.test.push_back(perm[i]);
        else
          s.train.push_back(perm[i]);
      }
      folds.push_back(std::move(s));
    }
  }

  AlphaSelection out;
  out.table.reserve(grid.size());
  for (double a : grid) {
    AlphaTableRow row;
    row.alpha = a;
    double sq_sum = 0.0;
    int count = 0;
    try {
      for (const Split& fold : folds) {
        Dataset train = subset(data, fold.train);
        Dataset test = subset(data, fold.test);
        GPModel m = fit(train, std::min<int>(M, static_cast<int>(train.n())),
                        strategy, AlphaChoice::fixed(a), initial, config);
        Prediction p = predict(m, test.X);
        const double r = rmse(p.mean, test.y);
        sq_sum += r * r * static_cast<double>(test.n());
        count += static_cast<int>(test.n());
        row.objective = m.diagnostics.final_objective;
        row.iterations += m.diagnostics.iterations;
      }
      row.rmse = std::sqrt(sq_sum / count);
      row.ok = true;
    } catch (const NumericalError&) {
      row.ok = false;
    }
    out.table.push_back(row);
  }

  out.best = AlphaParam{select_alpha_argmin(out.table)};
  return out;
}

double select_alpha_argmin(const std::vector<AlphaTableRow>& table) {
  double best_rmse = std::numeric_limits<double>::infinity();
  for (const AlphaTableRow& r : table)
    if (r.ok) best_rmse = std::min(best_rmse, r.rmse);
  if (!std::isfinite(best_rmse))
    throw NumericalError("select_alpha: every candidate fit failed");
  double best_alpha = std::numeric_limits<double>::infinity();
  for (const AlphaTableRow& r : table)
    if (r.ok && r.rmse <= best_rmse + 1e-12)
      best_alpha = std::min(best_alpha, r.alpha);
  return best_alpha;
}

namespace {

const char* kernel_name(const KernelSpec& s) {
  if (s.family == KernelFamily::SquaredExponential) return "se";
  switch (s.matern_r) {
    case 1:
      return "matern32";
    case 2:
      return "matern52";
    default:
      return "matern72";
  }
}

KernelSpec kernel_from_name(const std::string& name) {
  KernelSpec s;
  if (name == "se") {
    s.family = KernelFamily::SquaredExponential;
  } else if (name == "matern32") {
    s.family = KernelFamily::Matern;
    s.matern_r = 1;
  } else if (name == "matern52") {
    s.family = KernelFamily::Matern;
    s.matern_r = 2;
  } else if (name == "matern72") {
    s.family = KernelFamily::Matern;
    s.matern_r = 3;
  } else {
    throw InputError("unknown kernel name: " + name);
  }
  return s;
}

const char* provenance_name(InducingStrategy s) {
  switch (s) {
    case InducingStrategy::RandomSubset:
      return "random-subset";
    case InducingStrategy::KDppExact:
      return "kdpp-exact";
    case InducingStrategy::KDppApprox:
      return "kdpp-approx";
    default:
      return "user";
  }
}

InducingStrategy provenance_from_name(const std::string& name) {
  if (name == "random-subset") return InducingStrategy::RandomSubset;
  if (name == "kdpp-exact") return InducingStrategy::KDppExact;
  if (name == "kdpp-approx") return InducingStrategy::KDppApprox;
  if (name == "user") return InducingStrategy::UserProvided;
  throw InputError("unknown inducing provenance: " + name);
}

void write_vector(std::ostream& out, const Eigen::VectorXd& v) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out << (i ? " " : "") << csv::format_double(v(i));
  out << "\n";
}

Eigen::VectorXd parse_vector(const std::string& line, Eigen::Index expect) {
  std::istringstream ss(line);
  std::vector<double> vals;
  double v;
  while (ss >> v) vals.push_back(v);
  if (expect >= 0 && static_cast<Eigen::Index>(vals.size()) != expect)
    throw InputError("model file: vector length mismatch");
  return Eigen::Map<Eigen::VectorXd>(vals.data(),
                                     static_cast<Eigen::Index>(vals.size()));
}

}  // namespace

void GPModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write model file: " + path);
  const Eigen::Index m = inducing.Z.rows(), d = inducing.Z.cols();
  auto fd = [](double v) { return csv::format_double(v); };
  out << "alphagp-model 1\n";
  out << "kernel " << kernel_name(spec) << "\n";
  out << "alpha " << fd(alpha.alpha) << "\n";
  out << "near_one_threshold " << fd(alpha.near_one_threshold) << "\n";
  out << "lemma_threshold " << fd(alpha.lemma_threshold) << "\n";
  out << "lengthscale " << fd(spec.hp.lengthscale) << "\n";
  out << "signal_variance " << fd(spec.hp.signal_variance) << "\n";
  out << "noise_variance " << fd(spec.hp.noise_variance) << "\n";
  // original-unit equivalents, derived for reporting
  const double ys2 = standardization.applied
                         ? standardization.y_std * standardization.y_std
                         : 1.0;
  out << "signal_variance_original " << fd(spec.hp.signal_variance * ys2)
      << "\n";
  out << "noise_variance_original " << fd(spec.hp.noise_variance * ys2) << "\n";
  out << "lengthscale_original";
  for (Eigen::Index j = 0; j < d; ++j)
    out << " "
        << fd(spec.hp.lengthscale *
              (standardization.applied ? standardization.x_std(j) : 1.0));
  out << "\n";
  out << "provenance " << provenance_name(inducing.provenance) << "\n";
  out << "inducing_seed " << inducing.seed << "\n";
  out << "inducing_eps " << fd(inducing.eps) << "\n";
  out << "standardized " << (standardization.applied ? 1 : 0) << "\n";
  if (standardization.applied) {
    out << "x_mean ";
    write_vector(out, standardization.x_mean);
    out << "x_std ";
    write_vector(out, standardization.x_std);
    out << "y_mean " << fd(standardization.y_mean) << "\n";
    out << "y_std " << fd(standardization.y_std) << "\n";
  }
  out << "variance_floor " << fd(variance_floor) << "\n";
  out << "fit_iterations " << diagnostics.iterations << "\n";
  out << "fit_objective " << fd(diagnostics.final_objective) << "\n";
  out << "fit_gradient_norm " << fd(diagnostics.gradient_norm) << "\n";
  out << "fit_converged " << (diagnostics.converged ? 1 : 0) << "\n";
  out << "fit_restarts " << diagnostics.restarts_run << "\n";
  out << "fit_cache_residual " << fd(diagnostics.cache_residual) << "\n";
  out << "Z " << m << " " << d << "\n";
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < d; ++j)
      out << (j ? " " : "") << fd(inducing.Z(i, j));
    out << "\n";
  }
  out << "predict_coeff " << m << "\n";
  write_vector(out, predict_coeff);
  out << "predict_quad " << m << "\n";
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < m; ++j)
      out << (j ? " " : "") << fd(predict_quad(i, j));
    out << "\n";
  }
  out << "end\n";
}

GPModel GPModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open model file: " + path);
  std::string line;
  if (!std::getline(in, line) || line != "alphagp-model 1")
    throw InputError("model file: unrecognized format tag");
  GPModel m;
  Eigen::Index zm = 0, zd = 0;
  auto next_kv = [&](std::string& key, std::string& rest) -> bool {
    if (!std::getline(in, line)) return false;
    const auto sp = line.find(' ');
    key = line.substr(0, sp);
    rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    return true;
  };
  std::string key, rest;
  while (next_kv(key, rest)) {
    if (key == "end") break;
    if (key == "kernel") {
      Hyperparams hp = m.spec.hp;
      m.spec = kernel_from_name(rest);
      m.spec.hp = hp;
    } else if (key == "alpha") {
      m.alpha.alpha = std::stod(rest);
    } else if (key == "near_one_threshold") {
      m.alpha.near_one_threshold = std::stod(rest);
    } else if (key == "lemma_threshold") {
      m.alpha.lemma_threshold = std::stod(rest);
    } else if (key == "lengthscale") {
      m.spec.hp.lengthscale = std::stod(rest);
    } else if (key == "signal_variance") {
      m.spec.hp.signal_variance = std::stod(rest);
    } else if (key == "noise_variance") {
      m.spec.hp.noise_variance = std::stod(rest);
    } else if (key == "provenance") {
      m.inducing.provenance = provenance_from_name(rest);
    } else if (key == "inducing_seed") {
      m.inducing.seed = std::stoull(rest);
    } else if (key == "inducing_eps") {
      m.inducing.eps = std::stod(rest);
    } else if (key == "standardized") {
      m.standardization.applied = rest == "1";
    } else if (key == "x_mean") {
      m.standardization.x_mean = parse_vector(rest, -1);
    } else if (key == "x_std") {
      m.standardization.x_std = parse_vector(rest, -1);
    } else if (key == "y_mean") {
      m.standardization.y_mean = std::stod(rest);
    } else if (key == "y_std") {
      m.standardization.y_std = std::stod(rest);
    } else if (key == "variance_floor") {
      m.variance_floor = std::stod(rest);
    } else if (key == "fit_iterations") {
      m.diagnostics.iterations = std::stoi(rest);
    } else if (key == "fit_objective") {
      m.diagnostics.final_objective = std::stod(rest);
    } else if (key == "fit_gradient_norm") {
      m.diagnostics.gradient_norm = std::stod(rest);
    } else if (key == "fit_converged") {
      m.diagnostics.converged = rest == "1";
    } else if (key == "fit_restarts") {
      m.diagnostics.restarts_run = std::stoi(rest);
    } else if (key == "fit_cache_residual") {
      m.diagnostics.cache_residual = std::stod(rest);
    } else if (key == "Z") {
      std::istringstream ss(rest);
      ss >> zm >> zd;
      m.inducing.Z.resize(zm, zd);
      for (Eigen::Index i = 0; i < zm; ++i) {
        if (!std::getline(in, line)) throw InputError("model file: truncated Z");
        m.inducing.Z.row(i) = parse_vector(line, zd).transpose();
      }
    } else if (key == "predict_coeff") {
      if (!std::getline(in, line))
        throw InputError("model file: truncated predict_coeff");
      m.predict_coeff = parse_vector(line, std::stoll(rest));
    } else if (key == "predict_quad") {
      const Eigen::Index k = std::stoll(rest);
      m.predict_quad.resize(k, k);
      for (Eigen::Index i = 0; i < k; ++i) {
        if (!std::getline(in, line))
          throw InputError("model file: truncated predict_quad");
        m.predict_quad.row(i) = parse_vector(line, k).transpose();
      }
    } else if (key == "signal_variance_original" ||
               key == "noise_variance_original" ||
               key == "lengthscale_original") {
      // derived report fields; recomputed on save
    } else {
      throw InputError("model file: unknown key '" + key + "'");
    }
  }
  if (m.inducing.Z.rows() < 1)
    throw InputError("model file: missing inducing rows");
  m.spec.validate();
  m.alpha.validate();
  return m;
}

}  // namespace alphagp
