#include <doctest.h>

#include <cmath>

#include "alphagp/objective.hpp"
#include "oracles.hpp"

using namespace alphagp;

namespace {

SolverConfig exact_cfg() {
  SolverConfig cfg;
  cfg.jitter = 0.0;
  cfg.cg_tolerance = 1e-12;
  return cfg;
}

struct Instance {
  Eigen::MatrixXd X, Z;
  Eigen::VectorXd y;
  KernelSpec spec;
};

Instance make_instance(int n, int m, std::uint64_t seed,
                       KernelFamily family = KernelFamily::SquaredExponential,
                       double s2 = 0.1) {
  Instance ins;
  ins.spec.family = family;
  ins.spec.matern_r = 1;
  ins.spec.hp = {0.9, 1.2, s2};
  ins.X = oracle::random_matrix(n, 2, seed);
  ins.Z = ins.X.topRows(m);
  // draw targets from the prior generative model so scales are realistic
  Eigen::MatrixXd K = gram(ins.spec, ins.X, ins.X);
  K.diagonal().array() += s2;
  Eigen::LLT<Eigen::MatrixXd> llt(K);
  ins.y = llt.matrixL() * oracle::random_vector(n, seed + 1);
  return ins;
}

}  // namespace

TEST_CASE("alpha regimes") {
  CHECK(AlphaParam{0.0}.regime() == AlphaRegime::Exact);
  CHECK(AlphaParam{0.3}.regime() == AlphaRegime::General);
  CHECK(AlphaParam{0.4994}.regime() == AlphaRegime::General);
  CHECK(AlphaParam{0.4996}.regime() == AlphaRegime::LemmaDegenerate);
  CHECK(AlphaParam{0.5}.regime() == AlphaRegime::LemmaDegenerate);
  CHECK(AlphaParam{0.5004}.regime() == AlphaRegime::LemmaDegenerate);
  CHECK(AlphaParam{0.5006}.regime() == AlphaRegime::General);
  CHECK(AlphaParam{1.0 - 1e-4}.regime() == AlphaRegime::NearOne);
  CHECK(AlphaParam{0.9995}.regime() == AlphaRegime::General);
  CHECK_THROWS_AS(AlphaParam{1.0}.validate(), InputError);
  CHECK_THROWS_AS(AlphaParam{-0.1}.validate(), InputError);
}

TEST_CASE("scalar case") {
  // N=1, y=0, k(x,x)=1, sigma2=1: log N(0; 0, 2) = -log(4 pi)/2
  Eigen::MatrixXd X(1, 1);
  X << 0.0;
  Eigen::VectorXd y(1);
  y << 0.0;
  KernelSpec spec;
  spec.hp = {1.0, 1.0, 1.0};
  const double expected = -0.5 * std::log(4.0 * 3.14159265358979323846);
  CHECK(alpha_elbo(X, y, X, spec, AlphaParam{0.0}, exact_cfg()).value ==
        doctest::Approx(expected).epsilon(1e-12));
  CHECK(exact_loglik(X, y, spec, exact_cfg()).value ==
        doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("inducing set equal to training rows recovers the exact likelihood") {
  Instance ins = make_instance(15, 15, 301);
  ins.Z = ins.X;
  const double exact = exact_loglik(ins.X, ins.y, ins.spec, exact_cfg()).value;
  for (double a : {0.0, 0.2, 0.5, 0.8, 1.0 - 1e-4}) {
    ObjectiveValue v = alpha_elbo(ins.X, ins.y, ins.Z, ins.spec,
                                  AlphaParam{a}, exact_cfg());
    CHECK(v.value == doctest::Approx(exact).epsilon(1e-7));
  }
}

TEST_CASE("general path matches the dense formula oracle") {
  Instance ins = make_instance(30, 5, 310);
  for (double a : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    oracle::DenseObjective o =
        oracle::dense_alpha_objective(ins.X, ins.y, ins.Z, ins.spec, a);
    ObjectiveValue v =
        alpha_elbo(ins.X, ins.y, ins.Z, ins.spec, AlphaParam{a}, exact_cfg());
    CHECK(v.value == doctest::Approx(o.value).epsilon(1e-6));
    CHECK(v.gaussian_term == doctest::Approx(o.gaussian).epsilon(1e-6));
    // bookkeeping identity and penalty sign
    CHECK(v.value ==
          doctest::Approx(v.gaussian_term + v.regularizer).epsilon(1e-12));
    CHECK(v.regularizer <= 1e-10);
    if (a == 0.5) CHECK(v.diag.lemma_fallback);
  }
}

TEST_CASE("alpha zero is bit-identical to the exact likelihood") {
  Instance ins = make_instance(50, 10, 320, KernelFamily::Matern);
  const double a = alpha_elbo(ins.X, ins.y, ins.Z, ins.spec, AlphaParam{0.0},
                              exact_cfg())
                       .value;
  const double b = exact_loglik(ins.X, ins.y, ins.spec, exact_cfg()).value;
  CHECK(a == b);
}

TEST_CASE("exact likelihood matches a dense factorization oracle") {
  Instance ins = make_instance(40, 5, 330);
  Eigen::MatrixXd cov = gram_serial(ins.spec, ins.X, ins.X);
  cov.diagonal().array() += ins.spec.hp.noise_variance;
  CHECK(exact_loglik(ins.X, ins.y, ins.spec, exact_cfg()).value ==
        doctest::Approx(oracle::gaussian_loglik(ins.y, cov)).epsilon(1e-8));
}

TEST_CASE("sparse-limit bound") {
  Instance ins = make_instance(30, 5, 340);
  ObjectiveValue svgp = svgp_elbo(ins.X, ins.y, ins.Z, ins.spec, exact_cfg());
  // trace correction is nonpositive
  CHECK(svgp.regularizer <= 1e-12);
  // dense-formula oracle for the sparse bound
  oracle::DenseObjective parts =
      oracle::dense_alpha_objective(ins.X, ins.y, ins.Z, ins.spec, 0.0);
  Eigen::MatrixXd Sq = parts.Q;
  Sq.diagonal().array() += ins.spec.hp.noise_variance;
  const double expected =
      oracle::gaussian_loglik(ins.y, Sq) -
      (parts.K - parts.Q).trace() / (2.0 * ins.spec.hp.noise_variance);
  CHECK(svgp.value == doctest::Approx(expected).epsilon(1e-9));

  // the bound at alpha just below one lands on the sparse limit
  ObjectiveValue near = alpha_elbo(ins.X, ins.y, ins.Z, ins.spec,
                                   AlphaParam{1.0 - 1e-4}, exact_cfg());
  CHECK(std::abs(near.value - svgp.value) <= 1e-3 * std::abs(svgp.value));
  // approach from the general path as alpha climbs
  double prev_gap = std::numeric_limits<double>::infinity();
  for (double a : {0.99, 0.999, 0.9995}) {
    ObjectiveValue v =
        alpha_elbo(ins.X, ins.y, ins.Z, ins.spec, AlphaParam{a}, exact_cfg());
    const double gap = std::abs(v.value - svgp.value);
    CHECK(gap < prev_gap + 1e-12);
    prev_gap = gap;
  }

  // with the full inducing set the sparse bound is the exact likelihood
  Instance full = make_instance(12, 12, 341);
  full.Z = full.X;
  CHECK(svgp_elbo(full.X, full.y, full.Z, full.spec, exact_cfg()).value ==
        doctest::Approx(exact_loglik(full.X, full.y, full.spec, exact_cfg())
                            .value)
            .epsilon(1e-7));
}

TEST_CASE("bound is non-increasing in alpha") {
  for (std::uint64_t seed : {350u, 351u, 352u, 353u}) {
    Instance ins = make_instance(25, 6, seed);
    double prev = std::numeric_limits<double>::infinity();
    for (double a : {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) {
      const double v =
          alpha_elbo(ins.X, ins.y, ins.Z, ins.spec, AlphaParam{a}, exact_cfg())
              .value;
      CHECK(v <= prev + 1e-10);
      prev = v;
    }
  }
}

TEST_CASE("upper bound") {
  Instance ins = make_instance(30, 5, 360);
  const double exact = exact_loglik(ins.X, ins.y, ins.spec, exact_cfg()).value;

  // alpha = 0: the trace shift carries a factor alpha, so the bound is the
  // exact likelihood even with a strict inducing subset
  CHECK(upper_bound(ins.X, ins.y, ins.Z, ins.spec, AlphaParam{0.0},
                    exact_cfg()) == doctest::Approx(exact).epsilon(1e-10));

  // full sandwich across the grid
  for (double a : {0.1, 0.3, 0.5, 0.7, 0.9}) {
    const double lower =
        alpha_elbo(ins.X, ins.y, ins.Z, ins.spec, AlphaParam{a}, exact_cfg())
            .value;
    const double upper =
        upper_bound(ins.X, ins.y, ins.Z, ins.spec, AlphaParam{a}, exact_cfg());
    CHECK(lower <= exact + 1e-8);
    CHECK(exact <= upper + 1e-8);
  }

  // inducing = training rows collapses the bound onto the exact likelihood
  Instance full = make_instance(12, 12, 361);
  full.Z = full.X;
  CHECK(upper_bound(full.X, full.y, full.Z, full.spec, AlphaParam{0.4},
                    exact_cfg()) == doctest::Approx(exact_loglik(
                                        full.X, full.y, full.spec, exact_cfg())
                                        .value)
                                        .epsilon(1e-7));
}

TEST_CASE("gaussian renyi divergence closed form") {
  // identical distributions: zero at every order
  Eigen::VectorXd m0 = Eigen::VectorXd::Zero(2);
  Eigen::MatrixXd S0 = oracle::random_spd(2, 370);
  for (double a : {0.1, 0.5, 0.9})
    CHECK(renyi_div_gaussians(m0, S0, m0, S0, a) ==
          doctest::Approx(0.0).epsilon(1e-12));

  // KL limit on N(0,1) vs N(1,1)
  Eigen::VectorXd mu1(1), mu2(1);
  mu1 << 0.0;
  mu2 << 1.0;
  Eigen::MatrixXd one = Eigen::MatrixXd::Identity(1, 1);
  CHECK(renyi_div_gaussians(mu1, one, mu2, one, 1.0 - 1e-6) ==
        doctest::Approx(0.5).epsilon(1e-6));
  CHECK(renyi_div_gaussians(mu1, one, mu2, one, 1.0) ==
        doctest::Approx(0.5).epsilon(1e-12));

  // diagonal 3-D case against quadrature of the defining integral
  Eigen::VectorXd mean1(3), mean2(3);
  mean1 << 0.3, -0.2, 0.5;
  mean2 << -0.1, 0.4, 0.0;
  Eigen::VectorXd v1(3), v2(3);
  v1 << 0.7, 1.3, 0.9;
  v2 << 1.1, 0.8, 1.6;
  const double alpha = 0.5;
  double log_integral = 0.0;
  for (int i = 0; i < 3; ++i) {
    auto p = [&](double x) {
      return std::exp(-0.5 * (x - mean1(i)) * (x - mean1(i)) / v1(i)) /
             std::sqrt(2.0 * 3.14159265358979323846 * v1(i));
    };
    auto q = [&](double x) {
      return std::exp(-0.5 * (x - mean2(i)) * (x - mean2(i)) / v2(i)) /
             std::sqrt(2.0 * 3.14159265358979323846 * v2(i));
    };
    auto integrand = [&](double x) {
      return std::pow(p(x), alpha) * std::pow(q(x), 1.0 - alpha);
    };
    log_integral += std::log(oracle::adaptive_simpson(integrand, -30.0, 30.0));
  }
  const double quad_value = log_integral / (alpha - 1.0);
  CHECK(renyi_div_gaussians(mean1, v1.asDiagonal(), mean2, v2.asDiagonal(),
                            alpha) == doctest::Approx(quad_value).epsilon(1e-4));

  // nondecreasing in alpha
  double prev = -1.0;
  for (double a : {0.05, 0.2, 0.4, 0.6, 0.8, 0.95, 0.999}) {
    const double d =
        renyi_div_gaussians(mean1, v1.asDiagonal(), mean2, v2.asDiagonal(), a);
    CHECK(d >= prev - 1e-12);
    prev = d;
  }

  // indefinite blend outside the unit interval
  Eigen::MatrixXd s1 = 4.0 * one, s2m = 1.0 * one;
  CHECK_THROWS_AS(renyi_div_gaussians(mu1, s1, mu2, s2m, 2.0), InputError);
}

TEST_CASE("measured divergence") {
  Instance full = make_instance(12, 12, 380);
  full.Z = full.X;
  CHECK(std::abs(measured_divergence(full.X, full.y, full.Z, full.spec,
                                     AlphaParam{0.5}, exact_cfg())) < 1e-7);

  Instance ins = make_instance(30, 3, 381);
  CHECK(measured_divergence(ins.X, ins.y, ins.Z, ins.spec, AlphaParam{0.0},
                            exact_cfg()) == doctest::Approx(0.0));
  // positive and decreasing as the inducing set grows toward the data
  double prev = std::numeric_limits<double>::infinity();
  for (int m : {3, 10, 30}) {
    Instance sub = ins;
    sub.Z = ins.X.topRows(m);
    const double d = measured_divergence(sub.X, sub.y, sub.Z, sub.spec,
                                         AlphaParam{0.5}, exact_cfg());
    CHECK(d >= -1e-10);
    CHECK(d <= prev + 1e-9);
    prev = d;
  }
  CHECK(prev < 1e-6);  // with Z = X the divergence collapses

  SolverConfig small = exact_cfg();
  small.dense_threshold = 10;
  CHECK_THROWS_AS(measured_divergence(ins.X, ins.y, ins.Z, ins.spec,
                                      AlphaParam{0.5}, small),
                  InputError);
}

TEST_CASE("analytic gradients match finite differences") {
  Instance ins = make_instance(25, 5, 390);
  for (double a : {0.0, 0.2, 0.5, 0.8, 1.0 - 1e-4}) {
    AlphaParam ap{a};
    Eigen::Vector3d g =
        alpha_elbo_value_and_grad(ins.X, ins.y, ins.Z, ins.spec, ap, exact_cfg())
            .grad;
    Eigen::Vector3d logs{std::log(ins.spec.hp.lengthscale),
                         std::log(ins.spec.hp.signal_variance),
                         std::log(ins.spec.hp.noise_variance)};
    for (int p = 0; p < 3; ++p) {
      auto f = [&](double t) {
        KernelSpec s = ins.spec;
        Eigen::Vector3d th = logs;
        th(p) = t;
        s.hp.lengthscale = std::exp(th(0));
        s.hp.signal_variance = std::exp(th(1));
        s.hp.noise_variance = std::exp(th(2));
        return alpha_elbo(ins.X, ins.y, ins.Z, s, ap, exact_cfg()).value;
      };
      const double fd = oracle::central_diff(f, logs(p), 1e-5);
      CHECK(std::abs(g(p) - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("gradient with full inducing set at alpha zero is the exact gradient") {
  Instance ins = make_instance(15, 15, 400);
  ins.Z = ins.X;
  Eigen::Vector3d g = alpha_elbo_value_and_grad(ins.X, ins.y, ins.Z, ins.spec,
                                                AlphaParam{0.0}, exact_cfg())
                          .grad;
  // independent exact-likelihood gradient via dense matrices
  Eigen::MatrixXd K = gram_serial(ins.spec, ins.X, ins.X);
  Eigen::MatrixXd cov = K;
  cov.diagonal().array() += ins.spec.hp.noise_variance;
  Eigen::MatrixXd cov_inv = cov.inverse();
  Eigen::VectorXd w = cov_inv * ins.y;
  Eigen::MatrixXd dK_l = gram_grad_log_lengthscale(ins.spec, ins.X, ins.X);
  auto term = [&](const Eigen::MatrixXd& D) {
    return 0.5 * w.dot(D * w) - 0.5 * (cov_inv * D).trace();
  };
  CHECK(g(0) == doctest::Approx(term(dK_l)).epsilon(1e-8));
  CHECK(g(1) == doctest::Approx(term(K)).epsilon(1e-8));
  CHECK(g(2) == doctest::Approx(term(ins.spec.hp.noise_variance *
                                     Eigen::MatrixXd::Identity(15, 15)))
                    .epsilon(1e-8));
}

TEST_CASE("stochastic gradient path stays close to the dense gradient") {
  Instance ins = make_instance(60, 8, 410);
  AlphaParam ap{0.3};
  Eigen::Vector3d dense =
      alpha_elbo_value_and_grad(ins.X, ins.y, ins.Z, ins.spec, ap, exact_cfg())
          .grad;
  SolverConfig stoch = exact_cfg();
  stoch.dense_threshold = 20;  // force the iterative path
  stoch.probe_count = 128;
  stoch.seed = 17;
  stoch.cg_tolerance = 1e-10;
  Eigen::Vector3d est =
      alpha_elbo_value_and_grad(ins.X, ins.y, ins.Z, ins.spec, ap, stoch).grad;
  for (int p = 0; p < 3; ++p)
    CHECK(std::abs(est(p) - dense(p)) <=
          0.2 * std::max(1.0, std::abs(dense(p))));
}

TEST_CASE("iterative value path agrees with the dense one") {
  Instance ins = make_instance(80, 10, 420);
  AlphaParam ap{0.3};
  const double dense =
      alpha_elbo(ins.X, ins.y, ins.Z, ins.spec, ap, exact_cfg()).value;
  SolverConfig it = exact_cfg();
  it.dense_threshold = 20;
  it.probe_count = 64;
  it.lanczos_max_steps = 80;
  it.seed = 3;
  ObjectiveValue v = alpha_elbo(ins.X, ins.y, ins.Z, ins.spec, ap, it);
  CHECK(!v.diag.used_dense);
  CHECK(std::abs(v.value - dense) <= 0.02 * std::abs(dense));
}
