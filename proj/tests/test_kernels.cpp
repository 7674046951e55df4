#include <doctest.h>

#include <cmath>

#include "alphagp/kernels.hpp"
#include "oracles.hpp"

using namespace alphagp;

namespace {

KernelSpec se_spec(double l = 1.0, double v = 1.0, double s2 = 0.1) {
  KernelSpec s;
  s.family = KernelFamily::SquaredExponential;
  s.hp = {l, v, s2};
  return s;
}

KernelSpec matern_spec(int r, double l = 1.0, double v = 1.0, double s2 = 0.1) {
  KernelSpec s;
  s.family = KernelFamily::Matern;
  s.matern_r = r;
  s.hp = {l, v, s2};
  return s;
}

}  // namespace

TEST_CASE("kernel_eval closed forms") {
  Eigen::VectorXd x0 = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd x1(2);
  x1 << 1.0, 0.0;

  CHECK(kernel_eval(se_spec(), x0, x0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(kernel_eval(se_spec(), x0, x1) ==
        doctest::Approx(std::exp(-0.5)).epsilon(1e-15));

  // half-integer closed forms written out independently
  const double s3 = std::sqrt(3.0), s5 = std::sqrt(5.0), s7 = std::sqrt(7.0);
  CHECK(kernel_eval(matern_spec(1), x0, x1) ==
        doctest::Approx((1.0 + s3) * std::exp(-s3)).epsilon(1e-14));
  CHECK(kernel_eval(matern_spec(2), x0, x1) ==
        doctest::Approx((1.0 + s5 + 5.0 / 3.0) * std::exp(-s5)).epsilon(1e-14));
  CHECK(kernel_eval(matern_spec(3), x0, x1) ==
        doctest::Approx((1.0 + s7 + 14.0 / 5.0 + 7.0 * s7 / 15.0) *
                        std::exp(-s7))
            .epsilon(1e-14));

  // scaling by v and diagonal value for both families
  CHECK(kernel_eval(matern_spec(2, 2.0, 3.5), x1, x1) ==
        doctest::Approx(3.5).epsilon(1e-15));

  Eigen::VectorXd bad(3);
  bad.setZero();
  CHECK_THROWS_AS(kernel_eval(se_spec(), x0, bad), InputError);
  KernelSpec invalid = se_spec();
  invalid.hp.lengthscale = -1.0;
  CHECK_THROWS_AS(kernel_eval(invalid, x0, x1), InputError);
}

TEST_CASE("kernel symmetry") {
  auto gen = oracle::rng(11);
  std::normal_distribution<double> d(0.0, 1.0);
  for (int t = 0; t < 50; ++t) {
    Eigen::VectorXd a(3), b(3);
    for (int i = 0; i < 3; ++i) {
      a(i) = d(gen);
      b(i) = d(gen);
    }
    for (const auto& spec : {se_spec(0.7, 2.0), matern_spec(1), matern_spec(3)})
      CHECK(kernel_eval(spec, a, b) == kernel_eval(spec, b, a));
  }
}

TEST_CASE("gram basics and entrywise oracle") {
  KernelSpec spec = se_spec(0.8, 1.3);
  Eigen::MatrixXd one = oracle::random_matrix(1, 2, 3);
  Eigen::MatrixXd G1 = gram(spec, one, one);
  CHECK(G1.rows() == 1);
  CHECK(G1(0, 0) == doctest::Approx(1.3).epsilon(1e-15));

  Eigen::MatrixXd X1 = oracle::random_matrix(3, 2, 4);
  Eigen::MatrixXd X2 = oracle::random_matrix(5, 2, 5);
  Eigen::MatrixXd G12 = gram(spec, X1, X2);
  Eigen::MatrixXd G21 = gram(spec, X2, X1);
  CHECK((G12 - G21.transpose()).cwiseAbs().maxCoeff() == 0.0);

  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 5; ++j)
      CHECK(G12(i, j) == doctest::Approx(kernel_eval(
                             spec, X1.row(i).transpose(),
                             X2.row(j).transpose()))
                             .epsilon(1e-15));

  Eigen::MatrixXd bad = oracle::random_matrix(4, 3, 6);
  CHECK_THROWS_AS(gram(spec, X1, bad), InputError);
}

TEST_CASE("gram parallel matches serial bit for bit") {
  for (const auto& spec : {se_spec(), matern_spec(2)}) {
    Eigen::MatrixXd X1 = oracle::random_matrix(37, 3, 7);
    Eigen::MatrixXd X2 = oracle::random_matrix(23, 3, 8);
    Eigen::MatrixXd a = gram(spec, X1, X2);
    Eigen::MatrixXd b = gram_serial(spec, X1, X2);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("gram matrices are PSD up to jitter scale") {
  for (std::uint64_t seed : {21u, 22u, 23u}) {
    Eigen::MatrixXd X = oracle::random_matrix(200, 2, seed);
    for (const auto& spec : {se_spec(0.5), matern_spec(1, 0.7)}) {
      Eigen::MatrixXd K = gram(spec, X, X);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(K);
      CHECK(es.eigenvalues().minCoeff() >= -1e-8 * K.trace());
    }
  }
}

TEST_CASE("gram lengthscale gradient matches finite differences") {
  Eigen::MatrixXd X1 = oracle::random_matrix(6, 2, 31);
  Eigen::MatrixXd X2 = oracle::random_matrix(4, 2, 32);
  for (auto base : {se_spec(0.9, 1.7), matern_spec(1, 0.9, 1.7),
                    matern_spec(2, 0.9, 1.7), matern_spec(3, 0.9, 1.7)}) {
    Eigen::MatrixXd D = gram_grad_log_lengthscale(base, X1, X2);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < 4; ++j) {
        auto f = [&](double logl) {
          KernelSpec s = base;
          s.hp.lengthscale = std::exp(logl);
          return kernel_eval(s, X1.row(i).transpose(), X2.row(j).transpose());
        };
        const double fd =
            oracle::central_diff(f, std::log(base.hp.lengthscale), 1e-6);
        CHECK(D(i, j) == doctest::Approx(fd).epsilon(1e-6));
      }
  }
}

TEST_CASE("se spectrum constants and eigenvalue decay") {
  Hyperparams hp{1.0, 1.0, 1.0};
  SeSpectrum s = SeSpectrum::from(hp);
  CHECK(s.a == doctest::Approx(0.25));
  CHECK(s.b == doctest::Approx(0.5));
  CHECK(s.c == doctest::Approx(std::sqrt(0.25 * 0.25 + 2 * 0.25 * 0.5)));
  CHECK(s.A == doctest::Approx(s.a + s.b + s.c));
  CHECK(s.B > 0.0);
  CHECK(s.B < 1.0);
  double prev = std::numeric_limits<double>::infinity();
  for (int m = 1; m <= 10000; m *= 3) {
    const double lm = s.eigenvalue(m);
    CHECK(lm > 0.0);
    CHECK(lm < prev);
    prev = lm;
  }
  // a_scale override swaps in a different scale parameter
  SeSpectrum s2 = SeSpectrum::from(hp, 2.0);
  CHECK(s2.a == doctest::Approx(0.125));
}

TEST_CASE("se eigenvalue tail sum") {
  Hyperparams hp{1.0, 1.0, 1.0};
  SeSpectrum s = SeSpectrum::from(hp);

  // M = 0 is the full operator trace
  CHECK(se_eigen_tail(s, 0) ==
        doctest::Approx(hp.signal_variance * std::sqrt(2.0 * s.a) /
                        ((1.0 - s.B) * std::sqrt(s.A)))
            .epsilon(1e-15));
  // geometric recursion
  for (int M : {1, 2, 5, 17})
    CHECK(se_eigen_tail(s, M) ==
          doctest::Approx(s.B * se_eigen_tail(s, M - 1)).epsilon(1e-14));

  // partial-sum oracle at M = 10
  double partial = 0.0;
  for (int m = 11; m <= 10000; ++m) partial += s.eigenvalue(m);
  CHECK(se_eigen_tail(s, 10) == doctest::Approx(partial).epsilon(1e-12));

  // agreement across M <= 50
  for (int M = 0; M <= 50; ++M) {
    double sum = 0.0;
    for (int m = M + 1; m <= M + 10000; ++m) sum += s.eigenvalue(m);
    CHECK(se_eigen_tail(s, M) == doctest::Approx(sum).epsilon(1e-10));
  }
}

TEST_CASE("matern tail estimate against brute force") {
  // brute-force zeta tail at r=1, M=100
  double brute = 0.0;
  for (long m = 10000000; m >= 101; --m)
    brute += 1.0 / (static_cast<double>(m) * m * m * m);
  CHECK(matern_tail_bound(1, 100) == doctest::Approx(brute).epsilon(1e-8));

  // leading-order scaling: tail(2M)/tail(M) -> 2^-(2r+1)
  for (int r : {1, 2, 3}) {
    const double ratio = matern_tail_bound(r, 4000) / matern_tail_bound(r, 2000);
    CHECK(ratio == doctest::Approx(std::pow(2.0, -(2.0 * r + 1.0))).epsilon(1e-3));
  }

  // documented small-M caveat: at M=1 the expansion gives 1/6, far from the
  // true zeta(4) - 1 ~= 0.0823; the estimate is asymptotic, not uniform.
  CHECK(matern_tail_bound(1, 1) == doctest::Approx(1.0 / 6.0).epsilon(1e-15));
  double zeta4_tail = 0.0;
  for (long m = 2000000; m >= 2; --m)
    zeta4_tail += 1.0 / (static_cast<double>(m) * m * m * m);
  CHECK(zeta4_tail == doctest::Approx(0.0823232).epsilon(1e-4));
  CHECK(std::abs(matern_tail_bound(1, 1) - zeta4_tail) > 0.05);

  CHECK_THROWS_AS(matern_tail_bound(0, 10), InputError);
  CHECK_THROWS_AS(matern_tail_bound(1, 0), InputError);
}
