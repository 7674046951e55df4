#include "alphagp/synthetic.hpp"

#include <cmath>

namespace alphagp {

namespace {
constexpr double kPi = 3.14159265358979323846;
}

void SyntheticSpec::validate() const {
  if (n < 10) throw InputError("synthetic: need n >= 10");
  switch (function) {
    case SyntheticFunction::GramacyLee:
      if (dim != 1) throw InputError("gramacy-lee is one-dimensional");
      break;
    case SyntheticFunction::BraninHoo:
      if (dim != 2) throw InputError("branin-hoo is two-dimensional");
      break;
    case SyntheticFunction::Griewank:
      if (dim < 1) throw InputError("griewank needs dim >= 1");
      break;
  }
}

double synthetic_eval(SyntheticFunction f, const Eigen::VectorXd& x) {
  switch (f) {
    case SyntheticFunction::GramacyLee: {
      const double t = x(0);
      return std::sin(10.0 * kPi * t) / (2.0 * t) +
             std::pow(t - 1.0, 4.0);
    }
    case SyntheticFunction::BraninHoo: {
      const double x1 = x(0), x2 = x(1);
      const double a = 1.0, b = 5.1 / (4.0 * kPi * kPi), c = 5.0 / kPi;
      const double r = 6.0, s = 10.0, t = 1.0 / (8.0 * kPi);
      const double u = x2 - b * x1 * x1 + c * x1 - r;
      return a * u * u + s * (1.0 - t) * std::cos(x1) + s;
    }
    case SyntheticFunction::Griewank: {
      double sum = 0.0, prod = 1.0;
      for (Eigen::Index i = 0; i < x.size(); ++i) {
        sum += x(i) * x(i) / 4000.0;
        prod *= std::cos(x(i) / std::sqrt(static_cast<double>(i + 1)));
      }
      return sum - prod + 1.0;
    }
  }
  throw InputError("unknown synthetic function");
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> synthetic_domain(
    SyntheticFunction f, int dim) {
  Eigen::VectorXd lo(dim), hi(dim);
  switch (f) {
    case SyntheticFunction::GramacyLee:
      lo.setConstant(0.5);
      hi.setConstant(2.5);
      break;
    case SyntheticFunction::BraninHoo:
      lo << -5.0, 0.0;
      hi << 10.0, 15.0;
      break;
    case SyntheticFunction::Griewank:
      lo.setConstant(-600.0);
      hi.setConstant(600.0);
      break;
  }
  return {lo, hi};
}

Dataset make_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  auto [lo, hi] = synthetic_domain(spec.function, spec.dim);
  auto rng = make_rng(spec.seed, 0x5f1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  Dataset d;
  d.X.resize(spec.n, spec.dim);
  d.y.resize(spec.n);
  for (int i = 0; i < spec.n; ++i) {
    for (int j = 0; j < spec.dim; ++j)
      d.X(i, j) = lo(j) + (hi(j) - lo(j)) * unif(rng);
    d.y(i) = synthetic_eval(spec.function, d.X.row(i).transpose());
  }
  double noise = spec.noise_std;
  if (noise < 0.0) {
    const double mean = d.y.mean();
    noise = 0.1 * std::sqrt((d.y.array() - mean).square().sum() /
                            static_cast<double>(spec.n));
  }
  if (noise > 0.0) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < spec.n; ++i) d.y(i) += noise * gauss(rng);
  }
  return d;
}

}  // namespace alphagp
