#pragma once

#include <Eigen/Dense>

#include "alphagp/data.hpp"

namespace alphagp {

enum class SyntheticFunction { GramacyLee, BraninHoo, Griewank };

struct SyntheticSpec {
  SyntheticFunction function = SyntheticFunction::GramacyLee;
  int dim = 1;  // fixed to 1 for GramacyLee, 2 for BraninHoo
  int n = 1000;
  double noise_std = -1.0;  // negative = 0.1 * std of the clean targets
  std::uint64_t seed = 0;

  void validate() const;
};

double synthetic_eval(SyntheticFunction f, const Eigen::VectorXd& x);

/// Standard evaluation box for the function.
std::pair<Eigen::VectorXd, Eigen::VectorXd> synthetic_domain(
    SyntheticFunction f, int dim);

/// Seeded uniform inputs on the standard domain, targets f(x) + noise.
Dataset make_synthetic(const SyntheticSpec& spec);

}  // namespace alphagp
