#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <vector>

namespace radreg {

struct CmaesConfig {
  int lambda = 16;                 // population size, >= 4
  Eigen::VectorXd sigma0;          // per-coordinate initial step scales
  int max_evaluations = 2000;
  double f_tol = 0.0;              // stop when best-f improvement over a full
  int stagnation_iters = 0;        // window of this many iterations is < f_tol
  uint64_t seed = 0;
  int threads = 1;                 // parallel objective evaluations
};

struct CmaesResult {
  Eigen::VectorXd x_best;
  double f_best = 0.0;
  std::vector<double> history;  // best-so-far after each generation
  int evaluations = 0;
};

/// (mu/mu_w, lambda)-CMA-ES: weighted recombination, cumulative step-size
/// adaptation, rank-one and rank-mu covariance updates. Deterministic per
/// seed; iterate sequence invariant to adding a constant to the objective.
CmaesResult cmaes_minimize(const std::function<double(const Eigen::VectorXd&)>& objective,
                           const Eigen::VectorXd& x0, const CmaesConfig& config);

}  // namespace radreg
