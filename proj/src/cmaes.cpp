#include "radreg/cmaes.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "radreg/rng.hpp"

namespace radreg {

CmaesResult cmaes_minimize(const std::function<double(const Eigen::VectorXd&)>& objective,
                           const Eigen::VectorXd& x0, const CmaesConfig& config) {
  const int n = static_cast<int>(x0.size());
  if (n < 1) throw std::invalid_argument("cmaes: empty search space");
  if (config.lambda < 4) throw std::invalid_argument("cmaes: lambda must be >= 4");
  Eigen::VectorXd scales = config.sigma0;
  if (scales.size() == 0) scales = Eigen::VectorXd::Ones(n);
  if (scales.size() != n || (scales.array() <= 0).any()) {
    throw std::invalid_argument("cmaes: sigma0 must be positive and match the dimension");
  }

  const int lambda = config.lambda;
  const int mu = lambda / 2;
  Eigen::VectorXd weights(mu);
  for (int i = 0; i < mu; ++i) weights[i] = std::log(mu + 0.5) - std::log(i + 1.0);
  weights /= weights.sum();
  const double mu_eff = 1.0 / weights.squaredNorm();

  const double c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
  const double d_sigma =
      1.0 + 2.0 * std::max(0.0, std::sqrt((mu_eff - 1.0) / (n + 1.0)) - 1.0) + c_sigma;
  const double c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
  const double c_1 = 2.0 / ((n + 1.3) * (n + 1.3) + mu_eff);
  const double c_mu = std::min(1.0 - c_1, 2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) /
                                              ((n + 2.0) * (n + 2.0) + mu_eff));
  const double chi_n = std::sqrt(double(n)) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));

  // search in scaled coordinates y: x = x0 + diag(scales) * y
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
  double sigma = 1.0;
  Eigen::MatrixXd C = Eigen::MatrixXd::Identity(n, n);
  Eigen::VectorXd p_sigma = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd p_c = Eigen::VectorXd::Zero(n);

  Rng rng(config.seed);
  const auto to_x = [&](const Eigen::VectorXd& y) {
    return (x0.array() + scales.array() * y.array()).matrix().eval();
  };

  CmaesResult res;
  res.x_best = x0;
  res.f_best = std::numeric_limits<double>::infinity();
  int gen = 0;

  while (res.evaluations + lambda <= config.max_evaluations) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(C);
    if (eig.info() != Eigen::Success) {
      throw std::runtime_error("cmaes: covariance eigendecomposition failed");
    }
    const Eigen::VectorXd d = eig.eigenvalues().cwiseMax(1e-20).cwiseSqrt();
    const Eigen::MatrixXd& B = eig.eigenvectors();

    std::vector<Eigen::VectorXd> zs(lambda), ys(lambda);
    for (int k = 0; k < lambda; ++k) {
      Eigen::VectorXd z(n);
      for (int i = 0; i < n; ++i) z[i] = rng.next_gaussian();
      zs[k] = z;
      ys[k] = B * (d.asDiagonal() * z);
    }
    std::vector<double> fs(lambda);
    std::vector<char> bad(lambda, 0);
    const auto eval_range = [&](int lo, int hi) {
      for (int k = lo; k < hi; ++k) {
        const double f = objective(to_x(mean + sigma * ys[k]));
        fs[k] = f;
        if (!std::isfinite(f)) bad[k] = 1;
      }
    };
    const int threads = std::max(1, std::min(config.threads, lambda));
    if (threads == 1) {
      eval_range(0, lambda);
    } else {
      std::vector<std::thread> pool;
      const int per = (lambda + threads - 1) / threads;
      for (int t = 0; t < threads; ++t) {
        const int lo = t * per, hi = std::min(lambda, lo + per);
        if (lo < hi) pool.emplace_back(eval_range, lo, hi);
      }
      for (auto& th : pool) th.join();
    }
    res.evaluations += lambda;

    // one resample per bad candidate, then hard failure
    for (int k = 0; k < lambda; ++k) {
      if (!bad[k]) continue;
      Eigen::VectorXd z(n);
      for (int i = 0; i < n; ++i) z[i] = rng.next_gaussian();
      zs[k] = z;
      ys[k] = B * (d.asDiagonal() * z);
      fs[k] = objective(to_x(mean + sigma * ys[k]));
      ++res.evaluations;
      if (!std::isfinite(fs[k])) {
        throw std::runtime_error("cmaes: objective returned non-finite value after resampling");
      }
    }

    std::vector<int> order(lambda);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return fs[a] < fs[b]; });

    if (fs[order[0]] < res.f_best) {
      res.f_best = fs[order[0]];
      res.x_best = to_x(mean + sigma * ys[order[0]]);
    }

    Eigen::VectorXd y_w = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd z_w = Eigen::VectorXd::Zero(n);
    for (int i = 0; i < mu; ++i) {
      y_w += weights[i] * ys[order[i]];
      z_w += weights[i] * zs[order[i]];
    }
    mean += sigma * y_w;

    p_sigma = (1.0 - c_sigma) * p_sigma +
              std::sqrt(c_sigma * (2.0 - c_sigma) * mu_eff) * (B * z_w);
    const double ps_norm = p_sigma.norm();
    const bool hsig =
        ps_norm / std::sqrt(1.0 - std::pow(1.0 - c_sigma, 2.0 * (gen + 1))) / chi_n <
        1.4 + 2.0 / (n + 1.0);
    p_c = (1.0 - c_c) * p_c +
          (hsig ? std::sqrt(c_c * (2.0 - c_c) * mu_eff) : 0.0) * y_w;

    Eigen::MatrixXd rank_mu = Eigen::MatrixXd::Zero(n, n);
    for (int i = 0; i < mu; ++i) {
      rank_mu += weights[i] * (ys[order[i]] * ys[order[i]].transpose());
    }
    const double delta_hsig = (1.0 - (hsig ? 1.0 : 0.0)) * c_c * (2.0 - c_c);
    C = (1.0 - c_1 - c_mu) * C + c_1 * (p_c * p_c.transpose() + delta_hsig * C) + c_mu * rank_mu;
    C = 0.5 * (C + C.transpose());  // keep symmetric

    sigma *= std::exp((c_sigma / d_sigma) * (ps_norm / chi_n - 1.0));

    res.history.push_back(res.f_best);
    ++gen;

    if (config.stagnation_iters > 0 && config.f_tol > 0 &&
        static_cast<int>(res.history.size()) > config.stagnation_iters) {
      const double prev = res.history[res.history.size() - 1 - config.stagnation_iters];
      if (prev - res.f_best < config.f_tol) break;
    }
  }
  return res;
}

}  // namespace radreg
