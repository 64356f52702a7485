#include "radreg/registration.hpp"

#include <chrono>
#include <cmath>

#include "json.hpp"
#include "radreg/similarity.hpp"

namespace radreg {

Metric metric_from_string(const std::string& name) {
  if (name == "ncc") return Metric::Ncc;
  if (name == "gc") return Metric::Gc;
  throw std::invalid_argument("unknown metric: " + name);
}

namespace {

const char* status_name(RegStatus s) {
  switch (s) {
    case RegStatus::Converged: return "converged";
    case RegStatus::BudgetExhausted: return "budget_exhausted";
    case RegStatus::Failed: return "failed";
  }
  return "unknown";
}

double eval_metric(Metric m, const Image2D& a, const Image2D& b) {
  return m == Metric::Ncc ? ncc(a, b) : gradient_correlation(a, b);
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

std::string registration_result_to_json(const RegistrationResult& r) {
  nlohmann::json j;
  j["status"] = status_name(r.status);
  j["evaluations"] = r.evaluations;
  j["wall_time_s"] = r.wall_time_s;
  j["final_pose"] = nlohmann::json::parse(pose_to_json(r.final_pose));
  nlohmann::json traj = nlohmann::json::array();
  for (const auto& p : r.trajectory) {
    nlohmann::json e;
    e["iteration"] = p.iteration;
    e["objective"] = p.objective;
    e["stage"] = p.stage;
    e["pose"] = nlohmann::json::parse(pose_to_json(p.pose));
    traj.push_back(std::move(e));
  }
  j["trajectory"] = std::move(traj);
  return j.dump();
}

RegistrationResult net_register(const Volume& v, const Image2D& ix, const Pose& theta0,
                                const ProjectionGeometry& geom, const ParamSet& params,
                                const EncoderConfig& enc_cfg, int iters, double lr,
                                double momentum, int threads) {
  const auto t0 = Clock::now();
  RegistrationResult res;
  Pose theta = theta0;
  TangentVec vel;
  res.status = RegStatus::BudgetExhausted;
  try {
    for (int i = 0; i <= iters; ++i) {
      const PoseGradResult g = encoder_pose_gradient(v, theta, ix, geom, params, enc_cfg, threads);
      ++res.evaluations;
      res.trajectory.push_back({i, theta, g.net_loss, "net"});
      if (i == iters) break;
      vel.omega = momentum * vel.omega + g.grad.omega;
      vel.nu = momentum * vel.nu + g.grad.nu;
      TangentVec step;
      step.omega = -lr * vel.omega;
      step.nu = -lr * vel.nu;
      theta = compose(theta, exp_map(step));
    }
  } catch (const NumericFailure&) {
    res.status = RegStatus::Failed;
  }
  if (res.trajectory.empty()) res.trajectory.push_back({0, theta0, 0.0, "net"});
  res.final_pose = res.trajectory.back().pose;
  res.wall_time_s = seconds_since(t0);
  return res;
}

RegistrationResult metric_register_cmaes(const Volume& v, const Image2D& ix, const Pose& theta0,
                                         const ProjectionGeometry& geom, Metric metric,
                                         const PoseSearchConfig& config, int threads) {
  const auto t0 = Clock::now();
  constexpr double kDeg2Rad = M_PI / 180.0;
  const auto pose_at = [&](const Eigen::VectorXd& x) {
    TangentVec xi;
    xi.omega = Eigen::Vector3d(x[0], x[1], x[2]) * kDeg2Rad;
    xi.nu = Eigen::Vector3d(x[3], x[4], x[5]);
    return compose(theta0, exp_map(xi));
  };
  const auto objective = [&](const Eigen::VectorXd& x) {
    return -eval_metric(metric, ix, project(v, pose_at(x), geom, 1));
  };

  CmaesConfig cc = config.cmaes;
  if (cc.sigma0.size() == 0) {
    cc.sigma0 = Eigen::VectorXd(6);
    cc.sigma0 << config.sigma0_rot_deg, config.sigma0_rot_deg, config.sigma0_rot_deg,
        config.sigma0_trans_mm, config.sigma0_trans_mm, config.sigma0_trans_mm;
  }
  if (threads > 0) cc.threads = threads;

  RegistrationResult res;
  res.status = RegStatus::BudgetExhausted;
  try {
    const CmaesResult cr = cmaes_minimize(objective, Eigen::VectorXd::Zero(6), cc);
    res.evaluations = cr.evaluations;
    res.trajectory.push_back({0, theta0, -eval_metric(metric, ix, project(v, theta0, geom)),
                              "cmaes"});
    ++res.evaluations;
    for (size_t g = 0; g < cr.history.size(); ++g) {
      // per-generation best-so-far objective; poses recorded at start and end
      res.trajectory.push_back(
          {static_cast<int>(g) + 1,
           g + 1 == cr.history.size() ? pose_at(cr.x_best) : res.trajectory.back().pose,
           cr.history[g], "cmaes"});
    }
    if (cr.f_best <= res.trajectory.front().objective) {
      res.trajectory.back().pose = pose_at(cr.x_best);
    } else {
      // never degrade the best-seen pose
      res.trajectory.back().pose = theta0;
      res.trajectory.back().objective = res.trajectory.front().objective;
    }
  } catch (const std::exception&) {
    res.status = RegStatus::Failed;
    if (res.trajectory.empty()) res.trajectory.push_back({0, theta0, 0.0, "cmaes"});
  }
  res.final_pose = res.trajectory.back().pose;
  res.wall_time_s = seconds_since(t0);
  return res;
}

RegistrationResult pipeline_register(const Volume& v, const Image2D& ix, const Pose& theta0,
                                     const ProjectionGeometry& geom, const ParamSet& params,
                                     const EncoderConfig& enc_cfg, int net_iters, double net_lr,
                                     const PoseSearchConfig& cmaes_config, int threads) {
  const auto t0 = Clock::now();
  RegistrationResult res;
  Pose mid = theta0;
  if (net_iters > 0) {
    const RegistrationResult stage1 =
        net_register(v, ix, theta0, geom, params, enc_cfg, net_iters, net_lr, 0.9, threads);
    res.trajectory = stage1.trajectory;
    res.evaluations = stage1.evaluations;
    mid = stage1.final_pose;
    if (stage1.status == RegStatus::Failed) {
      res.status = RegStatus::Failed;
      res.final_pose = mid;
      res.wall_time_s = seconds_since(t0);
      return res;
    }
  }
  const RegistrationResult stage2 =
      metric_register_cmaes(v, ix, mid, geom, Metric::Gc, cmaes_config, threads);
  const int base = res.trajectory.empty() ? 0 : res.trajectory.back().iteration + 1;
  for (const auto& p : stage2.trajectory) {
    res.trajectory.push_back({base + p.iteration, p.pose, p.objective, p.stage});
  }
  res.evaluations += stage2.evaluations;
  res.status = stage2.status;
  res.final_pose = res.trajectory.back().pose;
  res.wall_time_s = seconds_since(t0);
  return res;
}

}  // namespace radreg
