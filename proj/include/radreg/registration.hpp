#pragma once

#include <string>
#include <vector>

#include "radreg/cmaes.hpp"
#include "radreg/encoder.hpp"
#include "radreg/image.hpp"
#include "radreg/projector.hpp"
#include "radreg/se3.hpp"
#include "radreg/volume.hpp"

namespace radreg {

enum class RegStatus { Converged, BudgetExhausted, Failed };
enum class Metric { Ncc, Gc };

Metric metric_from_string(const std::string& name);

struct TrajectoryPoint {
  int iteration = 0;
  Pose pose;
  double objective = 0.0;
  std::string stage;  // "net" or "cmaes"
};

struct RegistrationResult {
  std::vector<TrajectoryPoint> trajectory;
  Pose final_pose;
  int evaluations = 0;  // image renderings
  double wall_time_s = 0.0;
  RegStatus status = RegStatus::BudgetExhausted;
};

std::string registration_result_to_json(const RegistrationResult& r);

/// CMA-ES search coordinates: rotations in degrees, translations in mm, in
/// the tangent space at the initial pose.
struct PoseSearchConfig {
  CmaesConfig cmaes;
  double sigma0_rot_deg = 5.0;
  double sigma0_trans_mm = 10.0;
};

/// Gradient descent on the learned similarity (SGD with momentum over the
/// pose tangent), deterministic.
RegistrationResult net_register(const Volume& v, const Image2D& ix, const Pose& theta0,
                                const ProjectionGeometry& geom, const ParamSet& params,
                                const EncoderConfig& enc_cfg, int iters, double lr,
                                double momentum = 0.9, int threads = 0);

/// Derivative-free baseline: CMA-ES over the 6-DoF tangent with a classical
/// intensity metric (objective = -metric).
RegistrationResult metric_register_cmaes(const Volume& v, const Image2D& ix, const Pose& theta0,
                                         const ProjectionGeometry& geom, Metric metric,
                                         const PoseSearchConfig& config, int threads = 0);

/// Learned coarse alignment followed by CMA-ES refinement; trajectories are
/// concatenated with stage tags.
RegistrationResult pipeline_register(const Volume& v, const Image2D& ix, const Pose& theta0,
                                     const ProjectionGeometry& geom, const ParamSet& params,
                                     const EncoderConfig& enc_cfg, int net_iters, double net_lr,
                                     const PoseSearchConfig& cmaes_config, int threads = 0);

}  // namespace radreg
