#pragma once

#include <string>
#include <vector>

#include "radreg/encoder.hpp"
#include "radreg/image.hpp"
#include "radreg/registration.hpp"
#include "radreg/se3.hpp"
#include "radreg/volume.hpp"

namespace radreg {

using LandmarkSet = std::vector<Eigen::Vector3d>;  // mm, volume world frame

/// Bounding-box corners plus center.
LandmarkSet default_landmarks(const Volume& v);

/// Mean 3-D distance of landmarks under `pose` vs `target`.
double mtre(const Pose& pose, const Pose& target, const LandmarkSet& landmarks);

struct PercentileStat {
  double fraction = 0.0;
  double mean = 0.0;
  double stddev = 0.0;  // population std of the subset
};

/// Sort ascending, take the best ceil(f*N) per fraction, report mean and
/// population std.
std::vector<PercentileStat> percentile_stats(const std::vector<double>& tres,
                                             const std::vector<double>& fractions = {0.50, 0.75,
                                                                                     0.95});

/// Percentage of cases with TRE strictly below the threshold.
double success_rate(const std::vector<double>& tres, double threshold_mm = 10.0);

struct EvalReport {
  std::string method;
  std::vector<double> tres;
  std::vector<PercentileStat> stats;  // top 50/75/95
  double sr = 0.0;
  int case_count = 0;
  std::string config_echo;
};

std::string eval_report_to_json(const EvalReport& r);

struct TableRow {
  std::string method;
  bool has_stats = true;
  double top95_mean = 0, top95_std = 0;
  double top75_mean = 0, top75_std = 0;
  double top50_mean = 0, top50_std = 0;
  bool has_sr = true;
  double sr = 0;
};

/// Aligned plain-text table: Method | mTRE(mm) top 95/75/50% | SR(%).
std::string render_report_table(const std::vector<TableRow>& rows);
TableRow report_to_row(const EvalReport& r);

struct BatchEvalConfig {
  int n_cases = 30;
  PoseDistribution test_dist;  // defaults: rot 20 deg, trans 30/30/60 mm
  uint64_t seed = 0;
  int net_iters = 100;
  double net_lr = 1e-2;
  PoseSearchConfig search;
  int threads = 0;

  BatchEvalConfig() {
    test_dist.rot_std_deg = Eigen::Vector3d(20, 20, 20);
    test_dist.trans_std_mm = Eigen::Vector3d(30, 30, 60);
  }
};

/// Shared-fixture evaluation: the same per-case (theta_t, theta_0, I_x) set is
/// used for every requested method. Methods: initial | cmaes | net | pipeline.
/// Failed cases enter as +inf TRE.
std::vector<EvalReport> batch_evaluate(const Volume& v, const ProjectionGeometry& geom,
                                       const ParamSet* params, const EncoderConfig* enc_cfg,
                                       const BatchEvalConfig& cfg,
                                       const std::vector<std::string>& methods);

/// Fixed image in gray, DRR edges (Sobel magnitude over its 90th percentile)
/// in pure green.
ImageRGB overlay_edges(const Image2D& fixed, const Image2D& drr);

}  // namespace radreg
