#pragma once

#include <cstdint>
#include <ostream>
#include <string>

#include "radreg/encoder.hpp"
#include "radreg/projector.hpp"
#include "radreg/se3.hpp"
#include "radreg/tape.hpp"
#include "radreg/volume.hpp"

namespace radreg {

struct TrainConfig {
  int iterations = 2000;
  double lr_min = 1e-6;
  double lr_max = 1e-4;
  int cycle_steps = 100;
  double momentum = 0.9;
  PoseDistribution pose_dist;   // defaults below: rot 10 deg, trans 30/15/15 mm
  double fd_step = 1e-3;        // h for the mixed second derivative
  double epsilon = 1.01;        // decomposition-loss denominator offset
  double trans_scale_mm = 30.0; // geodesic translation scale
  uint64_t seed = 0;
  double jitter_gain_std = 0.1;   // multiplicative intensity jitter on I_x
  double jitter_noise_std = 0.0;  // additive noise, relative to image std
  int checkpoint_every = 0;       // 0 = only final
  int threads = 0;
  int max_consecutive_skips = 10;
  // global gradient-norm clip (0 disables). The appro pathway scales like
  // 1/|grad_net| and spikes when the pose gradient is nearly zero; unclipped
  // momentum then carries the weights into exp() overflow in the couplings.
  double grad_clip = 10.0;

  TrainConfig() {
    pose_dist.rot_std_deg = Eigen::Vector3d(10, 10, 10);
    pose_dist.trans_std_mm = Eigen::Vector3d(30, 15, 15);
  }
};

std::string train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const std::string& json_text);

/// Triangular schedule with period 2*cycle_steps.
double cyclic_lr(int step, double lr_min, double lr_max, int cycle_steps);

/// NCC over the flattened tensor pair, as a differentiable tape node.
int ncc_node(Tape& tape, int a, int b);

/// NCC(G_x, G_m) / (NCC(L_x, L_m) + epsilon), value form.
double decomp_loss(const Tensor& g_x, const Tensor& g_m, const Tensor& l_x, const Tensor& l_m,
                   double epsilon = 1.01);
/// Same, recorded on the tape.
int decomp_loss_node(Tape& tape, const GldNodes& gld, double epsilon);

/// Squared distance between direction-normalized gradients, rotational and
/// translational 3-parts handled separately; range [0, 8]. Invariant to
/// positive rescaling of either argument.
double appro_loss(const TangentVec& grad_net, const TangentVec& grad_geo);
/// Gradient of appro_loss with respect to its first argument (closed form).
TangentVec appro_loss_grad_net(const TangentVec& grad_net, const TangentVec& grad_geo);

/// L_appro / (2 sigma1^2) + L_decomp / (2 sigma2^2) + log sigma1 + log sigma2.
double total_loss(double l_appro, double l_decomp, double log_sigma1, double log_sigma2);

struct TrainState {
  ParamSet params;
  std::vector<Tensor> velocity;  // SGD momentum buffers, one per parameter
  int step = 0;

  explicit TrainState(ParamSet p) : params(std::move(p)) {
    velocity.reserve(params.count());
    for (const Tensor& t : params.values) velocity.emplace_back(t.shape);
  }
};

struct StepMetrics {
  int iter = 0;
  double l_appro = 0.0, l_decomp = 0.0, l_total = 0.0;
  double lr = 0.0, sigma1 = 1.0, sigma2 = 1.0;
  bool skipped = false;
  std::string diagnostic;
};

std::string step_metrics_to_json(const StepMetrics& m);

/// One online training step: sample a pose pair, render target/moving images,
/// form the uncertainty-weighted loss, update parameters by SGD with momentum
/// at the cyclic learning rate.
StepMetrics train_step(TrainState& state, const Volume& v, const ProjectionGeometry& geom,
                       const EncoderConfig& enc_cfg, const TrainConfig& cfg);

/// Runs cfg.iterations steps; writes one JSON object per line to metrics_log
/// (may be null). Throws after max_consecutive_skips failed steps in a row.
void train_loop(TrainState& state, const Volume& v, const ProjectionGeometry& geom,
                const EncoderConfig& enc_cfg, const TrainConfig& cfg, std::ostream* metrics_log,
                const std::string& checkpoint_path = "");

}  // namespace radreg
