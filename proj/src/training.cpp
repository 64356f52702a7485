#include "radreg/training.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"
#include "radreg/rng.hpp"
#include "radreg/similarity.hpp"

namespace radreg {

std::string train_config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["iterations"] = c.iterations;
  j["lr_min"] = c.lr_min;
  j["lr_max"] = c.lr_max;
  j["cycle_steps"] = c.cycle_steps;
  j["momentum"] = c.momentum;
  j["rot_std_deg"] = {c.pose_dist.rot_std_deg.x(), c.pose_dist.rot_std_deg.y(),
                      c.pose_dist.rot_std_deg.z()};
  j["trans_std_mm"] = {c.pose_dist.trans_std_mm.x(), c.pose_dist.trans_std_mm.y(),
                       c.pose_dist.trans_std_mm.z()};
  j["fd_step"] = c.fd_step;
  j["epsilon"] = c.epsilon;
  j["trans_scale_mm"] = c.trans_scale_mm;
  j["seed"] = c.seed;
  j["jitter_gain_std"] = c.jitter_gain_std;
  j["jitter_noise_std"] = c.jitter_noise_std;
  j["checkpoint_every"] = c.checkpoint_every;
  j["grad_clip"] = c.grad_clip;
  return j.dump();
}

TrainConfig train_config_from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  TrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.lr_min = j.value("lr_min", c.lr_min);
  c.lr_max = j.value("lr_max", c.lr_max);
  c.cycle_steps = j.value("cycle_steps", c.cycle_steps);
  c.momentum = j.value("momentum", c.momentum);
  if (j.contains("rot_std_deg")) {
    for (int i = 0; i < 3; ++i) c.pose_dist.rot_std_deg[i] = j["rot_std_deg"].at(i).get<double>();
  }
  if (j.contains("trans_std_mm")) {
    for (int i = 0; i < 3; ++i) c.pose_dist.trans_std_mm[i] = j["trans_std_mm"].at(i).get<double>();
  }
  c.fd_step = j.value("fd_step", c.fd_step);
  c.epsilon = j.value("epsilon", c.epsilon);
  c.trans_scale_mm = j.value("trans_scale_mm", c.trans_scale_mm);
  c.seed = j.value("seed", c.seed);
  c.jitter_gain_std = j.value("jitter_gain_std", c.jitter_gain_std);
  c.jitter_noise_std = j.value("jitter_noise_std", c.jitter_noise_std);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  c.grad_clip = j.value("grad_clip", c.grad_clip);
  if (c.lr_min > c.lr_max || c.iterations <= 0 || !(c.fd_step > 0) || c.cycle_steps <= 0) {
    throw std::invalid_argument("train config: invalid field values");
  }
  return c;
}

double cyclic_lr(int step, double lr_min, double lr_max, int cycle_steps) {
  if (cycle_steps <= 0) throw std::invalid_argument("cyclic_lr: cycle_steps must be positive");
  const int period = 2 * cycle_steps;
  const int phase = ((step % period) + period) % period;
  const double frac = phase <= cycle_steps ? double(phase) / cycle_steps
                                           : double(period - phase) / cycle_steps;
  return lr_min + (lr_max - lr_min) * frac;
}

int ncc_node(Tape& tape, int a, int b) {
  // mean(standardize(a) * standardize(b)) equals the population NCC; the
  // standardize eps keeps degenerate (constant) inputs finite with value ~0
  const int za = tape.standardize(a, 1e-12);
  const int zb = tape.standardize(b, 1e-12);
  return tape.mean(tape.mul(za, zb));
}

double decomp_loss(const Tensor& g_x, const Tensor& g_m, const Tensor& l_x, const Tensor& l_m,
                   double epsilon) {
  const auto flat = [](const Tensor& t) { return std::span<const float>(t.data); };
  const double n_g = ncc(flat(g_x), flat(g_m));
  const double n_l = ncc(flat(l_x), flat(l_m));
  return n_g / (n_l + epsilon);
}

int decomp_loss_node(Tape& tape, const GldNodes& gld, double epsilon) {
  const int n_g = ncc_node(tape, gld.g_x, gld.g_m);
  const int n_l = ncc_node(tape, gld.l_x, gld.l_m);
  return tape.div(n_g, tape.add_scalar(n_l, epsilon));
}

namespace {

double part_loss(const Eigen::Vector3d& n, const Eigen::Vector3d& g) {
  const double nn = n.norm(), ng = g.norm();
  const Eigen::Vector3d nh = nn > 0 ? (n / nn).eval() : Eigen::Vector3d::Zero();
  const Eigen::Vector3d gh = ng > 0 ? (g / ng).eval() : Eigen::Vector3d::Zero();
  return (nh - gh).squaredNorm();
}

Eigen::Vector3d part_grad(const Eigen::Vector3d& n, const Eigen::Vector3d& g) {
  const double nn = n.norm(), ng = g.norm();
  if (nn <= 0) return Eigen::Vector3d::Zero();
  const Eigen::Vector3d nh = n / nn;
  const Eigen::Vector3d gh = ng > 0 ? (g / ng).eval() : Eigen::Vector3d::Zero();
  // d|n_hat - g_hat|^2 / dn = (2/|n|) (I - n_hat n_hat^T)(n_hat - g_hat)
  const Eigen::Vector3d d = nh - gh;
  return (2.0 / nn) * (d - nh * nh.dot(d));
}

}  // namespace

double appro_loss(const TangentVec& grad_net, const TangentVec& grad_geo) {
  if (!grad_net.omega.allFinite() || !grad_net.nu.allFinite() || !grad_geo.omega.allFinite() ||
      !grad_geo.nu.allFinite()) {
    throw std::invalid_argument("appro_loss: non-finite gradients");
  }
  return part_loss(grad_net.omega, grad_geo.omega) + part_loss(grad_net.nu, grad_geo.nu);
}

TangentVec appro_loss_grad_net(const TangentVec& grad_net, const TangentVec& grad_geo) {
  TangentVec g;
  g.omega = part_grad(grad_net.omega, grad_geo.omega);
  g.nu = part_grad(grad_net.nu, grad_geo.nu);
  return g;
}

double total_loss(double l_appro, double l_decomp, double log_sigma1, double log_sigma2) {
  const double s1 = std::exp(log_sigma1), s2 = std::exp(log_sigma2);
  return l_appro / (2 * s1 * s1) + l_decomp / (2 * s2 * s2) + log_sigma1 + log_sigma2;
}

std::string step_metrics_to_json(const StepMetrics& m) {
  nlohmann::json j;
  j["iter"] = m.iter;
  j["l_appro"] = m.l_appro;
  j["l_decomp"] = m.l_decomp;
  j["l_total"] = m.l_total;
  j["lr"] = m.lr;
  j["sigma1"] = m.sigma1;
  j["sigma2"] = m.sigma2;
  if (m.skipped) {
    j["skipped"] = true;
    j["diagnostic"] = m.diagnostic;
  }
  return j.dump();
}

namespace {

void apply_jitter(Image2D* img, double gain_std, double noise_std, Rng* rng) {
  if (gain_std <= 0 && noise_std <= 0) return;
  const double gain = 1.0 + gain_std * rng->next_gaussian();
  double noise_abs = 0.0;
  if (noise_std > 0) {
    double mu = 0.0, var = 0.0;
    for (float v : img->data) mu += v;
    mu /= static_cast<double>(img->size());
    for (float v : img->data) var += (v - mu) * (v - mu);
    var /= static_cast<double>(img->size());
    noise_abs = noise_std * std::sqrt(var);
  }
  for (float& v : img->data) {
    double x = gain * v;
    if (noise_abs > 0) x += noise_abs * rng->next_gaussian();
    v = static_cast<float>(x);
  }
}

// parameter gradients of net_loss at pose * exp(delta), zeros for params the
// loss does not reach
std::vector<Tensor> net_param_grads(const Volume& v, const Pose& pose, const TangentVec& delta,
                                    const Image2D& ix, const ProjectionGeometry& geom,
                                    const ParamSet& params, const EncoderConfig& enc_cfg,
                                    int threads) {
  const Pose p = compose(pose, exp_map(delta));
  const Image2D im = project(v, p, geom, threads);
  EncoderForward f = encoder_forward(ix, im, params, enc_cfg);
  f.tape.backward(f.se.net_loss);
  std::vector<Tensor> out;
  out.reserve(params.count());
  for (size_t i = 0; i < params.count(); ++i) {
    const int node = f.param_nodes[i];
    out.push_back(f.tape.has_grad(node) ? f.tape.grad(node) : Tensor(params.values[i].shape));
  }
  return out;
}

}  // namespace

StepMetrics train_step(TrainState& state, const Volume& v, const ProjectionGeometry& geom,
                       const EncoderConfig& enc_cfg, const TrainConfig& cfg) {
  StepMetrics m;
  m.iter = state.step;
  m.lr = cyclic_lr(state.step, cfg.lr_min, cfg.lr_max, cfg.cycle_steps);

  // all randomness of step i derives from (seed, i)
  Rng rng(Rng::derive(cfg.seed, static_cast<uint64_t>(state.step)));
  const Pose theta_t = sample_pose(cfg.pose_dist, rng.next_u64());
  const Pose theta = sample_pose(cfg.pose_dist, rng.next_u64());

  try {
    Image2D ix = project(v, theta_t, geom, cfg.threads);
    apply_jitter(&ix, cfg.jitter_gain_std, cfg.jitter_noise_std, &rng);

    Image2D im;
    PoseJacobianImage jac;
    project_with_jacobian(v, theta, geom, &im, &jac, cfg.threads);

    EncoderForward f = encoder_forward(ix, im, state.params, enc_cfg);
    const int decomp_node = decomp_loss_node(f.tape, f.gld, cfg.epsilon);
    m.l_decomp = f.tape.value(decomp_node).scalar();
    if (!std::isfinite(f.tape.value(f.se.net_loss).scalar()) || !std::isfinite(m.l_decomp)) {
      // unbounded exp in the coupling layers can overflow for unlucky poses;
      // abort the step, the loop skips and logs it
      throw NumericFailure("train_step: non-finite encoder loss");
    }

    // grad of net_loss w.r.t. the pose, via the moving image
    f.tape.backward(f.se.net_loss);
    TangentVec grad_net;
    if (f.tape.has_grad(f.input_im)) {
      const Tensor& gim = f.tape.grad(f.input_im);
      for (int k = 0; k < 6; ++k) {
        double acc = 0.0;
        for (size_t i = 0; i < gim.size(); ++i) acc += double(gim.data[i]) * jac.channel[k].data[i];
        grad_net.coeff(k) = acc;
      }
    }
    if (!grad_net.omega.allFinite() || !grad_net.nu.allFinite()) {
      throw NumericFailure("train_step: non-finite pose gradient");
    }
    const TangentVec grad_geo = geodesic_grad(theta, theta_t, cfg.trans_scale_mm);
    m.l_appro = appro_loss(grad_net, grad_geo);

    // d l_appro / d w: chain the closed-form d l_appro / d grad_net through
    // the central-difference mixed second derivative
    const TangentVec chain = appro_loss_grad_net(grad_net, grad_geo);
    std::vector<Tensor> appro_grads;
    const double chain_norm = chain.norm();
    if (chain_norm > 0) {
      appro_grads = mixed_second_grad_fd(
          [&](const TangentVec& delta) {
            return net_param_grads(v, theta, delta, ix, geom, state.params, enc_cfg, cfg.threads);
          },
          TangentVec::zero(), chain, cfg.fd_step);
    }

    // d l_decomp / d w from the same tape
    f.tape.backward(decomp_node);

    const double log_s1 = state.params.get("log_sigma1").scalar();
    const double log_s2 = state.params.get("log_sigma2").scalar();
    m.sigma1 = std::exp(log_s1);
    m.sigma2 = std::exp(log_s2);
    m.l_total = total_loss(m.l_appro, m.l_decomp, log_s1, log_s2);
    const double w1 = 1.0 / (2.0 * m.sigma1 * m.sigma1);
    const double w2 = 1.0 / (2.0 * m.sigma2 * m.sigma2);

    const int i_s1 = state.params.index("log_sigma1");
    const int i_s2 = state.params.index("log_sigma2");
    std::vector<Tensor> grads;
    grads.reserve(state.params.count());
    double sq_norm = 0.0;
    for (size_t i = 0; i < state.params.count(); ++i) {
      Tensor gt(state.params.values[i].shape);
      for (size_t k = 0; k < gt.size(); ++k) {
        double g = 0.0;
        if (!appro_grads.empty()) g += w1 * appro_grads[i].data[k];
        if (f.tape.has_grad(f.param_nodes[i])) {
          g += w2 * f.tape.grad(f.param_nodes[i]).data[k];
        }
        if (static_cast<int>(i) == i_s1) g += -m.l_appro / (m.sigma1 * m.sigma1) + 1.0;
        if (static_cast<int>(i) == i_s2) g += -m.l_decomp / (m.sigma2 * m.sigma2) + 1.0;
        gt.data[k] = static_cast<float>(g);
        sq_norm += g * g;
      }
      grads.push_back(std::move(gt));
    }
    double clip_scale = 1.0;
    if (cfg.grad_clip > 0 && std::sqrt(sq_norm) > cfg.grad_clip) {
      clip_scale = cfg.grad_clip / std::sqrt(sq_norm);
    }
    for (size_t i = 0; i < state.params.count(); ++i) {
      Tensor& w = state.params.values[i];
      Tensor& vel = state.velocity[i];
      for (size_t k = 0; k < w.size(); ++k) {
        const double vnew = cfg.momentum * vel.data[k] + clip_scale * grads[i].data[k];
        vel.data[k] = static_cast<float>(vnew);
        w.data[k] = static_cast<float>(w.data[k] - m.lr * vnew);
      }
    }
    if (!state.params.all_finite()) {
      throw NumericFailure("train_step: parameters became non-finite");
    }
  } catch (const NumericFailure& e) {
    m.skipped = true;
    m.diagnostic = e.what();
  }
  ++state.step;
  return m;
}

void train_loop(TrainState& state, const Volume& v, const ProjectionGeometry& geom,
                const EncoderConfig& enc_cfg, const TrainConfig& cfg, std::ostream* metrics_log,
                const std::string& checkpoint_path) {
  int consecutive_skips = 0;
  for (int i = 0; i < cfg.iterations; ++i) {
    const StepMetrics m = train_step(state, v, geom, enc_cfg, cfg);
    if (metrics_log) (*metrics_log) << step_metrics_to_json(m) << "\n";
    if (m.skipped) {
      if (++consecutive_skips >= cfg.max_consecutive_skips) {
        throw std::runtime_error("train_loop: " + std::to_string(consecutive_skips) +
                                 " consecutive failed steps; last: " + m.diagnostic);
      }
    } else {
      consecutive_skips = 0;
    }
    if (!checkpoint_path.empty() && cfg.checkpoint_every > 0 &&
        (i + 1) % cfg.checkpoint_every == 0) {
      save_params(state.params, checkpoint_path);
    }
  }
  if (!checkpoint_path.empty()) save_params(state.params, checkpoint_path);
}

}  // namespace radreg
