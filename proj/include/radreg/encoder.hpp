#pragma once

#include <string>
#include <vector>

#include "radreg/image.hpp"
#include "radreg/projector.hpp"
#include "radreg/se3.hpp"
#include "radreg/tape.hpp"
#include "radreg/volume.hpp"

namespace radreg {

/// Ordered, named parameter tensors. Checkpoints serialize in this order.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> values;

  int add(const std::string& name, Tensor t) {
    names.push_back(name);
    values.push_back(std::move(t));
    return static_cast<int>(values.size()) - 1;
  }
  int index(const std::string& name) const;
  Tensor& get(const std::string& name) { return values[index(name)]; }
  const Tensor& get(const std::string& name) const { return values[index(name)]; }
  size_t count() const { return values.size(); }
  bool all_finite() const;
};

/// JSON header line + raw f32le payload concatenated in header order.
void save_params(const ParamSet& p, const std::string& path);
ParamSet load_params(const std::string& path);

struct EncoderConfig {
  int input_hw = 64;       // square input, divisible by 4
  int channels = 16;       // SFE/GLD channel width, even
  int d_se = 16;           // similarity embedding size
  int coupling_layers = 2; // INN depth
  double decomp_epsilon = 1.01;
  /// Test configuration: bypass the global branch's biases and activations so
  /// it is an exactly linear operator.
  bool linear_global_branch = false;
};

std::string encoder_config_to_json(const EncoderConfig& c);
EncoderConfig encoder_config_from_json(const std::string& json_text);

/// Random initialization; includes log_sigma1/log_sigma2 (Eq. of the
/// uncertainty weighting) initialized to 0.
ParamSet init_encoder_params(const EncoderConfig& cfg, uint64_t seed);

int tensor_node_from_image(Tape& tape, const Image2D& img);

/// Shared shallow encoder (two Poolformer blocks with average-pool token
/// mixers and a global-average-pool channel gate); downsamples by 4.
int sfe_forward(Tape& tape, int img_node, const std::vector<int>& param_nodes,
                const ParamSet& params, const EncoderConfig& cfg);

struct GldNodes {
  int g_x, g_m;    // global-branch outputs per image
  int l_x, l_m;    // local-branch outputs per image
  int phi_g, phi_l;  // elementwise squared differences
};

/// Global branch: residual fast-Fourier-convolution block. Local branch:
/// invertible affine-coupling stack.
GldNodes gld_forward(Tape& tape, int phi_x, int phi_m, const std::vector<int>& param_nodes,
                     const ParamSet& params, const EncoderConfig& cfg);

/// Forward of the local (INN) branch on a plain tensor, off-tape.
Tensor inn_forward_eval(const Tensor& x, const ParamSet& params, const EncoderConfig& cfg);
/// Closed-form inverse of the coupling stack.
Tensor inn_inverse(const Tensor& y, const ParamSet& params, const EncoderConfig& cfg);

struct SeNodes {
  int vec_g, vec_l;  // d_se vectors
  int net_loss;      // <sigmoid(vec_g), sigmoid(vec_l)>
};

SeNodes se_similarity(Tape& tape, int phi_g, int phi_l, const std::vector<int>& param_nodes,
                      const ParamSet& params, const EncoderConfig& cfg);

/// Full forward pass of the encoder over a fixed/moving image pair.
struct EncoderForward {
  Tape tape;
  int input_ix = -1, input_im = -1;
  std::vector<int> param_nodes;  // one leaf per ParamSet entry, same order
  int phi_sx = -1, phi_sm = -1;
  GldNodes gld{};
  SeNodes se{};
};

EncoderForward encoder_forward(const Image2D& ix, const Image2D& im, const ParamSet& params,
                               const EncoderConfig& cfg);

struct PoseGradResult {
  TangentVec grad;  // d net_loss / d pose (right-perturbation)
  double net_loss = 0.0;
  Image2D moving;
};

/// Renders the moving image at `pose`, runs the encoder against `ix`, and
/// chains d net_loss / d I_m into the projector Jacobian.
PoseGradResult encoder_pose_gradient(const Volume& v, const Pose& pose, const Image2D& ix,
                                     const ProjectionGeometry& geom, const ParamSet& params,
                                     const EncoderConfig& cfg, int threads = 0);

}  // namespace radreg
