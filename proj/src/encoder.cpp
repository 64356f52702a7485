#include "radreg/encoder.hpp"

#include <cmath>
#include <fstream>

#include "json.hpp"
#include "radreg/rng.hpp"

namespace radreg {

int ParamSet::index(const std::string& name) const {
  for (size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  throw std::invalid_argument("ParamSet: unknown parameter " + name);
}

bool ParamSet::all_finite() const {
  for (const Tensor& t : values) {
    if (!t.all_finite()) return false;
  }
  return true;
}

void save_params(const ParamSet& p, const std::string& path) {
  nlohmann::json j;
  j["names"] = p.names;
  std::vector<std::vector<int>> shapes;
  for (const Tensor& t : p.values) shapes.push_back(t.shape);
  j["shapes"] = shapes;
  std::ofstream f(path, std::ios::binary);
  f << j.dump() << "\n";
  for (const Tensor& t : p.values) {
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  if (!f) throw std::runtime_error("save_params: write failed for " + path);
}

ParamSet load_params(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CorruptFileError("load_params: cannot open " + path);
  std::string header;
  std::getline(f, header);
  const auto j = nlohmann::json::parse(header);
  ParamSet p;
  const auto names = j.at("names").get<std::vector<std::string>>();
  const auto shapes = j.at("shapes").get<std::vector<std::vector<int>>>();
  if (names.size() != shapes.size()) throw CorruptFileError("load_params: corrupt header");
  for (size_t i = 0; i < names.size(); ++i) {
    Tensor t(shapes[i]);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(float)));
    if (!f) throw CorruptFileError("load_params: truncated payload in " + path);
    p.add(names[i], std::move(t));
  }
  return p;
}

std::string encoder_config_to_json(const EncoderConfig& c) {
  nlohmann::json j;
  j["input_hw"] = c.input_hw;
  j["channels"] = c.channels;
  j["d_se"] = c.d_se;
  j["coupling_layers"] = c.coupling_layers;
  j["decomp_epsilon"] = c.decomp_epsilon;
  return j.dump();
}

EncoderConfig encoder_config_from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  EncoderConfig c;
  c.input_hw = j.value("input_hw", c.input_hw);
  c.channels = j.value("channels", c.channels);
  c.d_se = j.value("d_se", c.d_se);
  c.coupling_layers = j.value("coupling_layers", c.coupling_layers);
  c.decomp_epsilon = j.value("decomp_epsilon", c.decomp_epsilon);
  if (c.input_hw % 4 != 0 || c.channels % 2 != 0 || c.channels < 2 || c.d_se < 1 ||
      c.coupling_layers < 1) {
    throw std::invalid_argument("encoder config: invalid field values");
  }
  return c;
}

namespace {

// SE MLP output widths; the input width equals the pooled channel count. Five
// fully connected layers, ReLU between, linear last.
std::vector<int> se_layer_widths(const EncoderConfig& cfg) {
  return {cfg.channels, 64, 64, 32, cfg.d_se};
}

Tensor gaussian_tensor(std::vector<int> shape, double std_dev, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& v : t.data) v = static_cast<float>(std_dev * rng.next_gaussian());
  return t;
}

const char* kCouplingSubnets[4] = {"s1", "t1", "s2", "t2"};

}  // namespace

ParamSet init_encoder_params(const EncoderConfig& cfg, uint64_t seed) {
  Rng rng(seed);
  ParamSet p;
  const int C = cfg.channels;
  const int Ch = C / 2;
  const auto he = [](int fan_in) { return std::sqrt(2.0 / fan_in); };

  p.add("sfe.embed.w", gaussian_tensor({C, 1, 3, 3}, he(9), rng));
  p.add("sfe.embed.b", Tensor({C}));
  for (int i = 0; i < 2; ++i) {
    const std::string b = "sfe.b" + std::to_string(i);
    p.add(b + ".n1.g", Tensor({C}, 1.0f));
    p.add(b + ".n1.b", Tensor({C}));
    p.add(b + ".n2.g", Tensor({C}, 1.0f));
    p.add(b + ".n2.b", Tensor({C}));
    p.add(b + ".mlp.w1", gaussian_tensor({2 * C, C, 1, 1}, he(C), rng));
    p.add(b + ".mlp.b1", Tensor({2 * C}));
    p.add(b + ".mlp.w2", gaussian_tensor({C, 2 * C, 1, 1}, he(2 * C), rng));
    p.add(b + ".mlp.b2", Tensor({C}));
  }
  p.add("sfe.gate.w", gaussian_tensor({C, C}, 0.1 * he(C), rng));
  p.add("sfe.gate.b", Tensor({C, 1}));

  p.add("gld.g.w_ll", gaussian_tensor({Ch, Ch, 3, 3}, he(9 * Ch), rng));
  p.add("gld.g.b_ll", Tensor({Ch}));
  p.add("gld.g.w_gl", gaussian_tensor({Ch, Ch, 3, 3}, he(9 * Ch), rng));
  p.add("gld.g.b_gl", Tensor({Ch}));
  p.add("gld.g.w_lg", gaussian_tensor({Ch, Ch, 3, 3}, he(9 * Ch), rng));
  p.add("gld.g.b_lg", Tensor({Ch}));
  p.add("gld.g.w_spec", gaussian_tensor({2 * Ch, 2 * Ch, 1, 1}, he(2 * Ch), rng));
  p.add("gld.g.b_spec", Tensor({2 * Ch}));

  for (int j = 0; j < cfg.coupling_layers; ++j) {
    for (const char* sub : kCouplingSubnets) {
      const std::string base = "gld.l.c" + std::to_string(j) + "." + sub;
      p.add(base + ".w1", gaussian_tensor({Ch, Ch, 3, 3}, he(9 * Ch), rng));
      p.add(base + ".b1", Tensor({Ch}));
      // zero-initialized second conv: every coupling starts as the identity
      p.add(base + ".w2", Tensor({Ch, Ch, 3, 3}));
      p.add(base + ".b2", Tensor({Ch}));
    }
  }

  for (const char* br : {"g", "l"}) {
    const auto widths = se_layer_widths(cfg);
    int in = cfg.channels;
    for (size_t k = 0; k < widths.size(); ++k) {
      const std::string base = std::string("se.") + br + ".l" + std::to_string(k);
      p.add(base + ".w", gaussian_tensor({widths[k], in}, he(in), rng));
      p.add(base + ".b", Tensor({widths[k], 1}));
      in = widths[k];
    }
  }

  p.add("log_sigma1", Tensor({1}));
  p.add("log_sigma2", Tensor({1}));
  return p;
}

int tensor_node_from_image(Tape& tape, const Image2D& img) {
  Tensor t({1, img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), t.data.begin());
  return tape.leaf(std::move(t));
}

namespace {

struct Ctx {
  Tape& tape;
  const std::vector<int>& ids;
  const ParamSet& params;

  int operator()(const std::string& name) const { return ids[params.index(name)]; }
};

int poolformer_block(Ctx ctx, int x, const std::string& base) {
  Tape& t = ctx.tape;
  // token mixer: avgpool3x3 - identity, on the channel-normed input
  const int n1 = t.channel_norm(x, ctx(base + ".n1.g"), ctx(base + ".n1.b"));
  const int mix = t.sub(t.avg_pool2d(n1, 3, 1, 1), n1);
  x = t.add(x, mix);
  // channel MLP (1x1 convs)
  const int n2 = t.channel_norm(x, ctx(base + ".n2.g"), ctx(base + ".n2.b"));
  int m = t.conv2d(n2, ctx(base + ".mlp.w1"), ctx(base + ".mlp.b1"));
  m = t.relu(m);
  m = t.conv2d(m, ctx(base + ".mlp.w2"), ctx(base + ".mlp.b2"));
  return t.add(x, m);
}

int coupling_subnet(Ctx ctx, int x, const std::string& base) {
  Tape& t = ctx.tape;
  int h = t.conv2d(x, ctx(base + ".w1"), ctx(base + ".b1"));
  h = t.relu(h);
  return t.conv2d(h, ctx(base + ".w2"), ctx(base + ".b2"));
}

// y1 = c1 * exp(s1(c2)) + t1(c2); y2 = c2 * exp(s2(y1)) + t2(y1)
int coupling_layer(Ctx ctx, int x, const std::string& base) {
  Tape& t = ctx.tape;
  auto [c1, c2] = t.split_channels(x);
  const int y1 = t.add(t.mul(c1, t.exp_(coupling_subnet(ctx, c2, base + ".s1"))),
                       coupling_subnet(ctx, c2, base + ".t1"));
  const int y2 = t.add(t.mul(c2, t.exp_(coupling_subnet(ctx, y1, base + ".s2"))),
                       coupling_subnet(ctx, y1, base + ".t2"));
  return t.concat_channels(y1, y2);
}

int global_branch(Ctx ctx, int x, bool linear) {
  Tape& t = ctx.tape;
  auto [xl, xg] = t.split_channels(x);
  const int bias_ll = linear ? -1 : ctx("gld.g.b_ll");
  const int bias_gl = linear ? -1 : ctx("gld.g.b_gl");
  const int bias_lg = linear ? -1 : ctx("gld.g.b_lg");
  const int bias_spec = linear ? -1 : ctx("gld.g.b_spec");
  int yl = t.add(t.conv2d(xl, ctx("gld.g.w_ll"), bias_ll),
                 t.conv2d(xg, ctx("gld.g.w_gl"), bias_gl));
  int spec = t.irfft2(t.conv2d(t.rfft2(xg), ctx("gld.g.w_spec"), bias_spec));
  int yg = t.add(spec, t.conv2d(xl, ctx("gld.g.w_lg"), bias_lg));
  if (!linear) {
    yl = t.relu(yl);
    yg = t.relu(yg);
  }
  return t.add(t.concat_channels(yl, yg), x);  // residual
}

int local_branch(Ctx ctx, int x, int coupling_layers) {
  int h = x;
  for (int j = 0; j < coupling_layers; ++j) {
    h = coupling_layer(ctx, h, "gld.l.c" + std::to_string(j));
  }
  return h;
}

int se_mlp(Ctx ctx, int pooled, const std::string& branch, const EncoderConfig& cfg) {
  Tape& t = ctx.tape;
  const auto widths = se_layer_widths(cfg);
  int h = pooled;  // (C,1)
  for (size_t k = 0; k < widths.size(); ++k) {
    const std::string base = "se." + branch + ".l" + std::to_string(k);
    h = t.add(t.matmul(ctx(base + ".w"), h), ctx(base + ".b"));
    if (k + 1 < widths.size()) h = t.relu(h);
  }
  return h;
}

}  // namespace

int sfe_forward(Tape& tape, int img_node, const std::vector<int>& param_nodes,
                const ParamSet& params, const EncoderConfig& cfg) {
  const Tensor& in = tape.value(img_node);
  if (in.shape.size() != 3 || in.shape[1] % 4 != 0 || in.shape[2] % 4 != 0) {
    throw std::invalid_argument("sfe_forward: input dims must be divisible by 4");
  }
  Ctx ctx{tape, param_nodes, params};
  int h = tape.standardize(img_node);
  h = tape.conv2d(h, ctx("sfe.embed.w"), ctx("sfe.embed.b"));
  h = tape.avg_pool2d(h, 2, 2, 0);
  h = poolformer_block(ctx, h, "sfe.b0");
  h = tape.avg_pool2d(h, 2, 2, 0);
  h = poolformer_block(ctx, h, "sfe.b1");
  // "Global" gating: channel scale from the pooled representation
  const int gate = tape.sigmoid(
      tape.add(tape.matmul(ctx("sfe.gate.w"), tape.global_avg_pool(h)), ctx("sfe.gate.b")));
  return tape.channel_scale(h, gate);
}

GldNodes gld_forward(Tape& tape, int phi_x, int phi_m, const std::vector<int>& param_nodes,
                     const ParamSet& params, const EncoderConfig& cfg) {
  if (tape.value(phi_x).shape != tape.value(phi_m).shape) {
    throw std::invalid_argument("gld_forward: feature shapes differ");
  }
  Ctx ctx{tape, param_nodes, params};
  GldNodes out;
  out.g_x = global_branch(ctx, phi_x, cfg.linear_global_branch);
  out.g_m = global_branch(ctx, phi_m, cfg.linear_global_branch);
  out.l_x = local_branch(ctx, phi_x, cfg.coupling_layers);
  out.l_m = local_branch(ctx, phi_m, cfg.coupling_layers);
  out.phi_g = tape.square(tape.sub(out.g_x, out.g_m));
  out.phi_l = tape.square(tape.sub(out.l_x, out.l_m));
  return out;
}

Tensor inn_forward_eval(const Tensor& x, const ParamSet& params, const EncoderConfig& cfg) {
  Tape tape;
  std::vector<int> ids;
  ids.reserve(params.count());
  for (const Tensor& t : params.values) ids.push_back(tape.leaf(t));
  Ctx ctx{tape, ids, params};
  const int out = local_branch(ctx, tape.leaf(x), cfg.coupling_layers);
  return tape.value(out);
}

Tensor inn_inverse(const Tensor& y, const ParamSet& params, const EncoderConfig& cfg) {
  Tensor cur = y;
  const int C = cur.shape.at(0);
  const int Ch = C / 2;
  const int HW = cur.shape.at(1) * cur.shape.at(2);
  const auto subnet = [&](const Tensor& in, const std::string& base) {
    Tape tape;
    std::vector<int> ids;
    for (const Tensor& t : params.values) ids.push_back(tape.leaf(t));
    Ctx ctx{tape, ids, params};
    return tape.value(coupling_subnet(ctx, tape.leaf(in), base));
  };
  const auto half = [&](const Tensor& t, int c0) {
    Tensor out({Ch, t.shape[1], t.shape[2]});
    std::copy(t.data.begin() + static_cast<long>(c0) * HW,
              t.data.begin() + static_cast<long>(c0 + Ch) * HW, out.data.begin());
    return out;
  };
  for (int j = cfg.coupling_layers - 1; j >= 0; --j) {
    const std::string base = "gld.l.c" + std::to_string(j);
    const Tensor y1 = half(cur, 0);
    const Tensor y2 = half(cur, Ch);
    // invert second half-update: c2 = (y2 - t2(y1)) * exp(-s2(y1))
    const Tensor s2 = subnet(y1, base + ".s2");
    const Tensor t2 = subnet(y1, base + ".t2");
    Tensor c2 = y2;
    for (size_t i = 0; i < c2.size(); ++i) {
      c2.data[i] = (y2.data[i] - t2.data[i]) * std::exp(-s2.data[i]);
    }
    // invert first half-update: c1 = (y1 - t1(c2)) * exp(-s1(c2))
    const Tensor s1 = subnet(c2, base + ".s1");
    const Tensor t1 = subnet(c2, base + ".t1");
    Tensor c1 = y1;
    for (size_t i = 0; i < c1.size(); ++i) {
      c1.data[i] = (y1.data[i] - t1.data[i]) * std::exp(-s1.data[i]);
    }
    std::copy(c1.data.begin(), c1.data.end(), cur.data.begin());
    std::copy(c2.data.begin(), c2.data.end(), cur.data.begin() + static_cast<long>(Ch) * HW);
  }
  return cur;
}

SeNodes se_similarity(Tape& tape, int phi_g, int phi_l, const std::vector<int>& param_nodes,
                      const ParamSet& params, const EncoderConfig& cfg) {
  Ctx ctx{tape, param_nodes, params};
  SeNodes out;
  out.vec_g = se_mlp(ctx, tape.global_avg_pool(phi_g), "g", cfg);
  out.vec_l = se_mlp(ctx, tape.global_avg_pool(phi_l), "l", cfg);
  out.net_loss = tape.dot(tape.sigmoid(out.vec_g), tape.sigmoid(out.vec_l));
  return out;
}

EncoderForward encoder_forward(const Image2D& ix, const Image2D& im, const ParamSet& params,
                               const EncoderConfig& cfg) {
  if (ix.height != im.height || ix.width != im.width) {
    throw std::invalid_argument("encoder_forward: image dims differ");
  }
  EncoderForward f;
  f.param_nodes.reserve(params.count());
  for (const Tensor& t : params.values) f.param_nodes.push_back(f.tape.leaf(t));
  f.input_ix = tensor_node_from_image(f.tape, ix);
  f.input_im = tensor_node_from_image(f.tape, im);
  f.phi_sx = sfe_forward(f.tape, f.input_ix, f.param_nodes, params, cfg);
  f.phi_sm = sfe_forward(f.tape, f.input_im, f.param_nodes, params, cfg);
  f.gld = gld_forward(f.tape, f.phi_sx, f.phi_sm, f.param_nodes, params, cfg);
  f.se = se_similarity(f.tape, f.gld.phi_g, f.gld.phi_l, f.param_nodes, params, cfg);
  return f;
}

PoseGradResult encoder_pose_gradient(const Volume& v, const Pose& pose, const Image2D& ix,
                                     const ProjectionGeometry& geom, const ParamSet& params,
                                     const EncoderConfig& cfg, int threads) {
  PoseGradResult res;
  PoseJacobianImage jac;
  project_with_jacobian(v, pose, geom, &res.moving, &jac, threads);
  EncoderForward f = encoder_forward(ix, res.moving, params, cfg);
  res.net_loss = f.tape.value(f.se.net_loss).scalar();
  f.tape.backward(f.se.net_loss);
  if (!f.tape.has_grad(f.input_im)) {
    return res;  // disconnected input: zero gradient
  }
  const Tensor& gim = f.tape.grad(f.input_im);
  for (int k = 0; k < 6; ++k) {
    double acc = 0.0;
    const Image2D& jk = jac.channel[k];
    for (size_t i = 0; i < jk.data.size(); ++i) acc += double(gim.data[i]) * jk.data[i];
    res.grad.coeff(k) = acc;
  }
  if (!std::isfinite(res.net_loss) || !res.grad.omega.allFinite() || !res.grad.nu.allFinite()) {
    throw NumericFailure("encoder_pose_gradient: non-finite result");
  }
  return res;
}

}  // namespace radreg
