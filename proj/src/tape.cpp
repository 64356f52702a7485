#include "radreg/tape.hpp"

#include <cmath>

namespace radreg {

namespace {

void require(bool cond, const std::string& what) {
  if (!cond) throw std::invalid_argument(what);
}

void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape == b.shape, std::string(op) + ": shape mismatch");
}

struct Chw {
  int c, h, w;
};
Chw chw(const Tensor& t, const char* op) {
  require(t.shape.size() == 3, std::string(op) + ": expected (C,H,W) tensor");
  return {t.shape[0], t.shape[1], t.shape[2]};
}

}  // namespace

bool Tensor::all_finite() const {
  for (float v : data) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

int Tape::push(Tensor value, std::function<void(Tape&)> adjoint) {
  values_.push_back(std::move(value));
  nodes_.push_back(Node{std::move(adjoint)});
  return static_cast<int>(values_.size()) - 1;
}

Tensor& Tape::grad_buf(int id) {
  if (!grad_set_[id]) {
    grads_[id] = Tensor(values_[id].shape);
    grad_set_[id] = 1;
  }
  return grads_[id];
}

const Tensor& Tape::grad(int id) const {
  require(id >= 0 && id < num_nodes() && grad_set_.size() == values_.size() && grad_set_[id],
          "grad: no gradient recorded for node");
  return grads_[id];
}

bool Tape::has_grad(int id) const {
  return id >= 0 && static_cast<size_t>(id) < grad_set_.size() && grad_set_[id];
}

int Tape::leaf(Tensor t) { return push(std::move(t), nullptr); }

// ---- elementwise ----

// Each op computes its value, pushes the node, then installs an adjoint
// closure that reads/accumulates gradients by node id.

int Tape::add(int a, int b) {
  same_shape(values_[a], values_[b], "add");
  Tensor out = values_[a];
  for (size_t i = 0; i < out.size(); ++i) out.data[i] += values_[b].data[i];
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, b, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i];
      gb.data[i] += g.data[i];
    }
  };
  return id;
}

int Tape::sub(int a, int b) {
  same_shape(values_[a], values_[b], "sub");
  Tensor out = values_[a];
  for (size_t i = 0; i < out.size(); ++i) out.data[i] -= values_[b].data[i];
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, b, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i];
      gb.data[i] -= g.data[i];
    }
  };
  return id;
}

int Tape::mul(int a, int b) {
  same_shape(values_[a], values_[b], "mul");
  Tensor out = values_[a];
  for (size_t i = 0; i < out.size(); ++i) out.data[i] *= values_[b].data[i];
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, b, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    const Tensor& va = t.values_[a];
    const Tensor& vb = t.values_[b];
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i] * vb.data[i];
      gb.data[i] += g.data[i] * va.data[i];
    }
  };
  return id;
}

int Tape::square(int a) {
  Tensor out = values_[a];
  for (float& v : out.data) v *= v;
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    const Tensor& va = t.values_[a];
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.size(); ++i) ga.data[i] += 2.0f * g.data[i] * va.data[i];
  };
  return id;
}

int Tape::add_scalar(int a, double c) {
  Tensor out = values_[a];
  for (float& v : out.data) v = static_cast<float>(v + c);
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i];
  };
  return id;
}

int Tape::scale(int a, double c) {
  Tensor out = values_[a];
  for (float& v : out.data) v = static_cast<float>(v * c);
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, c, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.size(); ++i) ga.data[i] += static_cast<float>(c) * g.data[i];
  };
  return id;
}

int Tape::sqrt_(int a) {
  Tensor out = values_[a];
  for (float& v : out.data) {
    require(v >= 0.0f, "sqrt: negative input");
    v = std::sqrt(v);
  }
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    const Tensor& y = t.values_[id];
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.size(); ++i) {
      if (y.data[i] > 0.0f) ga.data[i] += 0.5f * g.data[i] / y.data[i];
    }
  };
  return id;
}

int Tape::div(int a, int b) {
  same_shape(values_[a], values_[b], "div");
  Tensor out = values_[a];
  for (size_t i = 0; i < out.size(); ++i) out.data[i] /= values_[b].data[i];
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, b, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    const Tensor& va = t.values_[a];
    const Tensor& vb = t.values_[b];
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i] / vb.data[i];
      gb.data[i] -= g.data[i] * va.data[i] / (vb.data[i] * vb.data[i]);
    }
  };
  return id;
}

int Tape::clamp_min(int a, double c) {
  Tensor out = values_[a];
  for (float& v : out.data) v = std::max(v, static_cast<float>(c));
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, c, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    const Tensor& va = t.values_[a];
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.size(); ++i) {
      if (va.data[i] > c) ga.data[i] += g.data[i];
    }
  };
  return id;
}

int Tape::relu(int a) {
  Tensor out = values_[a];
  for (float& v : out.data) v = std::max(v, 0.0f);
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    const Tensor& va = t.values_[a];
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.size(); ++i) {
      if (va.data[i] > 0.0f) ga.data[i] += g.data[i];
    }
  };
  return id;
}

int Tape::sigmoid(int a) {
  Tensor out = values_[a];
  for (float& v : out.data) v = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    const Tensor& y = t.values_[id];
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.size(); ++i) {
      ga.data[i] += g.data[i] * y.data[i] * (1.0f - y.data[i]);
    }
  };
  return id;
}

int Tape::exp_(int a) {
  Tensor out = values_[a];
  for (float& v : out.data) v = std::exp(v);
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    const Tensor& y = t.values_[id];
    Tensor& ga = t.grad_buf(a);
    for (size_t i = 0; i < g.size(); ++i) ga.data[i] += g.data[i] * y.data[i];
  };
  return id;
}

int Tape::standardize(int a, double eps) {
  const Tensor& x = values_[a];
  const size_t n = x.size();
  require(n >= 2, "standardize: need at least 2 elements");
  double mu = 0.0;
  for (float v : x.data) mu += v;
  mu /= static_cast<double>(n);
  double var = 0.0;
  for (float v : x.data) var += (v - mu) * (v - mu);
  var /= static_cast<double>(n);
  const double istd = 1.0 / std::sqrt(var + eps);
  Tensor out(x.shape);
  for (size_t i = 0; i < n; ++i) out.data[i] = static_cast<float>((x.data[i] - mu) * istd);
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, id, istd, n](Tape& t) {
    const Tensor& g = t.grads_[id];
    const Tensor& y = t.values_[id];
    Tensor& ga = t.grad_buf(a);
    double m1 = 0.0, m2 = 0.0;
    for (size_t i = 0; i < n; ++i) {
      m1 += g.data[i];
      m2 += double(g.data[i]) * y.data[i];
    }
    m1 /= static_cast<double>(n);
    m2 /= static_cast<double>(n);
    for (size_t i = 0; i < n; ++i) {
      ga.data[i] += static_cast<float>(istd * (g.data[i] - m1 - y.data[i] * m2));
    }
  };
  return id;
}

// ---- linear algebra ----

int Tape::matmul(int a, int b) {
  const Tensor& A = values_[a];
  const Tensor& B = values_[b];
  require(A.shape.size() == 2 && B.shape.size() == 2, "matmul: expected 2-D operands");
  const int m = A.shape[0], k = A.shape[1], n = B.shape[1];
  require(B.shape[0] == k, "matmul: inner dimensions differ");
  Tensor out({m, n});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) {
      double acc = 0.0;
      for (int p = 0; p < k; ++p) acc += double(A.data[i * k + p]) * B.data[p * n + j];
      out.data[i * n + j] = static_cast<float>(acc);
    }
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, b, m, k, n, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    const Tensor& A2 = t.values_[a];
    const Tensor& B2 = t.values_[b];
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (int i = 0; i < m; ++i)
      for (int p = 0; p < k; ++p) {
        double acc = 0.0;
        for (int j = 0; j < n; ++j) acc += double(g.data[i * n + j]) * B2.data[p * n + j];
        ga.data[i * k + p] += static_cast<float>(acc);
      }
    for (int p = 0; p < k; ++p)
      for (int j = 0; j < n; ++j) {
        double acc = 0.0;
        for (int i = 0; i < m; ++i) acc += double(A2.data[i * k + p]) * g.data[i * n + j];
        gb.data[p * n + j] += static_cast<float>(acc);
      }
  };
  return id;
}

int Tape::conv2d(int x, int w, int bias) {
  const Chw in = chw(values_[x], "conv2d");
  const Tensor& W = values_[w];
  require(W.shape.size() == 4, "conv2d: weight must be (Cout,Cin,kh,kw)");
  const int co = W.shape[0], ci = W.shape[1], kh = W.shape[2], kw = W.shape[3];
  require(ci == in.c, "conv2d: channel mismatch");
  require(kh % 2 == 1 && kw % 2 == 1, "conv2d: kernel dims must be odd");
  if (bias >= 0) {
    require(values_[bias].size() == static_cast<size_t>(co), "conv2d: bias size mismatch");
  }
  const int H = in.h, Wd = in.w, ph = kh / 2, pw = kw / 2;
  Tensor out({co, H, Wd});
  const float* xd = values_[x].data.data();
  const float* wd = W.data.data();
  for (int o = 0; o < co; ++o) {
    const double b0 = bias >= 0 ? values_[bias].data[o] : 0.0;
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < Wd; ++u) {
        double acc = b0;
        for (int c = 0; c < ci; ++c)
          for (int dv = 0; dv < kh; ++dv) {
            const int sv = v + dv - ph;
            if (sv < 0 || sv >= H) continue;
            for (int du = 0; du < kw; ++du) {
              const int su = u + du - pw;
              if (su < 0 || su >= Wd) continue;
              acc += double(xd[(c * H + sv) * Wd + su]) *
                     wd[((o * ci + c) * kh + dv) * kw + du];
            }
          }
        out.data[(o * H + v) * Wd + u] = static_cast<float>(acc);
      }
  }
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [x, w, bias, co, ci, kh, kw, H, Wd, ph, pw, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    const Tensor& X = t.values_[x];
    const Tensor& W2 = t.values_[w];
    Tensor& gx = t.grad_buf(x);
    Tensor& gw = t.grad_buf(w);
    for (int o = 0; o < co; ++o)
      for (int v = 0; v < H; ++v)
        for (int u = 0; u < Wd; ++u) {
          const float go = g.data[(o * H + v) * Wd + u];
          if (go == 0.0f) continue;
          for (int c = 0; c < ci; ++c)
            for (int dv = 0; dv < kh; ++dv) {
              const int sv = v + dv - ph;
              if (sv < 0 || sv >= H) continue;
              for (int du = 0; du < kw; ++du) {
                const int su = u + du - pw;
                if (su < 0 || su >= Wd) continue;
                gx.data[(c * H + sv) * Wd + su] +=
                    go * W2.data[((o * ci + c) * kh + dv) * kw + du];
                gw.data[((o * ci + c) * kh + dv) * kw + du] +=
                    go * X.data[(c * H + sv) * Wd + su];
              }
            }
        }
    if (bias >= 0) {
      Tensor& gb = t.grad_buf(bias);
      for (int o = 0; o < co; ++o) {
        double acc = 0.0;
        for (int i = 0; i < H * Wd; ++i) acc += g.data[o * H * Wd + i];
        gb.data[o] += static_cast<float>(acc);
      }
    }
  };
  return id;
}

int Tape::avg_pool2d(int x, int k, int stride, int pad) {
  const Chw in = chw(values_[x], "avg_pool2d");
  require(k > 0 && stride > 0 && pad >= 0, "avg_pool2d: bad parameters");
  const int Ho = (in.h + 2 * pad - k) / stride + 1;
  const int Wo = (in.w + 2 * pad - k) / stride + 1;
  require(Ho > 0 && Wo > 0, "avg_pool2d: output would be empty");
  Tensor out({in.c, Ho, Wo});
  const float* xd = values_[x].data.data();
  const double inv = 1.0 / (k * k);
  for (int c = 0; c < in.c; ++c)
    for (int v = 0; v < Ho; ++v)
      for (int u = 0; u < Wo; ++u) {
        double acc = 0.0;
        for (int dv = 0; dv < k; ++dv) {
          const int sv = v * stride + dv - pad;
          if (sv < 0 || sv >= in.h) continue;
          for (int du = 0; du < k; ++du) {
            const int su = u * stride + du - pad;
            if (su < 0 || su >= in.w) continue;
            acc += xd[(c * in.h + sv) * in.w + su];
          }
        }
        out.data[(c * Ho + v) * Wo + u] = static_cast<float>(acc * inv);
      }
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [x, k, stride, pad, in, Ho, Wo, id, inv](Tape& t) {
    const Tensor& g = t.grads_[id];
    Tensor& gx = t.grad_buf(x);
    for (int c = 0; c < in.c; ++c)
      for (int v = 0; v < Ho; ++v)
        for (int u = 0; u < Wo; ++u) {
          const float go = static_cast<float>(g.data[(c * Ho + v) * Wo + u] * inv);
          for (int dv = 0; dv < k; ++dv) {
            const int sv = v * stride + dv - pad;
            if (sv < 0 || sv >= in.h) continue;
            for (int du = 0; du < k; ++du) {
              const int su = u * stride + du - pad;
              if (su < 0 || su >= in.w) continue;
              gx.data[(c * in.h + sv) * in.w + su] += go;
            }
          }
        }
  };
  return id;
}

int Tape::global_avg_pool(int x) {
  const Chw in = chw(values_[x], "global_avg_pool");
  Tensor out({in.c, 1});
  const double inv = 1.0 / (double(in.h) * in.w);
  for (int c = 0; c < in.c; ++c) {
    double acc = 0.0;
    for (int i = 0; i < in.h * in.w; ++i) acc += values_[x].data[c * in.h * in.w + i];
    out.data[c] = static_cast<float>(acc * inv);
  }
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [x, in, inv, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    Tensor& gx = t.grad_buf(x);
    for (int c = 0; c < in.c; ++c) {
      const float go = static_cast<float>(g.data[c] * inv);
      for (int i = 0; i < in.h * in.w; ++i) gx.data[c * in.h * in.w + i] += go;
    }
  };
  return id;
}

int Tape::channel_norm(int x, int gamma, int beta, double eps) {
  const Chw in = chw(values_[x], "channel_norm");
  require(values_[gamma].size() == static_cast<size_t>(in.c) &&
              values_[beta].size() == static_cast<size_t>(in.c),
          "channel_norm: gamma/beta size mismatch");
  const int C = in.c, HW = in.h * in.w;
  Tensor out(values_[x].shape);
  std::vector<float> xhat(values_[x].size());
  std::vector<float> inv_std(HW);
  const float* xd = values_[x].data.data();
  for (int i = 0; i < HW; ++i) {
    double mu = 0.0;
    for (int c = 0; c < C; ++c) mu += xd[c * HW + i];
    mu /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      const double d = xd[c * HW + i] - mu;
      var += d * d;
    }
    var /= C;
    const double istd = 1.0 / std::sqrt(var + eps);
    inv_std[i] = static_cast<float>(istd);
    for (int c = 0; c < C; ++c) {
      const float xh = static_cast<float>((xd[c * HW + i] - mu) * istd);
      xhat[c * HW + i] = xh;
      out.data[c * HW + i] = values_[gamma].data[c] * xh + values_[beta].data[c];
    }
  }
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [x, gamma, beta, C, HW, id, xhat = std::move(xhat),
                        inv_std = std::move(inv_std)](Tape& t) {
    const Tensor& g = t.grads_[id];
    Tensor& gx = t.grad_buf(x);
    Tensor& gg = t.grad_buf(gamma);
    Tensor& gb = t.grad_buf(beta);
    const Tensor& gam = t.values_[gamma];
    for (int i = 0; i < HW; ++i) {
      double m1 = 0.0, m2 = 0.0;
      for (int c = 0; c < C; ++c) {
        const double gh = double(g.data[c * HW + i]) * gam.data[c];
        m1 += gh;
        m2 += gh * xhat[c * HW + i];
      }
      m1 /= C;
      m2 /= C;
      for (int c = 0; c < C; ++c) {
        const double gh = double(g.data[c * HW + i]) * gam.data[c];
        gx.data[c * HW + i] +=
            static_cast<float>(inv_std[i] * (gh - m1 - xhat[c * HW + i] * m2));
        gg.data[c] += g.data[c * HW + i] * xhat[c * HW + i];
        gb.data[c] += g.data[c * HW + i];
      }
    }
  };
  return id;
}

int Tape::channel_scale(int x, int s) {
  const Chw in = chw(values_[x], "channel_scale");
  require(values_[s].size() == static_cast<size_t>(in.c), "channel_scale: scale size mismatch");
  const int C = in.c, HW = in.h * in.w;
  Tensor out(values_[x].shape);
  for (int c = 0; c < C; ++c)
    for (int i = 0; i < HW; ++i) {
      out.data[c * HW + i] = values_[x].data[c * HW + i] * values_[s].data[c];
    }
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [x, s, C, HW, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    const Tensor& X = t.values_[x];
    const Tensor& S = t.values_[s];
    Tensor& gx = t.grad_buf(x);
    Tensor& gs = t.grad_buf(s);
    for (int c = 0; c < C; ++c) {
      double acc = 0.0;
      for (int i = 0; i < HW; ++i) {
        gx.data[c * HW + i] += g.data[c * HW + i] * S.data[c];
        acc += double(g.data[c * HW + i]) * X.data[c * HW + i];
      }
      gs.data[c] += static_cast<float>(acc);
    }
  };
  return id;
}

std::pair<int, int> Tape::split_channels(int x) {
  const Chw in = chw(values_[x], "split_channels");
  require(in.c % 2 == 0, "split_channels: channel count must be even");
  const int Ch = in.c / 2, HW = in.h * in.w;
  const auto slice = [&](int c0) {
    Tensor out({Ch, in.h, in.w});
    std::copy(values_[x].data.begin() + static_cast<long>(c0) * HW,
              values_[x].data.begin() + static_cast<long>(c0 + Ch) * HW, out.data.begin());
    const int id = push(std::move(out), nullptr);
    nodes_[id].adjoint = [x, c0, Ch, HW, id](Tape& t) {
      const Tensor& g = t.grads_[id];
      Tensor& gx = t.grad_buf(x);
      for (int i = 0; i < Ch * HW; ++i) gx.data[c0 * HW + i] += g.data[i];
    };
    return id;
  };
  const int lo = slice(0);
  const int hi = slice(Ch);
  return {lo, hi};
}

int Tape::concat_channels(int a, int b) {
  const Chw ia = chw(values_[a], "concat_channels");
  const Chw ib = chw(values_[b], "concat_channels");
  require(ia.h == ib.h && ia.w == ib.w, "concat_channels: spatial dims differ");
  Tensor out({ia.c + ib.c, ia.h, ia.w});
  std::copy(values_[a].data.begin(), values_[a].data.end(), out.data.begin());
  std::copy(values_[b].data.begin(), values_[b].data.end(),
            out.data.begin() + static_cast<long>(values_[a].size()));
  const int id = push(std::move(out), nullptr);
  const size_t na = values_[a].size();
  nodes_[id].adjoint = [a, b, na, id](Tape& t) {
    const Tensor& g = t.grads_[id];
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (size_t i = 0; i < na; ++i) ga.data[i] += g.data[i];
    for (size_t i = na; i < g.size(); ++i) gb.data[i - na] += g.data[i];
  };
  return id;
}

// ---- spectral ----

namespace {

// unnormalized 2-D DFT, sign = -1 forward / +1 inverse direction
void dft2(const float* re_in, const float* im_in, int H, int W, int sign, std::vector<double>* re,
          std::vector<double>* im) {
  std::vector<double> tr(static_cast<size_t>(H) * W), ti(static_cast<size_t>(H) * W);
  // rows
  for (int v = 0; v < H; ++v) {
    for (int kx = 0; kx < W; ++kx) {
      double ar = 0.0, ai = 0.0;
      for (int u = 0; u < W; ++u) {
        const double ang = sign * 2.0 * M_PI * kx * u / W;
        const double c = std::cos(ang), s = std::sin(ang);
        const double xr = re_in[v * W + u];
        const double xi = im_in ? im_in[v * W + u] : 0.0;
        ar += xr * c - xi * s;
        ai += xr * s + xi * c;
      }
      tr[v * W + kx] = ar;
      ti[v * W + kx] = ai;
    }
  }
  // columns
  re->assign(static_cast<size_t>(H) * W, 0.0);
  im->assign(static_cast<size_t>(H) * W, 0.0);
  for (int kx = 0; kx < W; ++kx) {
    for (int ky = 0; ky < H; ++ky) {
      double ar = 0.0, ai = 0.0;
      for (int v = 0; v < H; ++v) {
        const double ang = sign * 2.0 * M_PI * ky * v / H;
        const double c = std::cos(ang), s = std::sin(ang);
        ar += tr[v * W + kx] * c - ti[v * W + kx] * s;
        ai += tr[v * W + kx] * s + ti[v * W + kx] * c;
      }
      (*re)[ky * W + kx] = ar;
      (*im)[ky * W + kx] = ai;
    }
  }
}

// (C,H,W) real -> (2C,H,W) interleaved full spectrum, unnormalized forward
Tensor spec_forward(const Tensor& x) {
  const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
  Tensor out({2 * C, H, W});
  std::vector<double> re, im;
  for (int c = 0; c < C; ++c) {
    dft2(&x.data[static_cast<size_t>(c) * H * W], nullptr, H, W, -1, &re, &im);
    for (int i = 0; i < H * W; ++i) {
      out.data[(2 * c) * static_cast<size_t>(H) * W + i] = static_cast<float>(re[i]);
      out.data[(2 * c + 1) * static_cast<size_t>(H) * W + i] = static_cast<float>(im[i]);
    }
  }
  return out;
}

// (2C,H,W) -> (C,H,W): real part of the inverse transform, scaled by `scale`
Tensor spec_inverse(const Tensor& y, double scale) {
  const int C2 = y.shape[0], H = y.shape[1], W = y.shape[2];
  const int C = C2 / 2;
  Tensor out({C, H, W});
  std::vector<double> re, im;
  for (int c = 0; c < C; ++c) {
    dft2(&y.data[static_cast<size_t>(2 * c) * H * W],
         &y.data[static_cast<size_t>(2 * c + 1) * H * W], H, W, +1, &re, &im);
    for (int i = 0; i < H * W; ++i) {
      out.data[static_cast<size_t>(c) * H * W + i] = static_cast<float>(re[i] * scale);
    }
  }
  return out;
}

}  // namespace

int Tape::rfft2(int x) {
  const Chw in = chw(values_[x], "rfft2");
  Tensor out = spec_forward(values_[x]);
  const int id = push(std::move(out), nullptr);
  const double n = double(in.h) * in.w;
  nodes_[id].adjoint = [x, id, n](Tape& t) {
    // adjoint of the unnormalized forward DFT on real input: real part of the
    // unnormalized inverse transform = n * irfft2
    Tensor gx = spec_inverse(t.grads_[id], 1.0);
    Tensor& acc = t.grad_buf(x);
    for (size_t i = 0; i < acc.size(); ++i) acc.data[i] += gx.data[i];
    (void)n;
  };
  return id;
}

int Tape::irfft2(int y) {
  const Chw in = chw(values_[y], "irfft2");
  require(in.c % 2 == 0, "irfft2: expected interleaved (2C,H,W)");
  const double inv_n = 1.0 / (double(in.h) * in.w);
  Tensor out = spec_inverse(values_[y], inv_n);
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [y, id, inv_n](Tape& t) {
    // adjoint of irfft2 = (1/n) * forward transform of the cotangent
    Tensor gy = spec_forward(t.grads_[id]);
    Tensor& acc = t.grad_buf(y);
    for (size_t i = 0; i < acc.size(); ++i) {
      acc.data[i] += static_cast<float>(gy.data[i] * inv_n);
    }
  };
  return id;
}

// ---- reductions ----

int Tape::sum(int a) {
  double acc = 0.0;
  for (float v : values_[a].data) acc += v;
  Tensor out({1});
  out.data[0] = static_cast<float>(acc);
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, id](Tape& t) {
    const float g = t.grads_[id].data[0];
    Tensor& ga = t.grad_buf(a);
    for (float& v : ga.data) v += g;
  };
  return id;
}

int Tape::mean(int a) {
  const double inv = 1.0 / static_cast<double>(values_[a].size());
  double acc = 0.0;
  for (float v : values_[a].data) acc += v;
  Tensor out({1});
  out.data[0] = static_cast<float>(acc * inv);
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, id, inv](Tape& t) {
    const float g = static_cast<float>(t.grads_[id].data[0] * inv);
    Tensor& ga = t.grad_buf(a);
    for (float& v : ga.data) v += g;
  };
  return id;
}

int Tape::dot(int a, int b) {
  same_shape(values_[a], values_[b], "dot");
  double acc = 0.0;
  for (size_t i = 0; i < values_[a].size(); ++i) {
    acc += double(values_[a].data[i]) * values_[b].data[i];
  }
  Tensor out({1});
  out.data[0] = static_cast<float>(acc);
  const int id = push(std::move(out), nullptr);
  nodes_[id].adjoint = [a, b, id](Tape& t) {
    const float g = t.grads_[id].data[0];
    const Tensor& va = t.values_[a];
    const Tensor& vb = t.values_[b];
    Tensor& ga = t.grad_buf(a);
    Tensor& gb = t.grad_buf(b);
    for (size_t i = 0; i < va.size(); ++i) {
      ga.data[i] += g * vb.data[i];
      gb.data[i] += g * va.data[i];
    }
  };
  return id;
}

void Tape::backward(int loss_node) {
  require(loss_node >= 0 && loss_node < num_nodes(), "backward: bad node id");
  require(values_[loss_node].is_scalar(), "backward: loss must be scalar");
  grads_.assign(values_.size(), Tensor{});
  grad_set_.assign(values_.size(), 0);
  grad_buf(loss_node).data[0] = 1.0f;
  for (int id = loss_node; id >= 0; --id) {
    if (!grad_set_[id] || !nodes_[id].adjoint) continue;
    nodes_[id].adjoint(*this);
  }
}

std::vector<Tensor> mixed_second_grad_fd(
    const std::function<std::vector<Tensor>(const TangentVec&)>& param_grads_at,
    const TangentVec& theta, const TangentVec& direction, double h) {
  if (!(h > 0)) throw std::invalid_argument("mixed_second_grad_fd: h must be positive");
  TangentVec plus = theta, minus = theta;
  plus.omega += h * direction.omega;
  plus.nu += h * direction.nu;
  minus.omega -= h * direction.omega;
  minus.nu -= h * direction.nu;
  const std::vector<Tensor> gp = param_grads_at(plus);
  const std::vector<Tensor> gm = param_grads_at(minus);
  if (gp.size() != gm.size()) {
    throw NumericFailure("mixed_second_grad_fd: inconsistent gradient structure");
  }
  std::vector<Tensor> out(gp.size());
  const float inv = static_cast<float>(1.0 / (2.0 * h));
  for (size_t i = 0; i < gp.size(); ++i) {
    if (gp[i].shape != gm[i].shape) {
      throw NumericFailure("mixed_second_grad_fd: gradient shape changed between evaluations");
    }
    out[i] = Tensor(gp[i].shape);
    for (size_t j = 0; j < out[i].size(); ++j) {
      out[i].data[j] = (gp[i].data[j] - gm[i].data[j]) * inv;
    }
    if (!out[i].all_finite()) {
      throw NumericFailure("mixed_second_grad_fd: non-finite result in gradient block " +
                           std::to_string(i));
    }
  }
  return out;
}

}  // namespace radreg
