#include <cmath>
#include <functional>

#include "doctest.h"
#include "radreg/tape.hpp"
#include "test_util.hpp"

using namespace radreg;
using radreg::test::dot_f64;
using radreg::test::random_tensor;

namespace {

void check_close(double a, double b, double tol = 1e-6) {
  CHECK(std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)}));
}

// <J u, v> vs <u, J^T v> where J^T v comes from the tape adjoint of
// s = dot(f(x), v) and J u is supplied by the caller (analytic directional
// derivative, or a fresh forward evaluation for linear ops).
void adjoint_dot_check(const std::vector<Tensor>& inputs, const std::vector<Tensor>& u,
                       const std::function<int(Tape&, const std::vector<int>&)>& build,
                       const Tensor& ju) {
  Tape tape;
  std::vector<int> ids;
  for (const auto& t : inputs) ids.push_back(tape.leaf(t));
  const int y = build(tape, ids);
  Rng rng(777);
  Tensor v = random_tensor(tape.value(y).shape, rng);
  const int s = tape.dot(y, tape.leaf(v));
  tape.backward(s);
  double utjv = 0.0;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (tape.has_grad(ids[i])) utjv += dot_f64(u[i], tape.grad(ids[i]));
  }
  check_close(dot_f64(ju, v), utjv);
}

// forward-evaluate the op on fresh inputs (exact J u for linear ops)
Tensor forward_eval(const std::vector<Tensor>& inputs,
                    const std::function<int(Tape&, const std::vector<int>&)>& build) {
  Tape tape;
  std::vector<int> ids;
  for (const auto& t : inputs) ids.push_back(tape.leaf(t));
  return tape.value(build(tape, ids));
}

Tensor ew(const Tensor& x, const std::function<double(double)>& f) {
  Tensor y = x;
  for (size_t i = 0; i < y.size(); ++i) y.data[i] = static_cast<float>(f(x.data[i]));
  return y;
}

}  // namespace

TEST_CASE("adjoint dot tests: elementwise ops") {
  Rng rng(1);
  const std::vector<int> sh{2, 6, 6};
  const Tensor a = random_tensor(sh, rng), b = random_tensor(sh, rng);
  const Tensor ua = random_tensor(sh, rng), ub = random_tensor(sh, rng);

  SUBCASE("add") {
    Tensor ju(sh);
    for (size_t i = 0; i < ju.size(); ++i) ju.data[i] = ua.data[i] + ub.data[i];
    adjoint_dot_check({a, b}, {ua, ub},
                      [](Tape& t, const std::vector<int>& id) { return t.add(id[0], id[1]); }, ju);
  }
  SUBCASE("sub") {
    Tensor ju(sh);
    for (size_t i = 0; i < ju.size(); ++i) ju.data[i] = ua.data[i] - ub.data[i];
    adjoint_dot_check({a, b}, {ua, ub},
                      [](Tape& t, const std::vector<int>& id) { return t.sub(id[0], id[1]); }, ju);
  }
  SUBCASE("mul") {
    Tensor ju(sh);
    for (size_t i = 0; i < ju.size(); ++i) {
      ju.data[i] = static_cast<float>(double(ua.data[i]) * b.data[i] + double(a.data[i]) * ub.data[i]);
    }
    adjoint_dot_check({a, b}, {ua, ub},
                      [](Tape& t, const std::vector<int>& id) { return t.mul(id[0], id[1]); }, ju);
  }
  SUBCASE("square") {
    Tensor ju(sh);
    for (size_t i = 0; i < ju.size(); ++i) ju.data[i] = static_cast<float>(2.0 * a.data[i] * ua.data[i]);
    adjoint_dot_check({a}, {ua},
                      [](Tape& t, const std::vector<int>& id) { return t.square(id[0]); }, ju);
  }
  SUBCASE("add_scalar and scale") {
    adjoint_dot_check({a}, {ua},
                      [](Tape& t, const std::vector<int>& id) { return t.add_scalar(id[0], 2.5); },
                      ua);
    Tensor ju = ew(ua, [](double x) { return -1.75 * x; });
    adjoint_dot_check({a}, {ua},
                      [](Tape& t, const std::vector<int>& id) { return t.scale(id[0], -1.75); },
                      ju);
  }
  SUBCASE("sqrt") {
    const Tensor p = ew(a, [](double x) { return std::abs(x) + 0.5; });
    Tensor ju(sh);
    for (size_t i = 0; i < ju.size(); ++i) {
      ju.data[i] = static_cast<float>(ua.data[i] / (2.0 * std::sqrt(double(p.data[i]))));
    }
    adjoint_dot_check({p}, {ua},
                      [](Tape& t, const std::vector<int>& id) { return t.sqrt_(id[0]); }, ju);
  }
  SUBCASE("div") {
    const Tensor d = ew(b, [](double x) { return std::abs(x) + 1.0; });
    Tensor ju(sh);
    for (size_t i = 0; i < ju.size(); ++i) {
      const double bd = d.data[i];
      ju.data[i] = static_cast<float>(ua.data[i] / bd - double(a.data[i]) * ub.data[i] / (bd * bd));
    }
    adjoint_dot_check({a, d}, {ua, ub},
                      [](Tape& t, const std::vector<int>& id) { return t.div(id[0], id[1]); }, ju);
  }
  SUBCASE("clamp_min and relu away from the kink") {
    const Tensor x = ew(a, [](double v) { return v + (v >= 0 ? 0.2 : -0.2); });
    Tensor ju(sh);
    for (size_t i = 0; i < ju.size(); ++i) ju.data[i] = x.data[i] > 0 ? ua.data[i] : 0.0f;
    adjoint_dot_check({x}, {ua},
                      [](Tape& t, const std::vector<int>& id) { return t.clamp_min(id[0], 0.0); },
                      ju);
    adjoint_dot_check({x}, {ua},
                      [](Tape& t, const std::vector<int>& id) { return t.relu(id[0]); }, ju);
  }
  SUBCASE("sigmoid") {
    Tensor ju(sh);
    for (size_t i = 0; i < ju.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-double(a.data[i])));
      ju.data[i] = static_cast<float>(s * (1.0 - s) * ua.data[i]);
    }
    adjoint_dot_check({a}, {ua},
                      [](Tape& t, const std::vector<int>& id) { return t.sigmoid(id[0]); }, ju);
  }
  SUBCASE("exp") {
    Tensor ju(sh);
    for (size_t i = 0; i < ju.size(); ++i) {
      ju.data[i] = static_cast<float>(std::exp(double(a.data[i])) * ua.data[i]);
    }
    adjoint_dot_check({a}, {ua},
                      [](Tape& t, const std::vector<int>& id) { return t.exp_(id[0]); }, ju);
  }
  SUBCASE("standardize") {
    const double eps = 1e-6;
    const size_t n = a.size();
    double m = 0.0;
    for (float x : a.data) m += x;
    m /= double(n);
    double var = 0.0;
    for (float x : a.data) var += (x - m) * (x - m);
    var /= double(n);
    const double s = std::sqrt(var + eps);
    double dm = 0.0, dvar = 0.0;
    for (size_t i = 0; i < n; ++i) {
      dm += ua.data[i];
      dvar += 2.0 * (a.data[i] - m) * ua.data[i];
    }
    dm /= double(n);
    dvar /= double(n);
    Tensor ju(a.shape);
    for (size_t i = 0; i < n; ++i) {
      const double xh = (a.data[i] - m) / s;
      ju.data[i] = static_cast<float>((ua.data[i] - dm) / s - xh * dvar / (2.0 * s * s));
    }
    adjoint_dot_check({a}, {ua},
                      [](Tape& t, const std::vector<int>& id) { return t.standardize(id[0]); },
                      ju);
  }
}

TEST_CASE("adjoint dot tests: linear-algebra, pooling and structure ops") {
  Rng rng(2);

  SUBCASE("matmul, both arguments") {
    const Tensor A = random_tensor({4, 5}, rng), B = random_tensor({5, 3}, rng);
    const Tensor uA = random_tensor({4, 5}, rng), uB = random_tensor({5, 3}, rng);
    const auto build = [](Tape& t, const std::vector<int>& id) { return t.matmul(id[0], id[1]); };
    const Tensor j1 = forward_eval({uA, B}, build);
    const Tensor j2 = forward_eval({A, uB}, build);
    Tensor ju(j1.shape);
    for (size_t i = 0; i < ju.size(); ++i) ju.data[i] = j1.data[i] + j2.data[i];
    adjoint_dot_check({A, B}, {uA, uB}, build, ju);
  }
  SUBCASE("conv2d with bias, all three arguments") {
    const Tensor x = random_tensor({2, 6, 6}, rng), w = random_tensor({3, 2, 3, 3}, rng);
    const Tensor bias = random_tensor({3}, rng);
    const Tensor ux = random_tensor({2, 6, 6}, rng), uw = random_tensor({3, 2, 3, 3}, rng);
    const Tensor ubias = random_tensor({3}, rng);
    const auto build = [](Tape& t, const std::vector<int>& id) {
      return t.conv2d(id[0], id[1], id[2]);
    };
    const Tensor zero_bias({3});
    const auto nobias = [](Tape& t, const std::vector<int>& id) {
      return t.conv2d(id[0], id[1], id[2]);
    };
    const Tensor j1 = forward_eval({ux, w, zero_bias}, nobias);
    const Tensor j2 = forward_eval({x, uw, zero_bias}, nobias);
    Tensor ju(j1.shape);
    const size_t hw = 36;
    for (size_t i = 0; i < ju.size(); ++i) {
      ju.data[i] = static_cast<float>(double(j1.data[i]) + j2.data[i] + ubias.data[i / hw]);
    }
    adjoint_dot_check({x, w, bias}, {ux, uw, ubias}, build, ju);
  }
  SUBCASE("avg_pool2d and global_avg_pool (linear)") {
    const Tensor x = random_tensor({2, 8, 8}, rng), ux = random_tensor({2, 8, 8}, rng);
    for (const auto& build : std::vector<std::function<int(Tape&, const std::vector<int>&)>>{
             [](Tape& t, const std::vector<int>& id) { return t.avg_pool2d(id[0], 3, 1, 1); },
             [](Tape& t, const std::vector<int>& id) { return t.avg_pool2d(id[0], 2, 2, 0); },
             [](Tape& t, const std::vector<int>& id) { return t.global_avg_pool(id[0]); }}) {
      adjoint_dot_check({x}, {ux}, build, forward_eval({ux}, build));
    }
  }
  SUBCASE("channel_norm, all arguments") {
    const int C = 4, H = 5, W = 5;
    const Tensor x = random_tensor({C, H, W}, rng), g = random_tensor({C}, rng);
    const Tensor be = random_tensor({C}, rng);
    const Tensor ux = random_tensor({C, H, W}, rng), ug = random_tensor({C}, rng);
    const Tensor ube = random_tensor({C}, rng);
    const double eps = 1e-5;
    Tensor ju({C, H, W});
    for (int v = 0; v < H; ++v)
      for (int u = 0; u < W; ++u) {
        double m = 0.0, dm = 0.0;
        for (int c = 0; c < C; ++c) {
          m += x.data[(size_t(c) * H + v) * W + u];
          dm += ux.data[(size_t(c) * H + v) * W + u];
        }
        m /= C;
        dm /= C;
        double var = 0.0, dvar = 0.0;
        for (int c = 0; c < C; ++c) {
          const double d = x.data[(size_t(c) * H + v) * W + u] - m;
          var += d * d;
          dvar += 2.0 * d * ux.data[(size_t(c) * H + v) * W + u];
        }
        var /= C;
        dvar /= C;
        const double s = std::sqrt(var + eps);
        for (int c = 0; c < C; ++c) {
          const size_t i = (size_t(c) * H + v) * W + u;
          const double xh = (x.data[i] - m) / s;
          const double dxh = (ux.data[i] - dm) / s - xh * dvar / (2.0 * s * s);
          ju.data[i] = static_cast<float>(g.data[c] * dxh + ug.data[c] * xh + ube.data[c]);
        }
      }
    adjoint_dot_check({x, g, be}, {ux, ug, ube},
                      [&](Tape& t, const std::vector<int>& id) {
                        return t.channel_norm(id[0], id[1], id[2], eps);
                      },
                      ju);
  }
  SUBCASE("channel_scale (bilinear)") {
    const Tensor x = random_tensor({3, 4, 4}, rng), s = random_tensor({3, 1}, rng);
    const Tensor ux = random_tensor({3, 4, 4}, rng), us = random_tensor({3, 1}, rng);
    const auto build = [](Tape& t, const std::vector<int>& id) {
      return t.channel_scale(id[0], id[1]);
    };
    const Tensor j1 = forward_eval({ux, s}, build), j2 = forward_eval({x, us}, build);
    Tensor ju(j1.shape);
    for (size_t i = 0; i < ju.size(); ++i) ju.data[i] = j1.data[i] + j2.data[i];
    adjoint_dot_check({x, s}, {ux, us}, build, ju);
  }
  SUBCASE("split and concat channels") {
    const Tensor x = random_tensor({4, 5, 5}, rng), ux = random_tensor({4, 5, 5}, rng);
    const auto build_split = [](Tape& t, const std::vector<int>& id) {
      auto [p, q] = t.split_channels(id[0]);
      return t.concat_channels(q, p);  // swap halves: still linear
    };
    adjoint_dot_check({x}, {ux}, build_split, forward_eval({ux}, build_split));

    const Tensor a2 = random_tensor({2, 5, 5}, rng), b2 = random_tensor({3, 5, 5}, rng);
    const Tensor ua2 = random_tensor({2, 5, 5}, rng), ub2 = random_tensor({3, 5, 5}, rng);
    const auto build_cat = [](Tape& t, const std::vector<int>& id) {
      return t.concat_channels(id[0], id[1]);
    };
    adjoint_dot_check({a2, b2}, {ua2, ub2}, build_cat, forward_eval({ua2, ub2}, build_cat));
  }
  SUBCASE("rfft2 and irfft2 (linear)") {
    const Tensor x = random_tensor({2, 8, 8}, rng), ux = random_tensor({2, 8, 8}, rng);
    const auto fwd = [](Tape& t, const std::vector<int>& id) { return t.rfft2(id[0]); };
    adjoint_dot_check({x}, {ux}, fwd, forward_eval({ux}, fwd));
    const Tensor y = random_tensor({4, 8, 8}, rng), uy = random_tensor({4, 8, 8}, rng);
    const auto inv = [](Tape& t, const std::vector<int>& id) { return t.irfft2(id[0]); };
    adjoint_dot_check({y}, {uy}, inv, forward_eval({uy}, inv));
  }
  SUBCASE("reductions") {
    const Tensor x = random_tensor({3, 7}, rng), ux = random_tensor({3, 7}, rng);
    const Tensor y = random_tensor({3, 7}, rng), uy = random_tensor({3, 7}, rng);
    const auto bsum = [](Tape& t, const std::vector<int>& id) { return t.sum(id[0]); };
    const auto bmean = [](Tape& t, const std::vector<int>& id) { return t.mean(id[0]); };
    adjoint_dot_check({x}, {ux}, bsum, forward_eval({ux}, bsum));
    adjoint_dot_check({x}, {ux}, bmean, forward_eval({ux}, bmean));
    const auto bdot = [](Tape& t, const std::vector<int>& id) { return t.dot(id[0], id[1]); };
    const Tensor j1 = forward_eval({ux, y}, bdot), j2 = forward_eval({x, uy}, bdot);
    Tensor ju({1});
    ju.data[0] = j1.data[0] + j2.data[0];
    adjoint_dot_check({x, y}, {ux, uy}, bdot, ju);
  }
}

TEST_CASE("forward fixtures") {
  Rng rng(3);
  SUBCASE("matmul by identity") {
    Tensor I({3, 3});
    for (int i = 0; i < 3; ++i) I.data[i * 3 + i] = 1.0f;
    const Tensor X = random_tensor({3, 4}, rng);
    Tape t;
    const int y = t.matmul(t.leaf(I), t.leaf(X));
    CHECK(t.value(y).data == X.data);
  }
  SUBCASE("fft round trip") {
    const Tensor x = random_tensor({1, 8, 8}, rng);
    Tape t;
    const int y = t.irfft2(t.rfft2(t.leaf(x)));
    for (size_t i = 0; i < x.size(); ++i) {
      CHECK(std::abs(t.value(y).data[i] - x.data[i]) <= 1e-6);
    }
  }
  SUBCASE("conv2d equals brute force") {
    const Tensor x = random_tensor({1, 8, 8}, rng), w = random_tensor({1, 1, 3, 3}, rng);
    Tape t;
    const int y = t.conv2d(t.leaf(x), t.leaf(w));
    for (int v = 0; v < 8; ++v)
      for (int u = 0; u < 8; ++u) {
        double s = 0.0;
        for (int dv = -1; dv <= 1; ++dv)
          for (int du = -1; du <= 1; ++du) {
            const int vv = v + dv, uu = u + du;
            if (vv < 0 || vv >= 8 || uu < 0 || uu >= 8) continue;
            s += double(x.data[size_t(vv) * 8 + uu]) * w.data[size_t(dv + 1) * 3 + (du + 1)];
          }
        CHECK(std::abs(t.value(y).data[size_t(v) * 8 + u] - s) <= 1e-6 * std::max(1.0, std::abs(s)));
      }
  }
  SUBCASE("shape mismatch names the op") {
    Tape t;
    const int a = t.leaf(Tensor({2, 3})), b = t.leaf(Tensor({3, 2}));
    CHECK_THROWS_WITH_AS(t.add(a, b), doctest::Contains("add"), std::invalid_argument);
  }
}

TEST_CASE("backward basics") {
  Rng rng(4);
  SUBCASE("linear loss") {
    const Tensor x = random_tensor({5}, rng);
    Tape t;
    const int xi = t.leaf(x);
    t.backward(t.sum(t.scale(xi, 3.0)));
    for (float g : t.grad(xi).data) CHECK(g == 3.0f);
  }
  SUBCASE("quadratic loss") {
    const Tensor x = random_tensor({6}, rng);
    Tape t;
    const int xi = t.leaf(x);
    t.backward(t.dot(xi, xi));
    for (size_t i = 0; i < x.size(); ++i) {
      CHECK(t.grad(xi).data[i] == doctest::Approx(2.0 * x.data[i]).epsilon(1e-9));
    }
  }
  SUBCASE("non-scalar loss rejected") {
    Tape t;
    const int xi = t.leaf(random_tensor({3}, rng));
    CHECK_THROWS_AS(t.backward(xi), std::invalid_argument);
  }
  SUBCASE("backward is deterministic") {
    const Tensor x = random_tensor({2, 8, 8}, rng);
    const auto run = [&] {
      Tape t;
      const int xi = t.leaf(x);
      const int loss = t.sum(t.square(t.sigmoid(t.avg_pool2d(xi, 3, 1, 1))));
      t.backward(loss);
      return t.grad(xi).data;
    };
    CHECK(run() == run());
  }
}

TEST_CASE("two-layer perceptron gradient vs finite differences of a double-precision oracle") {
  Rng rng(5);
  const Tensor x = random_tensor({4, 1}, rng);
  Tensor W1 = random_tensor({5, 4}, rng), b1 = random_tensor({5, 1}, rng);
  Tensor W2 = random_tensor({1, 5}, rng), b2 = random_tensor({1, 1}, rng);
  // keep every ReLU preactivation away from the kink so the FD window stays
  // on one side of it
  for (int i = 0; i < 5; ++i) {
    double s = b1.data[i];
    for (int j = 0; j < 4; ++j) s += double(W1.data[i * 4 + j]) * x.data[j];
    if (std::abs(s) < 0.05) b1.data[i] += static_cast<float>(s >= 0 ? 0.1 : -0.1);
  }

  const auto oracle = [&](const Tensor& w1, const Tensor& bb1, const Tensor& w2,
                          const Tensor& bb2) {
    double h[5];
    for (int i = 0; i < 5; ++i) {
      double s = bb1.data[i];
      for (int j = 0; j < 4; ++j) s += double(w1.data[i * 4 + j]) * x.data[j];
      h[i] = std::max(0.0, s);
    }
    double o = bb2.data[0];
    for (int i = 0; i < 5; ++i) o += double(w2.data[i]) * h[i];
    return 1.0 / (1.0 + std::exp(-o));
  };

  Tape t;
  const int w1 = t.leaf(W1), bb1 = t.leaf(b1), w2 = t.leaf(W2), bb2 = t.leaf(b2);
  const int hid = t.relu(t.add(t.matmul(w1, t.leaf(x)), bb1));
  const int out = t.sigmoid(t.add(t.matmul(w2, hid), bb2));
  const int loss = t.sum(out);
  CHECK(std::abs(t.value(loss).scalar() - oracle(W1, b1, W2, b2)) <= 1e-6);
  t.backward(loss);

  const double h = 1e-4;
  double gmax = 1e-12;
  for (int id : {w1, bb1, w2, bb2})
    for (float g : t.grad(id).data) gmax = std::max(gmax, double(std::abs(g)));
  const auto check_param = [&](int id, Tensor& param, auto... rest) {
    for (size_t i = 0; i < param.size(); ++i) {
      const float keep = param.data[i];
      const float up = static_cast<float>(keep + h), dn = static_cast<float>(keep - h);
      param.data[i] = up;
      const double fp = oracle(W1, b1, W2, b2);
      param.data[i] = dn;
      const double fm = oracle(W1, b1, W2, b2);
      param.data[i] = keep;
      // divide by the realized f32 step, not the nominal 2h
      const double fd = (fp - fm) / (double(up) - double(dn));
      CHECK(std::abs(fd - t.grad(id).data[i]) <= 1e-4 * gmax);
    }
    (void)sizeof...(rest);
  };
  check_param(w1, W1);
  check_param(bb1, b1);
  check_param(w2, W2);
  check_param(bb2, b2);
}

TEST_CASE("gradient with respect to a designated input") {
  Rng rng(6);
  SUBCASE("mean gives a uniform gradient") {
    const Tensor img = random_tensor({1, 4, 6}, rng);
    Tape t;
    const int in = t.leaf(img);
    t.backward(t.mean(in));
    for (float g : t.grad(in).data) CHECK(g == doctest::Approx(1.0 / 24).epsilon(1e-7));
  }
  SUBCASE("disconnected input has no gradient") {
    Tape t;
    const int used = t.leaf(random_tensor({3}, rng));
    const int unused = t.leaf(random_tensor({3}, rng));
    t.backward(t.sum(used));
    CHECK(t.has_grad(used));
    CHECK_FALSE(t.has_grad(unused));
  }
  SUBCASE("correlation-style quadratic matches finite differences") {
    Tensor img = random_tensor({1, 6, 6}, rng);
    const Tensor ref = random_tensor({1, 6, 6}, rng);
    const auto oracle = [&](const Tensor& im) {
      // mean(standardized(im) * ref) in double
      double m = 0.0;
      for (float v : im.data) m += v;
      m /= im.size();
      double var = 0.0;
      for (float v : im.data) var += (v - m) * (v - m);
      var /= im.size();
      const double s = std::sqrt(var + 1e-6);
      double out = 0.0;
      for (size_t i = 0; i < im.size(); ++i) out += (im.data[i] - m) / s * ref.data[i];
      return out / im.size();
    };
    Tape t;
    const int in = t.leaf(img);
    t.backward(t.mean(t.mul(t.standardize(in), t.leaf(ref))));
    const double h = 1e-4;
    double gmax = 1e-12;
    for (float g : t.grad(in).data) gmax = std::max(gmax, double(std::abs(g)));
    for (size_t i = 0; i < img.size(); ++i) {
      const float keep = img.data[i];
      img.data[i] = static_cast<float>(keep + h);
      const double fp = oracle(img);
      img.data[i] = static_cast<float>(keep - h);
      const double fm = oracle(img);
      img.data[i] = keep;
      // 5e-4: the tape accumulates the standardize backward pass in f32
      CHECK(std::abs((fp - fm) / (2 * h) - t.grad(in).data[i]) <= 5e-4 * gmax);
    }
  }
}

TEST_CASE("mixed second derivative machinery") {
  SUBCASE("bilinear model is exact") {
    // L = theta^T A w with dyadic-rational entries: every float op is exact,
    // so the central difference reproduces A^T-columns to machine precision
    const double A[6][4] = {{1, 2, -1, 0.5}, {0, 1, 3, -2},    {2, -1, 0.25, 1},
                            {1, 1, -1, 1},   {0.5, 2, 0, -1},  {3, 0, 1, 0.5}};
    const auto grads_at = [&](const TangentVec& th) {
      Tensor g({4});
      for (int j = 0; j < 4; ++j) {
        double s = 0.0;
        for (int i = 0; i < 6; ++i) s += A[i][j] * th.coeff(i);
        g.data[j] = static_cast<float>(s);
      }
      return std::vector<Tensor>{g};
    };
    TangentVec theta;
    theta.omega = Eigen::Vector3d(1, -2, 0.5);
    theta.nu = Eigen::Vector3d(2, 0, -1);
    TangentVec dir;
    dir.omega = Eigen::Vector3d(1, 0, -1);
    dir.nu = Eigen::Vector3d(0.5, 2, 0);
    const auto out = mixed_second_grad_fd(grads_at, theta, dir, 0.0625);
    for (int j = 0; j < 4; ++j) {
      double expect = 0.0;
      for (int i = 0; i < 6; ++i) expect += A[i][j] * dir.coeff(i);
      CHECK(std::abs(out[0].data[j] - expect) <= 1e-8);
    }
  }
  SUBCASE("zero direction gives zero") {
    const auto grads_at = [](const TangentVec& th) {
      Tensor g({2});
      g.data[0] = static_cast<float>(th.omega.squaredNorm());
      g.data[1] = static_cast<float>(std::sin(th.nu.x()));
      return std::vector<Tensor>{g};
    };
    TangentVec theta;
    theta.omega = Eigen::Vector3d(0.3, -0.2, 0.1);
    const auto out = mixed_second_grad_fd(grads_at, theta, TangentVec::zero(), 1e-3);
    CHECK(out[0].data[0] == 0.0f);
    CHECK(out[0].data[1] == 0.0f);
  }
  SUBCASE("theta-independent parameter gradient gives zero") {
    const auto grads_at = [](const TangentVec&) {
      Tensor g({3});
      g.data = {1.5f, -2.25f, 0.75f};
      return std::vector<Tensor>{g};
    };
    TangentVec dir;
    dir.omega = Eigen::Vector3d(1, 1, 1);
    const auto out = mixed_second_grad_fd(grads_at, TangentVec::zero(), dir, 1e-3);
    for (float v : out[0].data) CHECK(v == 0.0f);
  }
  SUBCASE("O(h^2) convergence on a cubic model") {
    // grads(theta) = theta_0^3: directional derivative 3 theta_0^2 d, FD error
    // proportional to h^2; halving h should shrink the error about 4x
    const auto grads_at = [](const TangentVec& th) {
      Tensor g({1});
      g.data[0] = static_cast<float>(th.omega.x() * th.omega.x() * th.omega.x());
      return std::vector<Tensor>{g};
    };
    TangentVec theta;
    theta.omega = Eigen::Vector3d(0.8, 0, 0);
    TangentVec dir;
    dir.omega = Eigen::Vector3d(1, 0, 0);
    const double exact = 3.0 * 0.8 * 0.8;
    const double e1 =
        std::abs(mixed_second_grad_fd(grads_at, theta, dir, 0.2)[0].data[0] - exact);
    const double e2 =
        std::abs(mixed_second_grad_fd(grads_at, theta, dir, 0.1)[0].data[0] - exact);
    CHECK(e1 / e2 == doctest::Approx(4.0).epsilon(0.25));
  }
  SUBCASE("non-finite intermediate raises a numeric failure") {
    const auto grads_at = [](const TangentVec&) {
      Tensor g({1});
      g.data[0] = std::numeric_limits<float>::quiet_NaN();
      return std::vector<Tensor>{g};
    };
    TangentVec dir;
    dir.omega = Eigen::Vector3d(1, 0, 0);
    CHECK_THROWS_AS(mixed_second_grad_fd(grads_at, TangentVec::zero(), dir, 1e-3),
                    NumericFailure);
  }
}
