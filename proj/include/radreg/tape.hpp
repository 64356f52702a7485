#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "radreg/se3.hpp"

namespace radreg {

struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Dense tensor, f32 storage. Reductions accumulate in f64.
struct Tensor {
  std::vector<int> shape;
  std::vector<float> data;

  Tensor() = default;
  Tensor(std::vector<int> s, float fill = 0.0f) : shape(std::move(s)) {
    data.assign(count(shape), fill);
  }
  static size_t count(const std::vector<int>& s) {
    size_t n = 1;
    for (int d : s) n *= static_cast<size_t>(d);
    return n;
  }
  size_t size() const { return data.size(); }
  bool is_scalar() const { return data.size() == 1; }
  float scalar() const { return data.at(0); }
  bool all_finite() const;
};

/// Reverse-mode tape. Ops compute values eagerly and record adjoint rules;
/// backward() runs one reverse sweep from a scalar node. A tape is
/// single-writer; distinct tapes are independent.
class Tape {
public:
  int leaf(Tensor t);
  int constant(Tensor t) { return leaf(std::move(t)); }  // same storage; leaves collect grads

  const Tensor& value(int id) const { return values_.at(id); }
  int num_nodes() const { return static_cast<int>(values_.size()); }

  // elementwise
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int square(int a);
  int add_scalar(int a, double c);
  int scale(int a, double c);
  int sqrt_(int a);
  int div(int a, int b);
  int clamp_min(int a, double c);
  int relu(int a);
  int sigmoid(int a);
  int exp_(int a);
  /// (x - mean) / sqrt(var + eps) over the whole tensor.
  int standardize(int a, double eps = 1e-6);

  // linear algebra / conv
  int matmul(int a, int b);  // (m,k) x (k,n)
  /// x: (Cin,H,W), w: (Cout,Cin,kh,kw), bias: (Cout) or -1. Stride 1,
  /// zero-padded to "same" size (kh, kw odd).
  int conv2d(int x, int w, int bias = -1);
  int avg_pool2d(int x, int k, int stride, int pad);  // fixed divisor k*k
  int global_avg_pool(int x);                         // (C,H,W) -> (C,1)
  /// Normalize across channels at each spatial site; gamma/beta: (C).
  int channel_norm(int x, int gamma, int beta, double eps = 1e-5);
  int channel_scale(int x, int s);  // (C,H,W) * (C) broadcast

  // structure
  std::pair<int, int> split_channels(int x);  // even split along C
  int concat_channels(int a, int b);

  // spectral: (C,H,W) -> (2C,H,W) interleaved (re, im) full spectrum
  int rfft2(int x);
  int irfft2(int y);  // (2C,H,W) -> (C,H,W)

  // reductions -> shape (1)
  int sum(int a);
  int mean(int a);
  int dot(int a, int b);

  /// Reverse sweep from a scalar node. May be called repeatedly on one tape
  /// (grads are reset each call). Deterministic.
  void backward(int loss_node);
  const Tensor& grad(int id) const;
  bool has_grad(int id) const;

private:
  struct Node {
    std::function<void(Tape&)> adjoint;  // empty for leaves
  };
  int push(Tensor value, std::function<void(Tape&)> adjoint);
  Tensor& grad_buf(int id);

  std::vector<Tensor> values_;
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> grad_set_;
};

/// Central-difference directional derivative of a parameter-gradient map:
/// returns (grads(theta + h*dir) - grads(theta - h*dir)) / (2h), i.e. the
/// mixed second derivative d/dw [dL/dtheta . dir] without second-order tape
/// support.
std::vector<Tensor> mixed_second_grad_fd(
    const std::function<std::vector<Tensor>(const TangentVec&)>& param_grads_at,
    const TangentVec& theta, const TangentVec& direction, double h);

}  // namespace radreg
