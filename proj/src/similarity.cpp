#include "radreg/similarity.hpp"

#include <cmath>
#include <stdexcept>

namespace radreg {

double ncc(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw std::invalid_argument("ncc: shape mismatch");
  if (a.size() < 2) throw std::invalid_argument("ncc: need at least 2 elements");
  const size_t n = a.size();
  double ma = 0.0, mb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double cov = 0.0, va = 0.0, vb = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double da = a[i] - ma;
    const double db = b[i] - mb;
    cov += da * db;
    va += da * da;
    vb += db * db;
  }
  const double denom = std::max(std::sqrt(va), 1e-8) * std::max(std::sqrt(vb), 1e-8);
  double r = cov / denom;
  if (r > 1.0) r = 1.0;
  if (r < -1.0) r = -1.0;
  return r;
}

double ncc(const Image2D& a, const Image2D& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("ncc: image dims mismatch");
  }
  return ncc(std::span<const float>(a.data), std::span<const float>(b.data));
}

void sobel(const Image2D& img, Image2D* dx, Image2D* dy) {
  const int H = img.height, W = img.width;
  *dx = Image2D(H, W);
  *dy = Image2D(H, W);
  const auto px = [&](int v, int u) -> double {
    if (v < 0 || v >= H || u < 0 || u >= W) return 0.0;
    return img.at(v, u);
  };
  for (int v = 0; v < H; ++v)
    for (int u = 0; u < W; ++u) {
      const double gx = (px(v - 1, u + 1) + 2 * px(v, u + 1) + px(v + 1, u + 1)) -
                        (px(v - 1, u - 1) + 2 * px(v, u - 1) + px(v + 1, u - 1));
      const double gy = (px(v + 1, u - 1) + 2 * px(v + 1, u) + px(v + 1, u + 1)) -
                        (px(v - 1, u - 1) + 2 * px(v - 1, u) + px(v - 1, u + 1));
      dx->at(v, u) = static_cast<float>(gx);
      dy->at(v, u) = static_cast<float>(gy);
    }
}

double gradient_correlation(const Image2D& a, const Image2D& b) {
  if (a.height != b.height || a.width != b.width) {
    throw std::invalid_argument("gradient_correlation: image dims mismatch");
  }
  if (a.height < 3 || a.width < 3) {
    throw std::invalid_argument("gradient_correlation: images must be at least 3x3");
  }
  Image2D ax, ay, bx, by;
  sobel(a, &ax, &ay);
  sobel(b, &bx, &by);
  // correlate over the gradient interior: the zero-padded Sobel border rows mix
  // image content with the padding, which would break invariance to a constant
  // intensity offset
  const auto interior = [](const Image2D& img) {
    std::vector<float> out;
    out.reserve(static_cast<size_t>(img.height - 2) * (img.width - 2));
    for (int v = 1; v < img.height - 1; ++v)
      for (int u = 1; u < img.width - 1; ++u) out.push_back(img.at(v, u));
    return out;
  };
  const std::vector<float> axi = interior(ax), ayi = interior(ay);
  const std::vector<float> bxi = interior(bx), byi = interior(by);
  return 0.5 * (ncc(std::span<const float>(axi), std::span<const float>(bxi)) +
                ncc(std::span<const float>(ayi), std::span<const float>(byi)));
}

}  // namespace radreg
