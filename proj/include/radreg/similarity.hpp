#pragma once

#include <span>

#include "radreg/image.hpp"

namespace radreg {

/// Normalized cross-correlation over flattened arrays, clamped to [-1, 1].
/// Each denominator factor is floored at 1e-8; two constant inputs give 0.
double ncc(std::span<const float> a, std::span<const float> b);
double ncc(const Image2D& a, const Image2D& b);

/// 0.5 * [ncc(dx a, dx b) + ncc(dy a, dy b)] with 3x3 Sobel, zero padding.
double gradient_correlation(const Image2D& a, const Image2D& b);

/// 3x3 Sobel derivatives with zero padding (shared by gradient_correlation and
/// the edge overlay).
void sobel(const Image2D& img, Image2D* dx, Image2D* dy);

}  // namespace radreg
