#pragma once

#include <array>
#include <string>

#include "radreg/image.hpp"
#include "radreg/se3.hpp"
#include "radreg/volume.hpp"

namespace radreg {

/// Cone-beam camera. The camera frame has its origin at the isocenter, the
/// source at (0, 0, -sid) and the detector plane at z = sdd - sid. Detector u
/// maps to camera +x, v to camera +y.
struct ProjectionGeometry {
  double source_to_detector_mm = 1012.0;
  double source_to_isocenter_mm = 700.0;
  std::array<int, 2> detector_px{256, 256};  // (H, W)
  double pixel_spacing_mm = 0.798;
  std::array<double, 2> principal_point_px{-1.0, -1.0};  // (u0, v0); <0 means center
  double step_mm = 1.0;

  double u0() const {
    return principal_point_px[0] >= 0 ? principal_point_px[0] : 0.5 * (detector_px[1] - 1);
  }
  double v0() const {
    return principal_point_px[1] >= 0 ? principal_point_px[1] : 0.5 * (detector_px[0] - 1);
  }
  void validate() const;
};

ProjectionGeometry geometry_from_json(const std::string& json_text);
std::string geometry_to_json(const ProjectionGeometry& g);

/// One image per tangent coordinate (omega x,y,z then nu x,y,z).
struct PoseJacobianImage {
  std::array<Image2D, 6> channel;
};

/// Ray-cast line integrals of `v` posed by `pose` in the camera frame.
/// pose maps volume-frame points (mm, volume center near the isocenter) into
/// the camera frame; pose updates right-compose exp(delta).
Image2D project(const Volume& v, const Pose& pose, const ProjectionGeometry& geom,
                int threads = 0);

/// Same integral plus the analytic derivative of every pixel with respect to a
/// right-perturbation of the pose. The image equals project() bit-exactly.
void project_with_jacobian(const Volume& v, const Pose& pose, const ProjectionGeometry& geom,
                           Image2D* image, PoseJacobianImage* jac, int threads = 0);

/// Repeated 2x2 mean pooling.
Image2D downsample2x(const Image2D& img, int levels);

}  // namespace radreg
