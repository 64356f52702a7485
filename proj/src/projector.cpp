#include "radreg/projector.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace radreg {

void ProjectionGeometry::validate() const {
  if (source_to_detector_mm <= 0 || source_to_isocenter_mm <= 0 || pixel_spacing_mm <= 0 ||
      step_mm <= 0) {
    throw std::invalid_argument("geometry: lengths must be positive");
  }
  if (source_to_isocenter_mm >= source_to_detector_mm) {
    throw std::invalid_argument("geometry: sid must be smaller than sdd");
  }
  if (detector_px[0] <= 0 || detector_px[1] <= 0) {
    throw std::invalid_argument("geometry: detector dims must be positive");
  }
}

ProjectionGeometry geometry_from_json(const std::string& json_text) {
  const auto j = nlohmann::json::parse(json_text);
  ProjectionGeometry g;
  g.source_to_detector_mm = j.value("sdd_mm", g.source_to_detector_mm);
  g.source_to_isocenter_mm = j.value("sid_mm", g.source_to_isocenter_mm);
  if (j.contains("detector_px")) {
    g.detector_px = {j["detector_px"].at(0).get<int>(), j["detector_px"].at(1).get<int>()};
  }
  g.pixel_spacing_mm = j.value("pixel_mm", g.pixel_spacing_mm);
  g.step_mm = j.value("step_mm", g.step_mm);
  if (j.contains("principal_point_px")) {
    g.principal_point_px = {j["principal_point_px"].at(0).get<double>(),
                            j["principal_point_px"].at(1).get<double>()};
  }
  g.validate();
  return g;
}

std::string geometry_to_json(const ProjectionGeometry& g) {
  nlohmann::json j;
  j["sdd_mm"] = g.source_to_detector_mm;
  j["sid_mm"] = g.source_to_isocenter_mm;
  j["detector_px"] = {g.detector_px[0], g.detector_px[1]};
  j["pixel_mm"] = g.pixel_spacing_mm;
  j["step_mm"] = g.step_mm;
  return j.dump();
}

namespace {

// Shared kernel; jac == nullptr renders the plain image through the exact same
// accumulation path.
void render(const Volume& vol, const Pose& pose, const ProjectionGeometry& geom, Image2D* image,
            PoseJacobianImage* jac, int threads) {
  geom.validate();
  const int H = geom.detector_px[0];
  const int W = geom.detector_px[1];
  *image = Image2D(H, W);
  if (jac) {
    for (auto& c : jac->channel) c = Image2D(H, W);
  }

  const Eigen::Vector3d source(0, 0, -geom.source_to_isocenter_mm);
  const double det_z = geom.source_to_detector_mm - geom.source_to_isocenter_mm;
  const Eigen::Matrix3d Rt = pose.rotation.transpose();
  const Eigen::Vector3d t = pose.translation;

  // Fixed marching window centered on the isocenter plane, long enough to
  // cover the volume at any pose of interest. Pose-independent sample
  // positions keep the integral smooth in the pose.
  const Eigen::Vector3d extent(vol.dims[0] * vol.spacing_mm.x(), vol.dims[1] * vol.spacing_mm.y(),
                               vol.dims[2] * vol.spacing_mm.z());
  constexpr double kOffsetMarginMm = 120.0;  // covers 3-sigma of the test pose offsets
  const double half_span = 0.5 * extent.norm() + kOffsetMarginMm + geom.step_mm;
  const int n_samples = std::max(1, static_cast<int>(std::ceil(2.0 * half_span / geom.step_mm)));

  const auto render_rows = [&](int v_begin, int v_end) {
    for (int v = v_begin; v < v_end; ++v) {
      for (int u = 0; u < W; ++u) {
        const Eigen::Vector3d det_pt((u - geom.u0()) * geom.pixel_spacing_mm,
                                     (v - geom.v0()) * geom.pixel_spacing_mm, det_z);
        const Eigen::Vector3d dir = (det_pt - source).normalized();
        // arc length from source to the isocenter plane along this ray
        const double t_iso = geom.source_to_isocenter_mm / dir.z();
        const double t0 = t_iso - half_span;
        double acc = 0.0;
        double jacc[6] = {0, 0, 0, 0, 0, 0};
        for (int i = 0; i < n_samples; ++i) {
          const double s = t0 + (i + 0.5) * geom.step_mm;
          const Eigen::Vector3d p_cam = source + s * dir;
          const Eigen::Vector3d q = Rt * (p_cam - t);
          if (jac) {
            Eigen::Vector3d g;
            acc += vol.sample_world_grad(q, &g);
            // right-perturbation exp(eps u): dq/deps = -(omega x q + nu)
            const Eigen::Vector3d gxq = g.cross(q);  // -g.(e_k x q) = e_k.(g x q)
            jacc[0] += gxq.x();
            jacc[1] += gxq.y();
            jacc[2] += gxq.z();
            jacc[3] -= g.x();
            jacc[4] -= g.y();
            jacc[5] -= g.z();
          } else {
            acc += vol.sample_world(q);
          }
        }
        image->at(v, u) = static_cast<float>(acc * geom.step_mm);
        if (jac) {
          for (int k = 0; k < 6; ++k) {
            jac->channel[k].at(v, u) = static_cast<float>(jacc[k] * geom.step_mm);
          }
        }
      }
    }
  };

  int n_threads = threads > 0 ? threads : static_cast<int>(std::thread::hardware_concurrency());
  n_threads = std::max(1, std::min(n_threads, H));
  if (n_threads == 1) {
    render_rows(0, H);
    return;
  }
  std::vector<std::thread> pool;
  const int rows_per = (H + n_threads - 1) / n_threads;
  for (int i = 0; i < n_threads; ++i) {
    const int lo = i * rows_per;
    const int hi = std::min(H, lo + rows_per);
    if (lo >= hi) break;
    pool.emplace_back(render_rows, lo, hi);
  }
  for (auto& th : pool) th.join();
}

}  // namespace

Image2D project(const Volume& v, const Pose& pose, const ProjectionGeometry& geom, int threads) {
  Image2D img;
  render(v, pose, geom, &img, nullptr, threads);
  return img;
}

void project_with_jacobian(const Volume& v, const Pose& pose, const ProjectionGeometry& geom,
                           Image2D* image, PoseJacobianImage* jac, int threads) {
  render(v, pose, geom, image, jac, threads);
}

Image2D downsample2x(const Image2D& img, int levels) {
  Image2D cur = img;
  for (int l = 0; l < levels; ++l) {
    if (cur.height % 2 != 0 || cur.width % 2 != 0) {
      throw std::invalid_argument("downsample2x: dims not divisible by 2");
    }
    Image2D next(cur.height / 2, cur.width / 2);
    for (int v = 0; v < next.height; ++v)
      for (int u = 0; u < next.width; ++u) {
        const double s = double(cur.at(2 * v, 2 * u)) + cur.at(2 * v, 2 * u + 1) +
                         cur.at(2 * v + 1, 2 * u) + cur.at(2 * v + 1, 2 * u + 1);
        next.at(v, u) = static_cast<float>(0.25 * s);
      }
    cur = std::move(next);
  }
  return cur;
}

}  // namespace radreg
