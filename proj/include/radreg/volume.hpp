#pragma once

#include <Eigen/Dense>
#include <array>
#include <string>
#include <vector>

namespace radreg {

/// 3-D attenuation grid. data is row-major with z slowest:
/// data[(z * dims[1] + y) * dims[0] + x].
struct Volume {
  std::array<int, 3> dims{0, 0, 0};
  Eigen::Vector3d spacing_mm = Eigen::Vector3d::Ones();
  Eigen::Vector3d origin_mm = Eigen::Vector3d::Zero();  // center of voxel (0,0,0)
  std::vector<float> data;

  size_t size() const {
    return static_cast<size_t>(dims[0]) * dims[1] * dims[2];
  }
  float& at(int x, int y, int z) {
    return data[(static_cast<size_t>(z) * dims[1] + y) * dims[0] + x];
  }
  float at(int x, int y, int z) const {
    return data[(static_cast<size_t>(z) * dims[1] + y) * dims[0] + x];
  }
  /// World position of a voxel center.
  Eigen::Vector3d voxel_center(int x, int y, int z) const {
    return origin_mm + Eigen::Vector3d(x * spacing_mm.x(), y * spacing_mm.y(), z * spacing_mm.z());
  }
  Eigen::Vector3d center_mm() const {
    return origin_mm + 0.5 * Eigen::Vector3d((dims[0] - 1) * spacing_mm.x(),
                                             (dims[1] - 1) * spacing_mm.y(),
                                             (dims[2] - 1) * spacing_mm.z());
  }
  /// Trilinear sample at a world-frame point; zero outside the grid.
  float sample_world(const Eigen::Vector3d& p_mm) const;
  /// Sample and spatial gradient (d value / d mm) at a world-frame point.
  float sample_world_grad(const Eigen::Vector3d& p_mm, Eigen::Vector3d* grad_mm) const;
};

struct CorruptFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct UnsupportedFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// File pair <path>.json (header) + <path>.raw (f32le payload). `path` is the
/// basename without extension.
Volume load_volume(const std::string& path);
void save_volume(const Volume& v, const std::string& path);

Volume resample_isotropic(const Volume& v, double spacing_mm);
Volume crop_pad_center(const Volume& v, const std::array<int, 3>& target_dims);

enum class PhantomKind { Sphere, Box, TubeStack, GaussianBlob };

struct PhantomParams {
  double radius_mm = 10.0;       // sphere / blob sigma
  Eigen::Vector3d half_extent_mm = Eigen::Vector3d(8, 8, 8);  // box
  double value = 1.0;
};

/// Analytic phantoms centered on the grid. tube_stack is a stack of offset
/// cylinders with varying radii and intensities; it has no rotational
/// symmetry, so a pose acting on it is identifiable.
Volume make_phantom(PhantomKind kind, const std::array<int, 3>& dims,
                    const Eigen::Vector3d& spacing_mm, const PhantomParams& params = {});

PhantomKind phantom_kind_from_string(const std::string& name);

}  // namespace radreg
