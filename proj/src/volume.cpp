#include "radreg/volume.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace radreg {

namespace {

void check_volume(const Volume& v) {
  if (v.dims[0] <= 0 || v.dims[1] <= 0 || v.dims[2] <= 0) {
    throw std::invalid_argument("volume: dims must be positive");
  }
  if ((v.spacing_mm.array() <= 0).any()) {
    throw std::invalid_argument("volume: spacing must be positive");
  }
  if (v.data.size() != v.size()) {
    throw std::invalid_argument("volume: data length does not match dims");
  }
}

}  // namespace

// Trilinear interpolation of the volume embedded in zeros: corners outside the
// grid contribute 0, so the field is continuous everywhere (value decays to 0
// across a one-voxel ring instead of jumping at the boundary — a hard jump
// would make the pose Jacobian inconsistent with finite differences).
float Volume::sample_world(const Eigen::Vector3d& p_mm) const {
  const double fx = (p_mm.x() - origin_mm.x()) / spacing_mm.x();
  const double fy = (p_mm.y() - origin_mm.y()) / spacing_mm.y();
  const double fz = (p_mm.z() - origin_mm.z()) / spacing_mm.z();
  if (fx <= -1 || fy <= -1 || fz <= -1 || fx >= dims[0] || fy >= dims[1] || fz >= dims[2]) {
    return 0.0f;
  }
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const int z0 = static_cast<int>(std::floor(fz));
  const double ax = fx - x0, ay = fy - y0, az = fz - z0;
  double v = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const int xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
        if (xi < 0 || yi < 0 || zi < 0 || xi >= dims[0] || yi >= dims[1] || zi >= dims[2]) continue;
        const double w = (dx ? ax : 1 - ax) * (dy ? ay : 1 - ay) * (dz ? az : 1 - az);
        v += w * at(xi, yi, zi);
      }
  return static_cast<float>(v);
}

float Volume::sample_world_grad(const Eigen::Vector3d& p_mm, Eigen::Vector3d* grad_mm) const {
  grad_mm->setZero();
  const double fx = (p_mm.x() - origin_mm.x()) / spacing_mm.x();
  const double fy = (p_mm.y() - origin_mm.y()) / spacing_mm.y();
  const double fz = (p_mm.z() - origin_mm.z()) / spacing_mm.z();
  if (fx <= -1 || fy <= -1 || fz <= -1 || fx >= dims[0] || fy >= dims[1] || fz >= dims[2]) {
    return 0.0f;
  }
  const int x0 = static_cast<int>(std::floor(fx));
  const int y0 = static_cast<int>(std::floor(fy));
  const int z0 = static_cast<int>(std::floor(fz));
  const double ax = fx - x0, ay = fy - y0, az = fz - z0;
  double v = 0.0, gx = 0.0, gy = 0.0, gz = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const int xi = x0 + dx, yi = y0 + dy, zi = z0 + dz;
        if (xi < 0 || yi < 0 || zi < 0 || xi >= dims[0] || yi >= dims[1] || zi >= dims[2]) continue;
        const double wx = dx ? ax : 1 - ax;
        const double wy = dy ? ay : 1 - ay;
        const double wz = dz ? az : 1 - az;
        const double val = at(xi, yi, zi);
        v += wx * wy * wz * val;
        gx += (dx ? 1.0 : -1.0) * wy * wz * val;
        gy += wx * (dy ? 1.0 : -1.0) * wz * val;
        gz += wx * wy * (dz ? 1.0 : -1.0) * val;
      }
  (*grad_mm)[0] = gx / spacing_mm.x();
  (*grad_mm)[1] = gy / spacing_mm.y();
  (*grad_mm)[2] = gz / spacing_mm.z();
  return static_cast<float>(v);
}

Volume load_volume(const std::string& path) {
  std::ifstream hdr(path + ".json");
  if (!hdr) throw CorruptFileError("cannot open header: " + path + ".json");
  nlohmann::json j;
  hdr >> j;
  Volume v;
  for (int i = 0; i < 3; ++i) v.dims[i] = j.at("dims").at(i).get<int>();
  for (int i = 0; i < 3; ++i) v.spacing_mm[i] = j.at("spacing_mm").at(i).get<double>();
  for (int i = 0; i < 3; ++i) v.origin_mm[i] = j.at("origin_mm").at(i).get<double>();
  const std::string dtype = j.at("dtype").get<std::string>();
  if (dtype != "f32le") {
    throw UnsupportedFormatError("unsupported dtype: " + dtype + " (supported: f32le)");
  }
  std::ifstream raw(path + ".raw", std::ios::binary | std::ios::ate);
  if (!raw) throw CorruptFileError("cannot open payload: " + path + ".raw");
  const auto bytes = static_cast<size_t>(raw.tellg());
  const size_t expected = static_cast<size_t>(v.dims[0]) * v.dims[1] * v.dims[2] * sizeof(float);
  if (bytes != expected) {
    throw CorruptFileError("payload size mismatch: header implies " + std::to_string(expected) +
                           " bytes, file has " + std::to_string(bytes));
  }
  raw.seekg(0);
  v.data.resize(v.size());
  raw.read(reinterpret_cast<char*>(v.data.data()), static_cast<std::streamsize>(bytes));
  check_volume(v);
  return v;
}

void save_volume(const Volume& v, const std::string& path) {
  check_volume(v);
  nlohmann::json j;
  j["dims"] = {v.dims[0], v.dims[1], v.dims[2]};
  j["spacing_mm"] = {v.spacing_mm.x(), v.spacing_mm.y(), v.spacing_mm.z()};
  j["origin_mm"] = {v.origin_mm.x(), v.origin_mm.y(), v.origin_mm.z()};
  j["dtype"] = "f32le";
  std::ofstream hdr(path + ".json");
  hdr << j.dump(2) << "\n";
  std::ofstream raw(path + ".raw", std::ios::binary);
  raw.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!hdr || !raw) throw std::runtime_error("save_volume: write failed for " + path);
}

Volume resample_isotropic(const Volume& v, double spacing_mm) {
  check_volume(v);
  if (spacing_mm <= 0) throw std::invalid_argument("resample_isotropic: spacing must be positive");
  Volume out;
  for (int i = 0; i < 3; ++i) {
    out.dims[i] = std::max(1, static_cast<int>(std::lround(v.dims[i] * v.spacing_mm[i] / spacing_mm)));
  }
  out.spacing_mm.setConstant(spacing_mm);
  // keep the volume center fixed in the world frame
  Volume tmp = out;
  tmp.data.assign(tmp.size(), 0.0f);
  const Eigen::Vector3d c = v.center_mm();
  tmp.origin_mm = c - 0.5 * Eigen::Vector3d((tmp.dims[0] - 1) * spacing_mm,
                                            (tmp.dims[1] - 1) * spacing_mm,
                                            (tmp.dims[2] - 1) * spacing_mm);
  for (int z = 0; z < tmp.dims[2]; ++z)
    for (int y = 0; y < tmp.dims[1]; ++y)
      for (int x = 0; x < tmp.dims[0]; ++x) {
        tmp.at(x, y, z) = v.sample_world(tmp.voxel_center(x, y, z));
      }
  return tmp;
}

Volume crop_pad_center(const Volume& v, const std::array<int, 3>& target_dims) {
  check_volume(v);
  for (int d : target_dims) {
    if (d <= 0) throw std::invalid_argument("crop_pad_center: target dims must be positive");
  }
  Volume out;
  out.dims = target_dims;
  out.spacing_mm = v.spacing_mm;
  out.data.assign(out.size(), 0.0f);
  // offset of output voxel (0,0,0) in input index space
  std::array<int, 3> off{};
  for (int i = 0; i < 3; ++i) off[i] = (v.dims[i] - target_dims[i]) / 2;
  out.origin_mm = v.origin_mm + Eigen::Vector3d(off[0] * v.spacing_mm.x(),
                                                off[1] * v.spacing_mm.y(),
                                                off[2] * v.spacing_mm.z());
  for (int z = 0; z < out.dims[2]; ++z) {
    const int sz = z + off[2];
    if (sz < 0 || sz >= v.dims[2]) continue;
    for (int y = 0; y < out.dims[1]; ++y) {
      const int sy = y + off[1];
      if (sy < 0 || sy >= v.dims[1]) continue;
      for (int x = 0; x < out.dims[0]; ++x) {
        const int sx = x + off[0];
        if (sx < 0 || sx >= v.dims[0]) continue;
        out.at(x, y, z) = v.at(sx, sy, sz);
      }
    }
  }
  return out;
}

Volume make_phantom(PhantomKind kind, const std::array<int, 3>& dims,
                    const Eigen::Vector3d& spacing_mm, const PhantomParams& params) {
  Volume v;
  v.dims = dims;
  v.spacing_mm = spacing_mm;
  v.origin_mm = -0.5 * Eigen::Vector3d((dims[0] - 1) * spacing_mm.x(),
                                       (dims[1] - 1) * spacing_mm.y(),
                                       (dims[2] - 1) * spacing_mm.z());
  v.data.assign(v.size(), 0.0f);
  check_volume(v);

  // soft-edge step, width w (mm): 1 inside, 0 outside
  const auto soft = [](double signed_dist_mm, double w) {
    if (signed_dist_mm <= -w) return 1.0;
    if (signed_dist_mm >= w) return 0.0;
    const double t = (signed_dist_mm + w) / (2.0 * w);  // 1 -> 0
    return 1.0 - t * t * (3.0 - 2.0 * t);
  };

  for (int z = 0; z < dims[2]; ++z)
    for (int y = 0; y < dims[1]; ++y)
      for (int x = 0; x < dims[0]; ++x) {
        const Eigen::Vector3d p = v.voxel_center(x, y, z);
        double val = 0.0;
        switch (kind) {
          case PhantomKind::Sphere:
            if (params.radius_mm > 0 && p.norm() <= params.radius_mm) val = params.value;
            break;
          case PhantomKind::Box:
            if ((p.cwiseAbs().array() <= params.half_extent_mm.array()).all()) val = params.value;
            break;
          case PhantomKind::GaussianBlob: {
            const double s = params.radius_mm;
            val = params.value * std::exp(-p.squaredNorm() / (2 * s * s));
            val += 0.5 * params.value *
                   std::exp(-(p - Eigen::Vector3d(s, 0.5 * s, -0.4 * s)).squaredNorm() /
                            (2 * 0.5 * s * 0.5 * s));
            break;
          }
          case PhantomKind::TubeStack: {
            // five "vertebral bodies": z-stacked cylinders with varying radii,
            // intensities and lateral offsets, plus an oblique rod; deliberately
            // asymmetric in all three axes
            const double ext = v.center_mm().z() - v.origin_mm.z();  // half z extent
            struct Tube {
              double zc, halfh, r, ox, oy, intensity;
            };
            const double u = ext / 2.5;  // stack pitch scale
            const Tube tubes[] = {
                {-2.0 * u, 0.42 * u, 0.55 * u, 0.00 * u, 0.00 * u, 1.0},
                {-1.0 * u, 0.42 * u, 0.65 * u, 0.18 * u, 0.05 * u, 0.8},
                {0.0 * u, 0.42 * u, 0.50 * u, 0.30 * u, -0.12 * u, 1.2},
                {1.0 * u, 0.42 * u, 0.70 * u, 0.10 * u, 0.22 * u, 0.9},
                {2.0 * u, 0.42 * u, 0.60 * u, -0.15 * u, 0.10 * u, 1.1},
            };
            const double edge = std::max(1.0, spacing_mm.minCoeff());
            for (const Tube& t : tubes) {
              const double dr = std::hypot(p.x() - t.ox, p.y() - t.oy) - t.r;
              const double dz = std::abs(p.z() - t.zc) - t.halfh;
              val += t.intensity * soft(std::max(dr, dz), edge);
            }
            // oblique rod through the stack, breaks the remaining symmetry
            const Eigen::Vector3d rod_dir = Eigen::Vector3d(0.25, 0.6, 1.0).normalized();
            const Eigen::Vector3d rod_p0(0.5 * u, -0.4 * u, 0.0);
            const Eigen::Vector3d d = (p - rod_p0) - rod_dir.dot(p - rod_p0) * rod_dir;
            val += 1.5 * soft(d.norm() - 0.18 * u, edge);
            break;
          }
        }
        v.at(x, y, z) = static_cast<float>(val);
      }
  return v;
}

PhantomKind phantom_kind_from_string(const std::string& name) {
  if (name == "sphere") return PhantomKind::Sphere;
  if (name == "box") return PhantomKind::Box;
  if (name == "tube_stack") return PhantomKind::TubeStack;
  if (name == "gaussian_blob") return PhantomKind::GaussianBlob;
  throw std::invalid_argument("unknown phantom kind: " + name);
}

}  // namespace radreg
