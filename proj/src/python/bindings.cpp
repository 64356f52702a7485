#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>

#include "radreg/evaluation.hpp"
#include "radreg/projector.hpp"
#include "radreg/registration.hpp"
#include "radreg/rng.hpp"
#include "radreg/similarity.hpp"
#include "radreg/training.hpp"
#include "radreg/volume.hpp"

namespace py = pybind11;
using namespace radreg;

namespace {

py::array_t<float> image_to_numpy(const Image2D& img) {
  py::array_t<float> a({img.height, img.width});
  std::copy(img.data.begin(), img.data.end(), a.mutable_data());
  return a;
}

Image2D numpy_to_image(const py::array_t<float, py::array::c_style | py::array::forcecast>& a) {
  if (a.ndim() != 2) throw std::invalid_argument("image array must be 2-D");
  Image2D img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  std::copy(a.data(), a.data() + img.size(), img.data.begin());
  return img;
}

py::array_t<float> volume_to_numpy(const Volume& v) {
  py::array_t<float> a({v.dims[2], v.dims[1], v.dims[0]});
  std::copy(v.data.begin(), v.data.end(), a.mutable_data());
  return a;
}

py::dict pose_to_dict(const Pose& p) {
  py::dict d;
  d["rotation"] = p.rotation;
  d["translation"] = p.translation;
  return d;
}

Pose pose_from_vec(const Eigen::Vector3d& omega, const Eigen::Vector3d& nu) {
  TangentVec xi;
  xi.omega = omega;
  xi.nu = nu;
  return exp_map(xi);
}

py::dict result_to_dict(const RegistrationResult& r) {
  py::dict d;
  d["final_pose"] = pose_to_dict(r.final_pose);
  d["evaluations"] = r.evaluations;
  d["wall_time_s"] = r.wall_time_s;
  d["status"] = r.status == RegStatus::Failed ? "failed" : "done";
  py::list traj;
  for (const auto& p : r.trajectory) {
    py::dict e;
    e["iteration"] = p.iteration;
    e["objective"] = p.objective;
    e["stage"] = p.stage;
    e["pose"] = pose_to_dict(p.pose);
    traj.append(e);
  }
  d["trajectory"] = traj;
  return d;
}

}  // namespace

PYBIND11_MODULE(_radreg, m) {
  m.doc() = "rigid CT-to-X-ray registration core";

  py::class_<Pose>(m, "Pose")
      .def(py::init<>())
      .def_readwrite("rotation", &Pose::rotation)
      .def_readwrite("translation", &Pose::translation)
      .def("apply", &Pose::apply)
      .def_static("identity", &Pose::identity)
      .def_static("from_tangent", &pose_from_vec, py::arg("omega_rad"), py::arg("nu_mm"));

  m.def("exp_map", [](const Eigen::Vector3d& omega, const Eigen::Vector3d& nu) {
    return pose_from_vec(omega, nu);
  });
  m.def("log_map", [](const Pose& p) {
    const TangentVec xi = log_map(p);
    return py::make_tuple(xi.omega, xi.nu);
  });
  m.def("compose", &compose);
  m.def("inverse", &inverse);
  m.def("geodesic_sq", &geodesic_sq, py::arg("a"), py::arg("b"), py::arg("trans_scale_mm") = 30.0);
  m.def("sample_pose",
        [](double rot_std_deg, const Eigen::Vector3d& trans_std_mm, uint64_t seed) {
          PoseDistribution d;
          d.rot_std_deg.setConstant(rot_std_deg);
          d.trans_std_mm = trans_std_mm;
          return sample_pose(d, seed);
        },
        py::arg("rot_std_deg"), py::arg("trans_std_mm"), py::arg("seed"));
  m.def("pose_to_json", &pose_to_json);
  m.def("pose_from_json", &pose_from_json);

  py::class_<Volume>(m, "Volume")
      .def_property_readonly("dims", [](const Volume& v) { return v.dims; })
      .def_property_readonly("spacing_mm", [](const Volume& v) { return v.spacing_mm; })
      .def_property_readonly("origin_mm", [](const Volume& v) { return v.origin_mm; })
      .def("to_numpy", &volume_to_numpy, "array indexed [z, y, x]");

  m.def("make_phantom",
        [](const std::string& kind, const std::array<int, 3>& dims, const Eigen::Vector3d& spacing,
           double radius_mm, double value) {
          PhantomParams pp;
          pp.radius_mm = radius_mm;
          pp.value = value;
          return make_phantom(phantom_kind_from_string(kind), dims, spacing, pp);
        },
        py::arg("kind"), py::arg("dims"), py::arg("spacing_mm"), py::arg("radius_mm") = 10.0,
        py::arg("value") = 1.0);
  m.def("load_volume", &load_volume);
  m.def("save_volume", &save_volume);

  py::class_<ProjectionGeometry>(m, "ProjectionGeometry")
      .def(py::init<>())
      .def_readwrite("source_to_detector_mm", &ProjectionGeometry::source_to_detector_mm)
      .def_readwrite("source_to_isocenter_mm", &ProjectionGeometry::source_to_isocenter_mm)
      .def_readwrite("detector_px", &ProjectionGeometry::detector_px)
      .def_readwrite("pixel_spacing_mm", &ProjectionGeometry::pixel_spacing_mm)
      .def_readwrite("step_mm", &ProjectionGeometry::step_mm);

  m.def("project",
        [](const Volume& v, const Pose& pose, const ProjectionGeometry& g, int threads) {
          return image_to_numpy(project(v, pose, g, threads));
        },
        py::arg("volume"), py::arg("pose"), py::arg("geometry"), py::arg("threads") = 0);
  m.def("project_with_jacobian",
        [](const Volume& v, const Pose& pose, const ProjectionGeometry& g, int threads) {
          Image2D img;
          PoseJacobianImage jac;
          project_with_jacobian(v, pose, g, &img, &jac, threads);
          py::list chans;
          for (const auto& c : jac.channel) chans.append(image_to_numpy(c));
          return py::make_tuple(image_to_numpy(img), chans);
        },
        py::arg("volume"), py::arg("pose"), py::arg("geometry"), py::arg("threads") = 0);

  m.def("ncc", [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
                  const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
    return ncc(numpy_to_image(a), numpy_to_image(b));
  });
  m.def("gradient_correlation",
        [](const py::array_t<float, py::array::c_style | py::array::forcecast>& a,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& b) {
          return gradient_correlation(numpy_to_image(a), numpy_to_image(b));
        });

  py::class_<EncoderConfig>(m, "EncoderConfig")
      .def(py::init<>())
      .def_readwrite("input_hw", &EncoderConfig::input_hw)
      .def_readwrite("channels", &EncoderConfig::channels)
      .def_readwrite("d_se", &EncoderConfig::d_se)
      .def_readwrite("coupling_layers", &EncoderConfig::coupling_layers);

  py::class_<ParamSet>(m, "ParamSet")
      .def_property_readonly("names", [](const ParamSet& p) { return p.names; })
      .def("all_finite", &ParamSet::all_finite);

  m.def("init_encoder_params", &init_encoder_params, py::arg("config"), py::arg("seed"));
  m.def("load_params", &load_params);
  m.def("save_params", &save_params);

  m.def("train",
        [](const Volume& v, const ProjectionGeometry& geom, const EncoderConfig& enc_cfg,
           int iterations, uint64_t seed, int threads, const std::string& log_path) {
          TrainConfig cfg;
          cfg.iterations = iterations;
          cfg.seed = seed;
          cfg.threads = threads;
          TrainState state(init_encoder_params(enc_cfg, Rng::derive(seed, 0xC0FFEE)));
          std::ofstream log;
          std::ostream* lp = nullptr;
          if (!log_path.empty()) {
            log.open(log_path);
            lp = &log;
          }
          train_loop(state, v, geom, enc_cfg, cfg, lp);
          return state.params;
        },
        py::arg("volume"), py::arg("geometry"), py::arg("config"), py::arg("iterations"),
        py::arg("seed") = 0, py::arg("threads") = 0, py::arg("log_path") = "");

  m.def("register_cmaes",
        [](const Volume& v,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& fixed,
           const Pose& theta0, const ProjectionGeometry& geom, int max_evals, uint64_t seed,
           int threads) {
          PoseSearchConfig sc;
          sc.cmaes.max_evaluations = max_evals;
          sc.cmaes.seed = seed;
          return result_to_dict(
              metric_register_cmaes(v, numpy_to_image(fixed), theta0, geom, Metric::Gc, sc,
                                    threads));
        },
        py::arg("volume"), py::arg("fixed"), py::arg("init_pose"), py::arg("geometry"),
        py::arg("max_evals") = 2000, py::arg("seed") = 0, py::arg("threads") = 0);

  m.def("register_net",
        [](const Volume& v,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& fixed,
           const Pose& theta0, const ProjectionGeometry& geom, const ParamSet& params,
           const EncoderConfig& enc_cfg, int iters, double lr, int threads) {
          return result_to_dict(
              net_register(v, numpy_to_image(fixed), theta0, geom, params, enc_cfg, iters, lr,
                           0.9, threads));
        },
        py::arg("volume"), py::arg("fixed"), py::arg("init_pose"), py::arg("geometry"),
        py::arg("params"), py::arg("config"), py::arg("iters") = 100, py::arg("lr") = 1e-2,
        py::arg("threads") = 0);

  m.def("register_pipeline",
        [](const Volume& v,
           const py::array_t<float, py::array::c_style | py::array::forcecast>& fixed,
           const Pose& theta0, const ProjectionGeometry& geom, const ParamSet& params,
           const EncoderConfig& enc_cfg, int net_iters, double net_lr, int max_evals,
           uint64_t seed, int threads) {
          PoseSearchConfig sc;
          sc.cmaes.max_evaluations = max_evals;
          sc.cmaes.seed = seed;
          return result_to_dict(pipeline_register(v, numpy_to_image(fixed), theta0, geom, params,
                                                  enc_cfg, net_iters, net_lr, sc, threads));
        },
        py::arg("volume"), py::arg("fixed"), py::arg("init_pose"), py::arg("geometry"),
        py::arg("params"), py::arg("config"), py::arg("net_iters") = 100,
        py::arg("net_lr") = 1e-2, py::arg("max_evals") = 2000, py::arg("seed") = 0,
        py::arg("threads") = 0);

  m.def("mtre",
        [](const Pose& pose, const Pose& target, const Volume& v) {
          return mtre(pose, target, default_landmarks(v));
        },
        py::arg("pose"), py::arg("target"), py::arg("volume"));
  m.def("success_rate", &success_rate, py::arg("tres"), py::arg("threshold_mm") = 10.0);
}
