#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "radreg/evaluation.hpp"
#include "radreg/image.hpp"
#include "radreg/projector.hpp"
#include "radreg/registration.hpp"
#include "radreg/rng.hpp"
#include "radreg/tape.hpp"
#include "radreg/training.hpp"
#include "radreg/volume.hpp"

namespace {

using namespace radreg;

struct InputFileError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputFileError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << text;
}

Pose load_pose_opt(const std::string& path) {
  if (path.empty()) return Pose::identity();
  return pose_from_json(read_file(path));
}

ProjectionGeometry load_geom_opt(const std::string& path) {
  if (path.empty()) return ProjectionGeometry{};
  return geometry_from_json(read_file(path));
}

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

int run(int argc, char** argv) {
  CLI::App app{"rigid CT-to-X-ray registration toolkit"};
  app.require_subcommand(1);

  // phantom
  auto* sc_phantom = app.add_subcommand("phantom", "generate an analytic test volume");
  std::string ph_kind = "tube_stack", ph_out;
  std::vector<int> ph_dims{64, 64, 64};
  std::vector<double> ph_spacing{2.0, 2.0, 2.0};
  double ph_radius = 10.0, ph_value = 1.0;
  sc_phantom->add_option("--kind", ph_kind, "sphere | box | tube_stack | gaussian_blob");
  sc_phantom->add_option("--dims", ph_dims, "grid size in voxels (1 or 3 values)")
      ->expected(1, 3);
  sc_phantom->add_option("--spacing", ph_spacing, "voxel spacing in mm (1 or 3 values)")
      ->expected(1, 3);
  sc_phantom->add_option("--radius-mm", ph_radius, "sphere radius / blob sigma in mm");
  sc_phantom->add_option("--value", ph_value, "peak attenuation value");
  sc_phantom->add_option("--out", ph_out, "output basename (.json/.raw pair)")->required();

  // render
  auto* sc_render = app.add_subcommand("render", "ray-cast a projection image");
  std::string rd_vol, rd_pose, rd_geom, rd_out, rd_jac, rd_pgm;
  int rd_threads = 0;
  sc_render->add_option("--volume", rd_vol, "input volume basename")->required();
  sc_render->add_option("--pose", rd_pose, "pose JSON file (default identity)");
  sc_render->add_option("--geom", rd_geom, "geometry JSON file (default built-in)");
  sc_render->add_option("--out", rd_out, "output image basename")->required();
  sc_render->add_option("--jacobian", rd_jac,
                        "also write the 6 pose-derivative channels to <prefix>{0..5}");
  sc_render->add_option("--pgm", rd_pgm, "optional 16-bit PGM preview path");
  sc_render->add_option("--threads", rd_threads, "worker thread cap (0 = all cores)");

  // train
  auto* sc_train = app.add_subcommand("train", "run the online similarity-training loop");
  std::string tr_vol, tr_cfg, tr_enc_cfg, tr_ckpt, tr_log, tr_geom;
  int tr_iters = -1, tr_threads = -1;
  uint64_t tr_seed = 0;
  bool tr_seed_set = false;
  sc_train->add_option("--volume", tr_vol, "input volume basename")->required();
  sc_train->add_option("--geom", tr_geom, "geometry JSON file (default built-in)");
  sc_train->add_option("--config", tr_cfg, "training config JSON file (defaults otherwise)");
  sc_train->add_option("--enc-config", tr_enc_cfg, "encoder config JSON file");
  sc_train->add_option("--out-checkpoint", tr_ckpt, "output checkpoint path")->required();
  sc_train->add_option("--log", tr_log, "metrics JSONL output path");
  sc_train->add_option("--iterations", tr_iters, "override iteration count");
  sc_train->add_option("--seed", tr_seed, "master random seed")
      ->each([&](const std::string&) { tr_seed_set = true; });
  sc_train->add_option("--threads", tr_threads, "worker thread cap (0 = all cores)");

  // register
  auto* sc_reg = app.add_subcommand("register", "align the volume to a fixed image");
  std::string rg_vol, rg_fixed, rg_init, rg_geom, rg_method = "pipeline", rg_ckpt, rg_enc_cfg,
                                                  rg_out;
  int rg_net_iters = 100, rg_max_evals = 2000, rg_threads = 0;
  double rg_net_lr = 1e-2, rg_sigma_rot = 5.0, rg_sigma_trans = 10.0;
  uint64_t rg_seed = 0;
  sc_reg->add_option("--volume", rg_vol, "input volume basename")->required();
  sc_reg->add_option("--fixed", rg_fixed, "fixed image basename")->required();
  sc_reg->add_option("--init-pose", rg_init, "initial pose JSON file (default identity)");
  sc_reg->add_option("--geom", rg_geom, "geometry JSON file (default built-in)");
  sc_reg->add_option("--method", rg_method, "cmaes | net | pipeline");
  sc_reg->add_option("--checkpoint", rg_ckpt, "encoder checkpoint (net/pipeline)");
  sc_reg->add_option("--enc-config", rg_enc_cfg, "encoder config JSON file");
  sc_reg->add_option("--out", rg_out, "result JSON output path")->required();
  sc_reg->add_option("--net-iters", rg_net_iters, "gradient-descent iterations");
  sc_reg->add_option("--net-lr", rg_net_lr, "gradient-descent learning rate");
  sc_reg->add_option("--max-evals", rg_max_evals, "CMA-ES evaluation budget");
  sc_reg->add_option("--sigma-rot", rg_sigma_rot, "CMA-ES initial rotation step (degrees)");
  sc_reg->add_option("--sigma-trans", rg_sigma_trans, "CMA-ES initial translation step (mm)");
  sc_reg->add_option("--seed", rg_seed, "master random seed");
  sc_reg->add_option("--threads", rg_threads, "worker thread cap (0 = all cores)");

  // evaluate
  auto* sc_eval = app.add_subcommand("evaluate", "batch registration benchmark");
  std::string ev_vol, ev_geom, ev_ckpt, ev_enc_cfg, ev_out, ev_table, ev_methods = "initial,cmaes";
  int ev_cases = 30, ev_net_iters = 100, ev_max_evals = 2000, ev_threads = 0;
  double ev_net_lr = 1e-2, ev_rot_std = 20.0;
  std::vector<double> ev_trans_std{30.0, 30.0, 60.0};
  uint64_t ev_seed = 0;
  sc_eval->add_option("--volume", ev_vol, "input volume basename")->required();
  sc_eval->add_option("--geom", ev_geom, "geometry JSON file (default built-in)");
  sc_eval->add_option("--checkpoint", ev_ckpt, "encoder checkpoint (net/pipeline methods)");
  sc_eval->add_option("--enc-config", ev_enc_cfg, "encoder config JSON file");
  sc_eval->add_option("--cases", ev_cases, "number of evaluation cases");
  sc_eval->add_option("--methods", ev_methods, "comma list of initial|cmaes|net|pipeline");
  sc_eval->add_option("--rot-std", ev_rot_std, "test offset rotation std (degrees, per axis)");
  sc_eval->add_option("--trans-std", ev_trans_std, "test offset translation std (mm, x y z)")
      ->expected(1, 3);
  sc_eval->add_option("--net-iters", ev_net_iters, "gradient-descent iterations per case");
  sc_eval->add_option("--net-lr", ev_net_lr, "gradient-descent learning rate");
  sc_eval->add_option("--max-evals", ev_max_evals, "CMA-ES evaluation budget per case");
  sc_eval->add_option("--seed", ev_seed, "master random seed (per-case seeds derived)");
  sc_eval->add_option("--threads", ev_threads, "worker thread cap (0 = all cores)");
  sc_eval->add_option("--out", ev_out, "JSON report output path (one report per line)")
      ->required();
  sc_eval->add_option("--table", ev_table, "text summary table output path");

  // overlay
  auto* sc_overlay = app.add_subcommand("overlay", "fixed image with DRR edges in green");
  std::string ov_fixed, ov_drr, ov_out;
  sc_overlay->add_option("--fixed", ov_fixed, "fixed image basename")->required();
  sc_overlay->add_option("--drr", ov_drr, "DRR image basename")->required();
  sc_overlay->add_option("--out", ov_out, "PNG (or .ppm) output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  if (sc_phantom->parsed()) {
    if (ph_dims.size() == 1) ph_dims = {ph_dims[0], ph_dims[0], ph_dims[0]};
    if (ph_spacing.size() == 1) ph_spacing = {ph_spacing[0], ph_spacing[0], ph_spacing[0]};
    if (ph_dims.size() != 3 || ph_spacing.size() != 3) {
      throw CLI::ValidationError("--dims/--spacing need 1 or 3 values");
    }
    PhantomParams pp;
    pp.radius_mm = ph_radius;
    pp.value = ph_value;
    const Volume v =
        make_phantom(phantom_kind_from_string(ph_kind), {ph_dims[0], ph_dims[1], ph_dims[2]},
                     Eigen::Vector3d(ph_spacing[0], ph_spacing[1], ph_spacing[2]), pp);
    save_volume(v, ph_out);
    std::cerr << "wrote " << ph_out << ".json/.raw (" << ph_dims[0] << "x" << ph_dims[1] << "x"
              << ph_dims[2] << ")\n";
    return 0;
  }

  if (sc_render->parsed()) {
    const Volume v = load_volume(rd_vol);
    const Pose pose = load_pose_opt(rd_pose);
    const ProjectionGeometry geom = load_geom_opt(rd_geom);
    if (rd_jac.empty()) {
      const Image2D img = project(v, pose, geom, rd_threads);
      save_image(img, rd_out);
      if (!rd_pgm.empty()) save_pgm16(img, rd_pgm);
    } else {
      Image2D img;
      PoseJacobianImage jac;
      project_with_jacobian(v, pose, geom, &img, &jac, rd_threads);
      save_image(img, rd_out);
      if (!rd_pgm.empty()) save_pgm16(img, rd_pgm);
      for (int k = 0; k < 6; ++k) save_image(jac.channel[k], rd_jac + std::to_string(k));
    }
    std::cerr << "wrote " << rd_out << ".json/.raw\n";
    return 0;
  }

  if (sc_train->parsed()) {
    const Volume v = load_volume(tr_vol);
    const ProjectionGeometry geom = load_geom_opt(tr_geom);
    TrainConfig cfg;
    if (!tr_cfg.empty()) cfg = train_config_from_json(read_file(tr_cfg));
    if (tr_iters >= 0) cfg.iterations = tr_iters;
    if (tr_seed_set) cfg.seed = tr_seed;
    if (tr_threads >= 0) cfg.threads = tr_threads;
    EncoderConfig enc_cfg;
    if (!tr_enc_cfg.empty()) enc_cfg = encoder_config_from_json(read_file(tr_enc_cfg));
    enc_cfg.decomp_epsilon = cfg.epsilon;
    TrainState state(init_encoder_params(enc_cfg, Rng::derive(cfg.seed, 0xC0FFEE)));
    std::ofstream log;
    std::ostream* log_ptr = nullptr;
    if (!tr_log.empty()) {
      log.open(tr_log);
      if (!log) throw std::runtime_error("cannot write " + tr_log);
      log_ptr = &log;
    }
    train_loop(state, v, geom, enc_cfg, cfg, log_ptr, tr_ckpt);
    save_params(state.params, tr_ckpt);
    std::cerr << "trained " << cfg.iterations << " steps; wrote " << tr_ckpt << "\n";
    return 0;
  }

  if (sc_reg->parsed()) {
    const Volume v = load_volume(rg_vol);
    const Image2D fixed = load_image(rg_fixed);
    const Pose theta0 = load_pose_opt(rg_init);
    const ProjectionGeometry geom = load_geom_opt(rg_geom);
    PoseSearchConfig sc;
    sc.cmaes.max_evaluations = rg_max_evals;
    sc.cmaes.seed = rg_seed;
    sc.sigma0_rot_deg = rg_sigma_rot;
    sc.sigma0_trans_mm = rg_sigma_trans;
    RegistrationResult res;
    if (rg_method == "cmaes") {
      res = metric_register_cmaes(v, fixed, theta0, geom, Metric::Gc, sc, rg_threads);
    } else if (rg_method == "net" || rg_method == "pipeline") {
      if (rg_ckpt.empty()) throw CLI::ValidationError("--checkpoint required for " + rg_method);
      const ParamSet params = load_params(rg_ckpt);
      EncoderConfig enc_cfg;
      if (!rg_enc_cfg.empty()) enc_cfg = encoder_config_from_json(read_file(rg_enc_cfg));
      res = rg_method == "net"
                ? net_register(v, fixed, theta0, geom, params, enc_cfg, rg_net_iters, rg_net_lr,
                               0.9, rg_threads)
                : pipeline_register(v, fixed, theta0, geom, params, enc_cfg, rg_net_iters,
                                    rg_net_lr, sc, rg_threads);
    } else {
      throw CLI::ValidationError("--method must be cmaes, net, or pipeline");
    }
    write_file(rg_out, registration_result_to_json(res) + "\n");
    std::cerr << "registration " << (res.status == RegStatus::Failed ? "failed" : "done")
              << "; wrote " << rg_out << "\n";
    if (res.status == RegStatus::Failed) return 4;
    return 0;
  }

  if (sc_eval->parsed()) {
    const Volume v = load_volume(ev_vol);
    const ProjectionGeometry geom = load_geom_opt(ev_geom);
    const std::vector<std::string> methods = split_csv(ev_methods);
    if (methods.empty()) throw CLI::ValidationError("--methods must name at least one method");
    ParamSet params;
    EncoderConfig enc_cfg;
    const ParamSet* pp = nullptr;
    const EncoderConfig* pc = nullptr;
    if (!ev_ckpt.empty()) {
      params = load_params(ev_ckpt);
      if (!ev_enc_cfg.empty()) enc_cfg = encoder_config_from_json(read_file(ev_enc_cfg));
      pp = &params;
      pc = &enc_cfg;
    }
    BatchEvalConfig cfg;
    cfg.n_cases = ev_cases;
    cfg.seed = ev_seed;
    cfg.net_iters = ev_net_iters;
    cfg.net_lr = ev_net_lr;
    cfg.search.cmaes.max_evaluations = ev_max_evals;
    cfg.threads = ev_threads;
    cfg.test_dist.rot_std_deg.setConstant(ev_rot_std);
    if (ev_trans_std.size() == 1) ev_trans_std = {ev_trans_std[0], ev_trans_std[0], ev_trans_std[0]};
    if (ev_trans_std.size() != 3) throw CLI::ValidationError("--trans-std needs 1 or 3 values");
    cfg.test_dist.trans_std_mm = Eigen::Vector3d(ev_trans_std[0], ev_trans_std[1], ev_trans_std[2]);
    const auto reports = batch_evaluate(v, geom, pp, pc, cfg, methods);
    std::string out_text;
    std::vector<TableRow> rows;
    for (const auto& r : reports) {
      out_text += eval_report_to_json(r) + "\n";
      rows.push_back(report_to_row(r));
    }
    write_file(ev_out, out_text);
    if (!ev_table.empty()) write_file(ev_table, render_report_table(rows));
    std::cerr << "evaluated " << ev_cases << " cases; wrote " << ev_out << "\n";
    return 0;
  }

  if (sc_overlay->parsed()) {
    const Image2D fixed = load_image(ov_fixed);
    const Image2D drr = load_image(ov_drr);
    save_rgb(overlay_edges(fixed, drr), ov_out);
    std::cerr << "wrote " << ov_out << "\n";
    return 0;
  }

  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const CLI::Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const InputFileError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 3;
  } catch (const radreg::CorruptFileError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 3;
  } catch (const radreg::UnsupportedFormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 3;
  } catch (const radreg::NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  }
}
