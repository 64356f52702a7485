#include "radreg/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <thread>

#include "json.hpp"
#include "radreg/rng.hpp"
#include "radreg/similarity.hpp"

namespace radreg {

LandmarkSet default_landmarks(const Volume& v) {
  LandmarkSet pts;
  const Eigen::Vector3d lo = v.origin_mm;
  const Eigen::Vector3d hi = v.voxel_center(v.dims[0] - 1, v.dims[1] - 1, v.dims[2] - 1);
  for (int i = 0; i < 8; ++i) {
    pts.emplace_back(i & 1 ? hi.x() : lo.x(), i & 2 ? hi.y() : lo.y(), i & 4 ? hi.z() : lo.z());
  }
  pts.push_back(0.5 * (lo + hi));
  return pts;
}

double mtre(const Pose& pose, const Pose& target, const LandmarkSet& landmarks) {
  if (landmarks.empty()) throw std::invalid_argument("mtre: empty landmark set");
  double acc = 0.0;
  for (const auto& p : landmarks) acc += (pose.apply(p) - target.apply(p)).norm();
  return acc / static_cast<double>(landmarks.size());
}

std::vector<PercentileStat> percentile_stats(const std::vector<double>& tres,
                                             const std::vector<double>& fractions) {
  if (tres.empty()) throw std::invalid_argument("percentile_stats: empty list");
  std::vector<double> sorted = tres;
  std::sort(sorted.begin(), sorted.end());
  std::vector<PercentileStat> out;
  for (double f : fractions) {
    const auto k = static_cast<size_t>(
        std::min<double>(sorted.size(), std::ceil(f * static_cast<double>(sorted.size()))));
    PercentileStat s;
    s.fraction = f;
    if (k == 0) {
      out.push_back(s);
      continue;
    }
    double mean = 0.0;
    for (size_t i = 0; i < k; ++i) mean += sorted[i];
    mean /= static_cast<double>(k);
    double var = 0.0;
    for (size_t i = 0; i < k; ++i) var += (sorted[i] - mean) * (sorted[i] - mean);
    var /= static_cast<double>(k);
    s.mean = mean;
    s.stddev = std::sqrt(var);
    out.push_back(s);
  }
  return out;
}

double success_rate(const std::vector<double>& tres, double threshold_mm) {
  if (tres.empty()) throw std::invalid_argument("success_rate: empty list");
  size_t ok = 0;
  for (double t : tres) {
    if (t < threshold_mm) ++ok;  // strictly smaller
  }
  return 100.0 * static_cast<double>(ok) / static_cast<double>(tres.size());
}

std::string eval_report_to_json(const EvalReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["case_count"] = r.case_count;
  j["sr_percent"] = r.sr;
  nlohmann::json tres = nlohmann::json::array();
  for (double t : r.tres) {
    if (std::isfinite(t)) {
      tres.push_back(t);
    } else {
      tres.push_back("inf");
    }
  }
  j["tre_mm"] = std::move(tres);
  nlohmann::json stats = nlohmann::json::array();
  for (const auto& s : r.stats) {
    stats.push_back({{"fraction", s.fraction}, {"mean", s.mean}, {"std", s.stddev}});
  }
  j["mtre_percentiles"] = std::move(stats);
  if (!r.config_echo.empty()) j["config"] = nlohmann::json::parse(r.config_echo);
  return j.dump();
}

TableRow report_to_row(const EvalReport& r) {
  TableRow row;
  row.method = r.method;
  for (const auto& s : r.stats) {
    if (s.fraction == 0.95) {
      row.top95_mean = s.mean;
      row.top95_std = s.stddev;
    } else if (s.fraction == 0.75) {
      row.top75_mean = s.mean;
      row.top75_std = s.stddev;
    } else if (s.fraction == 0.50) {
      row.top50_mean = s.mean;
      row.top50_std = s.stddev;
    }
  }
  row.sr = r.sr;
  row.has_sr = r.method != "initial";
  return row;
}

std::string render_report_table(const std::vector<TableRow>& rows) {
  std::string out = "Method | mTRE(mm) Top 95% | Top 75% | Top 50% | SR(%)\n";
  char buf[256];
  for (const auto& r : rows) {
    if (r.has_stats) {
      std::snprintf(buf, sizeof(buf), "%s | %.1f±%.1f | %.1f±%.1f | %.1f±%.1f | ",
                    r.method.c_str(), r.top95_mean, r.top95_std, r.top75_mean, r.top75_std,
                    r.top50_mean, r.top50_std);
    } else {
      std::snprintf(buf, sizeof(buf), "%s |  |  |  | ", r.method.c_str());
    }
    out += buf;
    if (r.has_sr) {
      std::snprintf(buf, sizeof(buf), "%.1f", r.sr);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

std::vector<EvalReport> batch_evaluate(const Volume& v, const ProjectionGeometry& geom,
                                       const ParamSet* params, const EncoderConfig* enc_cfg,
                                       const BatchEvalConfig& cfg,
                                       const std::vector<std::string>& methods) {
  if (cfg.n_cases < 1) throw std::invalid_argument("batch_evaluate: n_cases must be >= 1");
  for (const auto& m : methods) {
    if (m != "initial" && m != "cmaes" && m != "net" && m != "pipeline") {
      throw std::invalid_argument("batch_evaluate: unknown method " + m);
    }
    if ((m == "net" || m == "pipeline") && (params == nullptr || enc_cfg == nullptr)) {
      throw std::invalid_argument("batch_evaluate: method " + m + " requires a checkpoint");
    }
  }

  // shared fixture: identical case set for every method
  struct Case {
    Pose theta_t;
    Pose theta0;
    Image2D ix;
    uint64_t seed;
  };
  std::vector<Case> cases(cfg.n_cases);
  for (int i = 0; i < cfg.n_cases; ++i) {
    const uint64_t cs = Rng::derive(cfg.seed, static_cast<uint64_t>(i));
    cases[i].seed = cs;
    cases[i].theta_t = sample_pose(cfg.test_dist, Rng::derive(cs, 1));
    cases[i].theta0 = Pose::identity();
    cases[i].ix = project(v, cases[i].theta_t, geom, cfg.threads);
  }
  const LandmarkSet landmarks = default_landmarks(v);

  const auto run_case = [&](const std::string& method, const Case& c) -> double {
    try {
      if (method == "initial") {
        return mtre(c.theta0, c.theta_t, landmarks);
      }
      if (method == "cmaes") {
        PoseSearchConfig sc = cfg.search;
        sc.cmaes.seed = Rng::derive(c.seed, 2);
        const auto r = metric_register_cmaes(v, c.ix, c.theta0, geom, Metric::Gc, sc, 1);
        if (r.status == RegStatus::Failed) return std::numeric_limits<double>::infinity();
        return mtre(r.final_pose, c.theta_t, landmarks);
      }
      if (method == "net") {
        const auto r = net_register(v, c.ix, c.theta0, geom, *params, *enc_cfg, cfg.net_iters,
                                    cfg.net_lr, 0.9, 1);
        if (r.status == RegStatus::Failed) return std::numeric_limits<double>::infinity();
        return mtre(r.final_pose, c.theta_t, landmarks);
      }
      PoseSearchConfig sc = cfg.search;
      sc.cmaes.seed = Rng::derive(c.seed, 2);
      const auto r = pipeline_register(v, c.ix, c.theta0, geom, *params, *enc_cfg, cfg.net_iters,
                                       cfg.net_lr, sc, 1);
      if (r.status == RegStatus::Failed) return std::numeric_limits<double>::infinity();
      return mtre(r.final_pose, c.theta_t, landmarks);
    } catch (const std::exception&) {
      return std::numeric_limits<double>::infinity();
    }
  };

  std::vector<EvalReport> reports;
  for (const auto& method : methods) {
    EvalReport rep;
    rep.method = method;
    rep.case_count = cfg.n_cases;
    rep.tres.assign(cfg.n_cases, 0.0);

    int n_threads = cfg.threads > 0 ? cfg.threads
                                    : static_cast<int>(std::thread::hardware_concurrency());
    n_threads = std::max(1, std::min(n_threads, cfg.n_cases));
    if (method == "initial" || n_threads == 1) {
      for (int i = 0; i < cfg.n_cases; ++i) rep.tres[i] = run_case(method, cases[i]);
    } else {
      std::vector<std::thread> pool;
      std::atomic<int> next{0};
      for (int t = 0; t < n_threads; ++t) {
        pool.emplace_back([&] {
          for (int i = next.fetch_add(1); i < cfg.n_cases; i = next.fetch_add(1)) {
            rep.tres[i] = run_case(method, cases[i]);
          }
        });
      }
      for (auto& th : pool) th.join();
    }

    // +inf TREs sort last and count against SR
    rep.stats = percentile_stats(rep.tres);
    rep.sr = success_rate(rep.tres);
    nlohmann::json echo;
    echo["n_cases"] = cfg.n_cases;
    echo["seed"] = cfg.seed;
    echo["rot_std_deg"] = {cfg.test_dist.rot_std_deg.x(), cfg.test_dist.rot_std_deg.y(),
                           cfg.test_dist.rot_std_deg.z()};
    echo["trans_std_mm"] = {cfg.test_dist.trans_std_mm.x(), cfg.test_dist.trans_std_mm.y(),
                            cfg.test_dist.trans_std_mm.z()};
    echo["max_evaluations"] = cfg.search.cmaes.max_evaluations;
    echo["net_iters"] = cfg.net_iters;
    rep.config_echo = echo.dump();
    reports.push_back(std::move(rep));
  }
  return reports;
}

ImageRGB overlay_edges(const Image2D& fixed, const Image2D& drr) {
  if (fixed.height != drr.height || fixed.width != drr.width) {
    throw std::invalid_argument("overlay_edges: image dims mismatch");
  }
  Image2D dx, dy;
  sobel(drr, &dx, &dy);
  // border magnitudes are zero-padding artifacts, not edges
  std::vector<float> mag(fixed.size(), 0.0f);
  for (int v = 1; v < fixed.height - 1; ++v)
    for (int u = 1; u < fixed.width - 1; ++u) {
      const size_t i = static_cast<size_t>(v) * fixed.width + u;
      mag[i] = std::hypot(dx.data[i], dy.data[i]);
    }
  std::vector<float> sorted = mag;
  const size_t k = static_cast<size_t>(0.9 * static_cast<double>(sorted.size()));
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<long>(k), sorted.end());
  const float thr = sorted[k];

  float lo = fixed.data.empty() ? 0.0f : fixed.data[0], hi = lo;
  for (float v : fixed.data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const float scale = hi > lo ? 255.0f / (hi - lo) : 0.0f;

  ImageRGB out(fixed.height, fixed.width);
  for (int v = 0; v < fixed.height; ++v)
    for (int u = 0; u < fixed.width; ++u) {
      unsigned char* px = out.px(v, u);
      const size_t i = static_cast<size_t>(v) * fixed.width + u;
      if (mag[i] >= thr && mag[i] > 0) {
        px[0] = 0;
        px[1] = 255;
        px[2] = 0;
      } else {
        const auto g = static_cast<unsigned char>(std::lround((fixed.data[i] - lo) * scale));
        px[0] = px[1] = px[2] = g;
      }
    }
  return out;
}

}  // namespace radreg
