#include "phyrec/harness.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "phyrec/io.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace phyrec {

// ---------------------------------------------------------------------------
// Scene catalog
// ---------------------------------------------------------------------------

std::vector<std::string> scene_names() {
  return {"elastic-cube-drop",      "elastic-torus-bounce",
          "plasticine-cube-smash",  "newtonian-sphere-splash",
          "sand-column-collapse",   "nonnewtonian-blob-drop"};
}

SceneSpec scene_catalog(const std::string& name) {
  SceneSpec s;
  s.name = name;
  if (name == "elastic-cube-drop") {
    s.shape = Shape::Cube;
    // low, fast drop: floor impact lands inside the training window so the
    // observations actually carry a Poisson-ratio (bulging) signal
    s.center = Vec3(0.5, 0.35, 0.5);
    s.scale = 0.18;
    s.material_true.model = MaterialModel::Elastic;
    s.material_true.E = 1e5;
    s.material_true.nu = 0.3;
    s.material_init = s.material_true;
    s.material_init.E = 3e4;
    s.material_init.nu = 0.2;
    s.v0_true = Vec3(0.3, -1.5, 0.1);
  } else if (name == "elastic-torus-bounce") {
    s.shape = Shape::Torus;
    s.center = Vec3(0.5, 0.42, 0.5);
    s.scale = 0.22;
    s.material_true.model = MaterialModel::Elastic;
    s.material_true.E = 1e5;
    s.material_true.nu = 0.3;
    s.material_init = s.material_true;
    s.material_init.E = 3e4;
    s.material_init.nu = 0.2;
    s.v0_true = Vec3(-0.2, -1.5, 0.2);
  } else if (name == "plasticine-cube-smash") {
    s.shape = Shape::Cube;
    s.center = Vec3(0.5, 0.5, 0.5);
    s.scale = 0.16;
    s.material_true.model = MaterialModel::Plasticine;
    s.material_true.E = 1e5;
    s.material_true.nu = 0.3;
    s.material_true.tau_y = 3e3;
    s.material_init = s.material_true;
    s.material_init.E = 3e4;
    s.material_init.nu = 0.2;
    s.material_init.tau_y = 1e3;
    s.v0_true = Vec3(0.0, -2.5, 0.0);
  } else if (name == "newtonian-sphere-splash") {
    s.shape = Shape::Sphere;
    s.center = Vec3(0.5, 0.45, 0.5);
    s.scale = 0.12;
    s.material_true.model = MaterialModel::Newtonian;
    s.material_true.mu_visc = 100.0;
    s.material_true.kappa = 1e5;
    s.material_init = s.material_true;
    s.material_init.mu_visc = 10.0;
    s.material_init.kappa = 3e4;
    s.v0_true = Vec3(0.2, -1.8, 0.0);
  } else if (name == "sand-column-collapse") {
    s.shape = Shape::Cube;
    s.center = Vec3(0.5, 0.42, 0.5);
    s.scale = 0.16;
    s.material_true.model = MaterialModel::Sand;
    s.material_true.theta_fric = 35.0;
    s.material_init = s.material_true;
    s.material_init.theta_fric = 20.0;
    s.v0_true = Vec3(0.0, -1.0, 0.0);
  } else if (name == "nonnewtonian-blob-drop") {
    s.shape = Shape::Sphere;
    s.center = Vec3(0.5, 0.45, 0.5);
    s.scale = 0.13;
    s.material_true.model = MaterialModel::NonNewtonian;
    s.material_true.mu_visc = 1e4;
    s.material_true.kappa = 1e5;
    s.material_true.tau_y = 30.0;
    s.material_true.eta = 1.0;
    s.material_init = s.material_true;
    s.material_init.mu_visc = 3e3;
    s.material_init.kappa = 3e4;
    s.material_init.tau_y = 10.0;
    s.material_init.eta = 3.0;
    s.v0_true = Vec3(0.1, -1.5, 0.0);
  } else {
    throw ConfigError("unknown scene: " + name);
  }
  return s;
}

// ---------------------------------------------------------------------------
// Spec
// ---------------------------------------------------------------------------

void ExperimentSpec::validate() const {
  if (camera_count != ring_cameras && camera_count != 3)
    throw ConfigError("camera_count must be 3 (sparse) or the full ring");
  if (ring_cameras < 3) throw ConfigError("ring needs at least 3 cameras");
  if (frames < 2) throw ConfigError("need at least two frames");
  if (train_frames < 2 || train_frames >= frames)
    throw ConfigError("train_frames must leave at least one test frame");
  if (!(fps > 0)) throw ConfigError("fps must be positive");
  if (strategies.empty()) throw ConfigError("no strategies selected");
  if (seeds.empty()) throw ConfigError("no seeds selected");
  if (!(iteration_scale > 0)) throw ConfigError("iteration_scale must be positive");
}

std::vector<Camera> camera_ring(const ExperimentSpec& spec) {
  std::vector<Camera> cams;
  for (int c = 0; c < spec.ring_cameras; ++c)
    cams.push_back(make_ring_camera(
        Vec3(0.5, 0.5, 0.5), 1.5, 15.0 * M_PI / 180.0,
        2.0 * M_PI * c / spec.ring_cameras, spec.focal, spec.image_size,
        spec.image_size));
  return cams;
}

std::vector<int> training_camera_indices(const ExperimentSpec& spec) {
  std::vector<int> idx;
  if (spec.camera_count == spec.ring_cameras) {
    for (int c = 0; c < spec.ring_cameras; ++c) idx.push_back(c);
  } else {
    idx = {1, 5, 9};  // the sparse subset of the 10-ring
  }
  return idx;
}

namespace {

template <typename T>
void read_key(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : allowed)
      if (item.key() == k) ok = true;
    if (!ok) throw ConfigError("unknown key '" + item.key() + "' in " + where);
  }
}

}  // namespace

ExperimentSpec load_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open spec file: " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw ConfigError("spec parse error in " + path + ": " + e.what());
  }
  check_keys(j,
             {"scene", "cameras", "frames", "fps", "train_frames",
              "image_size", "focal", "grid_resolution", "particles_per_cell",
              "sigma_obs", "occlusion_radius", "noise_seed", "strategies",
              "seeds", "iteration_scale", "memory_budget", "weights", "stage0",
              "output_dir"},
             path);

  ExperimentSpec spec;
  std::string scene = "elastic-cube-drop";
  read_key(j, "scene", scene);
  spec.scene = scene_catalog(scene);
  read_key(j, "cameras", spec.camera_count);
  read_key(j, "frames", spec.frames);
  read_key(j, "fps", spec.fps);
  read_key(j, "train_frames", spec.train_frames);
  read_key(j, "image_size", spec.image_size);
  read_key(j, "focal", spec.focal);
  read_key(j, "grid_resolution", spec.grid_resolution);
  read_key(j, "particles_per_cell", spec.particles_per_cell);
  read_key(j, "sigma_obs", spec.sigma_obs);
  read_key(j, "occlusion_radius", spec.occlusion_radius);
  read_key(j, "noise_seed", spec.noise_seed);
  read_key(j, "iteration_scale", spec.iteration_scale);
  read_key(j, "memory_budget", spec.memory_budget);
  read_key(j, "output_dir", spec.output_dir);
  if (j.contains("strategies")) {
    spec.strategies.clear();
    for (const auto& s : j.at("strategies"))
      spec.strategies.push_back(strategy_from_string(s.get<std::string>()));
  }
  if (j.contains("seeds")) {
    spec.seeds.clear();
    for (const auto& s : j.at("seeds")) spec.seeds.push_back(s.get<std::uint64_t>());
  }
  if (j.contains("weights")) {
    const json& w = j.at("weights");
    check_keys(w, {"lambda_img", "lambda_cd", "lambda_l1", "lambda_ssim",
                   "lambda_alpha"},
               "weights");
    read_key(w, "lambda_img", spec.weights.lambda_img);
    read_key(w, "lambda_cd", spec.weights.lambda_cd);
    read_key(w, "lambda_l1", spec.weights.lambda_l1);
    read_key(w, "lambda_ssim", spec.weights.lambda_ssim);
    read_key(w, "lambda_alpha", spec.weights.lambda_alpha);
  }
  if (j.contains("stage0")) {
    const json& s = j.at("stage0");
    check_keys(s,
               {"hull_resolution", "silhouette_threshold", "particle_count",
                "control_count", "iterations", "lr_positions", "lr_controls",
                "lr_displacements", "lr_appearance", "lambda_temp"},
               "stage0");
    read_key(s, "hull_resolution", spec.stage0.hull_resolution);
    read_key(s, "silhouette_threshold", spec.stage0.silhouette_threshold);
    read_key(s, "particle_count", spec.stage0.particle_count);
    read_key(s, "control_count", spec.stage0.control_count);
    read_key(s, "iterations", spec.stage0.iterations);
    read_key(s, "lr_positions", spec.stage0.lr_positions);
    read_key(s, "lr_controls", spec.stage0.lr_controls);
    read_key(s, "lr_displacements", spec.stage0.lr_displacements);
    read_key(s, "lr_appearance", spec.stage0.lr_appearance);
    read_key(s, "lambda_temp", spec.stage0.lambda_temp);
  }
  spec.validate();
  return spec;
}

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

GroundTruth generate_ground_truth(const ExperimentSpec& spec) {
  spec.validate();
  const SceneSpec& sc = spec.scene;

  GroundTruth gt;
  gt.scene.particles =
      sample_shape(sc.shape, sc.center, sc.scale, spec.particles_per_cell,
                   spec.grid_resolution, sc.density, 7);
  gt.scene.v0 = sc.v0_true;
  gt.scene.material = sc.material_true;
  gt.scene.grid_resolution = spec.grid_resolution;
  gt.scene.frame_dt = 1.0 / spec.fps;
  gt.scene.boundary = sc.boundary;
  gt.scene.ground_friction = sc.ground_friction;
  gt.scene.density = sc.density;
  gt.cameras = camera_ring(spec);

  std::vector<double> ts;
  for (int t = 0; t < spec.frames; ++t) ts.push_back(t / spec.fps);
  try {
    gt.trajectory = simulate(gt.scene, gt.scene.material, gt.scene.v0, ts);
  } catch (const DivergenceError& e) {
    throw ConfigError(std::string("ground-truth simulation diverged: ") +
                      e.what());
  }

  std::mt19937_64 rng(spec.noise_seed);
  std::normal_distribution<double> jitter(0.0, spec.sigma_obs);
  gt.observations.timestamps = ts;
  for (int t = 0; t < spec.frames; ++t) {
    const ParticleSet& frame = gt.trajectory.frames[std::size_t(t)];
    std::vector<AlphaImage> alpha_row;
    std::vector<std::vector<Vec3>> cloud_row;
    for (const Camera& cam : gt.cameras) {
      alpha_row.push_back(render_alpha(frame, cam));
      std::vector<Vec3> cloud;
      for (int i :
           visible_indices(frame.positions, cam, spec.occlusion_radius)) {
        Vec3 p = frame.positions[std::size_t(i)];
        p += Vec3(jitter(rng), jitter(rng), jitter(rng));
        cloud.push_back(p);
      }
      cloud_row.push_back(std::move(cloud));
    }
    gt.observations.alpha.push_back(std::move(alpha_row));
    gt.observations.visible.push_back(std::move(cloud_row));
  }
  return gt;
}

void write_ground_truth(const GroundTruth& truth, const std::string& dir) {
  fs::create_directories(dir + "/alpha");
  fs::create_directories(dir + "/points");
  export_trajectory(truth.trajectory, dir + "/frames");
  for (std::size_t t = 0; t < truth.observations.alpha.size(); ++t)
    for (std::size_t c = 0; c < truth.observations.alpha[t].size(); ++c) {
      std::ostringstream base;
      base << "f" << t << "_c" << c;
      write_pgm(dir + "/alpha/" + base.str() + ".pgm",
                truth.observations.alpha[t][c]);
      const std::vector<Vec3>& cloud = truth.observations.visible[t][c];
      ParticleSet ps;
      ps.resize(cloud.size());
      for (std::size_t i = 0; i < cloud.size(); ++i) {
        ps.positions[i] = cloud[i];
        ps.radii[i] = 1e-3;
        ps.opacities[i] = 1.0;
      }
      write_ply(dir + "/points/" + base.str() + ".ply", ps);
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

std::vector<std::pair<std::string, double>> param_errors(
    const MaterialParams& fitted, const MaterialParams& truth) {
  if (fitted.model != truth.model)
    throw ContractError("param_errors: differing material models");
  auto log10_err = [](double a, double b) {
    return std::abs(std::log10(a) - std::log10(b));
  };
  std::vector<std::pair<std::string, double>> out;
  switch (truth.model) {
    case MaterialModel::Elastic:
      out = {{"log10_E", log10_err(fitted.E, truth.E)},
             {"nu", std::abs(fitted.nu - truth.nu)}};
      break;
    case MaterialModel::Newtonian:
      out = {{"log10_mu", log10_err(fitted.mu_visc, truth.mu_visc)},
             {"log10_kappa", log10_err(fitted.kappa, truth.kappa)}};
      break;
    case MaterialModel::NonNewtonian:
      out = {{"log10_mu", log10_err(fitted.mu_visc, truth.mu_visc)},
             {"log10_kappa", log10_err(fitted.kappa, truth.kappa)},
             {"log10_tau_y", log10_err(fitted.tau_y, truth.tau_y)},
             {"log10_eta", log10_err(fitted.eta, truth.eta)}};
      break;
    case MaterialModel::Plasticine:
      out = {{"log10_E", log10_err(fitted.E, truth.E)},
             {"nu", std::abs(fitted.nu - truth.nu)},
             {"log10_tau_y", log10_err(fitted.tau_y, truth.tau_y)}};
      break;
    case MaterialModel::Sand:
      out = {{"theta_fric",
              std::abs(fitted.theta_fric - truth.theta_fric)}};
      break;
  }
  return out;
}

double psnr(const AlphaImage& a, const AlphaImage& b) {
  if (a.width != b.width || a.height != b.height)
    throw ContractError("psnr: image dimensions differ");
  double mse = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    mse += d * d;
  }
  mse /= double(a.values.size());
  if (mse <= 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(1.0 / mse));
}

namespace {

std::vector<Vec3> subsample(const std::vector<Vec3>& pts, std::size_t k) {
  if (pts.size() <= k) return pts;
  std::vector<Vec3> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(pts[i * pts.size() / k]);
  return out;
}

}  // namespace

MetricsReport compute_metrics(const FitResult& fit, const GroundTruth& truth,
                              const ExperimentSpec& spec) {
  MetricsReport m;
  m.param_mae = param_errors(fit.state.material, spec.scene.material_true);
  m.v0_mae = (fit.state.v0 - spec.scene.v0_true).cwiseAbs().mean();

  Scene scene = truth.scene;
  scene.particles = fit.state.particles;
  scene.v0 = fit.state.v0;

  Trajectory traj;
  try {
    traj = simulate(scene, fit.state.material, fit.state.v0,
                    truth.trajectory.timestamps);
  } catch (const std::runtime_error&) {
    m.diverged = true;
    const double inf = std::numeric_limits<double>::infinity();
    m.cd_future = m.emd_future = inf;
    m.psnr_seen = m.ssim_seen = m.psnr_novel = m.ssim_novel = -inf;
    return m;
  }

  const std::vector<int> seen = training_camera_indices(spec);
  std::vector<int> novel;
  for (int c = 0; c < spec.ring_cameras; ++c)
    if (std::find(seen.begin(), seen.end(), c) == seen.end())
      novel.push_back(c);

  double cd = 0, emd_sum = 0;
  double psnr_seen = 0, ssim_seen = 0, psnr_novel = 0, ssim_novel = 0;
  const int test_count = spec.frames - spec.train_frames;
  for (int t = spec.train_frames; t < spec.frames; ++t) {
    const ParticleSet& sim = traj.frames[std::size_t(t)];
    const ParticleSet& ref = truth.trajectory.frames[std::size_t(t)];
    cd += chamfer(sim.positions, ref.positions);
    // exact transport wants equal point counts
    const std::size_t k =
        std::min({sim.positions.size(), ref.positions.size(),
                  std::size_t(256)});
    emd_sum += emd(subsample(sim.positions, k), subsample(ref.positions, k))
                   .value;
    for (int c : seen) {
      const AlphaImage img = render_alpha(sim, truth.cameras[std::size_t(c)]);
      const AlphaImage& obs = truth.observations.alpha[std::size_t(t)][std::size_t(c)];
      psnr_seen += psnr(img, obs);
      ssim_seen += 1.0 - loss_ssim(img, obs);
    }
    for (int c : novel) {
      const AlphaImage img = render_alpha(sim, truth.cameras[std::size_t(c)]);
      const AlphaImage& obs = truth.observations.alpha[std::size_t(t)][std::size_t(c)];
      psnr_novel += psnr(img, obs);
      ssim_novel += 1.0 - loss_ssim(img, obs);
    }
  }
  m.cd_future = 1e3 * cd / double(test_count);
  m.emd_future = emd_sum / double(test_count);
  m.psnr_seen = psnr_seen / double(test_count * int(seen.size()));
  m.ssim_seen = ssim_seen / double(test_count * int(seen.size()));
  if (!novel.empty()) {
    m.psnr_novel = psnr_novel / double(test_count * int(novel.size()));
    m.ssim_novel = ssim_novel / double(test_count * int(novel.size()));
  } else {
    m.psnr_novel = m.ssim_novel = std::numeric_limits<double>::quiet_NaN();
  }
  return m;
}

// ---------------------------------------------------------------------------
// Benchmark driver
// ---------------------------------------------------------------------------

namespace {

ObservationSet training_observations(const GroundTruth& truth,
                                     const ExperimentSpec& spec) {
  const std::vector<int> idx = training_camera_indices(spec);
  ObservationSet train;
  for (int t = 0; t < spec.train_frames; ++t) {
    train.timestamps.push_back(truth.observations.timestamps[std::size_t(t)]);
    std::vector<AlphaImage> row;
    for (int c : idx)
      row.push_back(truth.observations.alpha[std::size_t(t)][std::size_t(c)]);
    train.alpha.push_back(std::move(row));
  }
  return train;
}

std::vector<Camera> training_cameras(const GroundTruth& truth,
                                     const ExperimentSpec& spec) {
  std::vector<Camera> cams;
  for (int c : training_camera_indices(spec))
    cams.push_back(truth.cameras[std::size_t(c)]);
  return cams;
}

}  // namespace

Stage0Result run_stage0(const GroundTruth& truth, const ExperimentSpec& spec,
                        std::uint64_t seed) {
  Stage0Config cfg = spec.stage0;
  cfg.seed = seed;
  cfg.density = spec.scene.density;
  cfg.weights = spec.weights;
  cfg.weights.lambda_img /= double(spec.camera_count);
  return fit_stage0(training_observations(truth, spec),
                    training_cameras(truth, spec), cfg);
}

FitProblem make_fit_problem(const GroundTruth& truth,
                            const Stage0Result& stage0,
                            const ExperimentSpec& spec) {
  FitProblem p;
  p.scene = truth.scene;
  p.scene.particles = stage0.particles;
  const double h = p.scene.spacing();
  for (Vec3& x : p.scene.particles.positions)
    for (int c = 0; c < 3; ++c)
      x[c] = std::clamp(x[c], 2.0 * h, 1.0 - 2.0 * h);
  p.scene.v0 = spec.scene.v0_init;
  p.scene.material = spec.scene.material_init;
  p.cameras = training_cameras(truth, spec);
  p.observations = training_observations(truth, spec);
  // chamfer targets: per-frame deformed positions from the stage-0 fit
  p.targets = deformed_targets(stage0);
  p.weights = spec.weights;
  p.weights.lambda_img /= double(p.cameras.size());
  p.memory_budget = spec.memory_budget;
  p.x0_reference = truth.scene.particles.positions;
  return p;
}

StrategyPlan scaled_plan(StrategyKind kind, const ExperimentSpec& spec) {
  StrategyPlan plan = make_plan(kind, spec.scene.material_true.model);
  for (StageConfig& s : plan.stages) {
    s.iterations = std::max(
        1, int(std::lround(s.iterations * spec.iteration_scale)));
    s.first_k = std::min(s.first_k, spec.train_frames - 1);
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> metric_names(const ExperimentSpec& spec) {
  std::vector<std::string> names = {"cd_future_x1e3", "emd_future",
                                    "psnr_seen",      "ssim_seen",
                                    "psnr_novel",     "ssim_novel",
                                    "v0_mae"};
  for (const auto& [name, value] :
       param_errors(spec.scene.material_true, spec.scene.material_true))
    names.push_back("mae_" + name);
  return names;
}

std::vector<double> metric_values(const MetricsReport& m) {
  std::vector<double> v = {m.cd_future,  m.emd_future, m.psnr_seen,
                           m.ssim_seen,  m.psnr_novel, m.ssim_novel,
                           m.v0_mae};
  for (const auto& [name, value] : m.param_mae) v.push_back(value);
  return v;
}

}  // namespace

void write_report_csv(const std::string& path, const BenchmarkResult& result,
                      const ExperimentSpec& spec) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write report: " + path);
  const std::vector<std::string> names = metric_names(spec);
  f << "scene,strategy,cameras,seed";
  for (const std::string& n : names) f << "," << n;
  f << ",diverged\n";

  auto write_row = [&](const std::string& strategy, const std::string& seed,
                       const std::vector<double>& values, bool diverged) {
    f << spec.scene.name << "," << strategy << "," << spec.camera_count << ","
      << seed;
    for (double v : values) f << "," << format_double(v);
    f << "," << (diverged ? 1 : 0) << "\n";
  };

  for (const BenchmarkRun& run : result.runs)
    write_row(to_string(run.strategy), std::to_string(run.seed),
              metric_values(run.metrics), run.metrics.diverged);

  if (spec.seeds.size() > 1) {
    for (StrategyKind kind : spec.strategies) {
      std::vector<std::vector<double>> rows;
      for (const BenchmarkRun& run : result.runs)
        if (run.strategy == kind) rows.push_back(metric_values(run.metrics));
      if (rows.empty()) continue;
      std::vector<double> mean(names.size(), 0.0), sd(names.size(), 0.0);
      for (const auto& r : rows)
        for (std::size_t i = 0; i < names.size(); ++i) mean[i] += r[i];
      for (double& v : mean) v /= double(rows.size());
      for (const auto& r : rows)
        for (std::size_t i = 0; i < names.size(); ++i)
          sd[i] += (r[i] - mean[i]) * (r[i] - mean[i]);
      for (double& v : sd) v = std::sqrt(v / double(rows.size()));
      write_row(to_string(kind), "mean", mean, false);
      write_row(to_string(kind), "std", sd, false);
    }
  }
}

void write_summary_json(const std::string& path, const BenchmarkResult& result,
                        const ExperimentSpec& spec) {
  json j;
  j["scene"] = spec.scene.name;
  j["cameras"] = spec.camera_count;
  j["frames"] = spec.frames;
  j["train_frames"] = spec.train_frames;
  j["seeds"] = spec.seeds;
  json runs = json::array();
  for (const BenchmarkRun& run : result.runs) {
    json r;
    r["strategy"] = to_string(run.strategy);
    r["seed"] = run.seed;
    r["wall_seconds"] = run.fit.wall_seconds;
    r["diverged"] = run.metrics.diverged;
    if (!run.error.empty()) r["error"] = run.error;
    runs.push_back(r);
  }
  j["runs"] = runs;
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write summary: " + path);
  f << j.dump(2) << "\n";
}

void write_trace_csv(const std::string& path, const FitResult& fit,
                     MaterialModel model) {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write trace: " + path);
  f << "stage,iter,total,l_img,l_cd,lr_factor,v0_x,v0_y,v0_z";
  for (const std::string& n : raw_names(model)) f << "," << n;
  f << ",x0_err\n";
  for (const StageResult& sr : fit.stages)
    for (const TraceRow& row : sr.trace) {
      f << row.stage << "," << row.iter << "," << format_double(row.total)
        << "," << format_double(row.l_img) << "," << format_double(row.l_cd)
        << "," << format_double(row.lr_factor);
      for (int c = 0; c < 3; ++c) f << "," << format_double(row.v0[c]);
      for (Eigen::Index i = 0; i < row.raw_material.size(); ++i)
        f << "," << format_double(row.raw_material[i]);
      f << "," << format_double(row.x0_err) << "\n";
    }
}

BenchmarkResult run_benchmark(const ExperimentSpec& spec) {
  spec.validate();
  fs::create_directories(spec.output_dir);
  fs::create_directories(spec.output_dir + "/traces");
  fs::create_directories(spec.output_dir + "/rep4d");

  const GroundTruth truth = generate_ground_truth(spec);
  write_ground_truth(truth, spec.output_dir + "/ground_truth");

  BenchmarkResult result;
  for (std::uint64_t seed : spec.seeds) {
    Stage0Result stage0;
    std::string stage0_error;
    try {
      stage0 = run_stage0(truth, spec, seed);
      save_rep4d(spec.output_dir + "/rep4d/seed" + std::to_string(seed) +
                     ".rep4d",
                 stage0);
    } catch (const std::exception& e) {
      stage0_error = e.what();
    }

    for (StrategyKind kind : spec.strategies) {
      BenchmarkRun run;
      run.strategy = kind;
      run.seed = seed;
      if (!stage0_error.empty()) {
        run.error = "stage0: " + stage0_error;
        run.metrics.diverged = true;
        const double inf = std::numeric_limits<double>::infinity();
        run.metrics.cd_future = run.metrics.emd_future = inf;
        run.metrics.param_mae =
            param_errors(spec.scene.material_init, spec.scene.material_true);
      } else {
        try {
          const FitProblem problem = make_fit_problem(truth, stage0, spec);
          run.fit = run_strategy(problem, scaled_plan(kind, spec));
          run.metrics = compute_metrics(run.fit, truth, spec);
          run.metrics.diverged = run.metrics.diverged || run.fit.diverged;
        } catch (const std::exception& e) {
          run.error = e.what();
          run.metrics.diverged = true;
          const double inf = std::numeric_limits<double>::infinity();
          run.metrics.cd_future = run.metrics.emd_future = inf;
          run.metrics.param_mae =
              param_errors(spec.scene.material_init, spec.scene.material_true);
        }
      }
      write_trace_csv(spec.output_dir + "/traces/" + spec.scene.name + "_" +
                          to_string(kind) + "_seed" + std::to_string(seed) +
                          ".csv",
                      run.fit, spec.scene.material_true.model);
      result.runs.push_back(std::move(run));
    }
  }

  write_report_csv(spec.output_dir + "/report.csv", result, spec);
  write_summary_json(spec.output_dir + "/summary.json", result, spec);
  return result;
}

}  // namespace phyrec
