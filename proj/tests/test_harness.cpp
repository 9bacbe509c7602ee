#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "phyrec/harness.hpp"

using namespace phyrec;

namespace {

// small enough to simulate and render in seconds
ExperimentSpec tiny_spec() {
  ExperimentSpec spec;
  spec.scene = scene_catalog("elastic-cube-drop");
  spec.frames = 4;
  spec.train_frames = 3;
  spec.image_size = 32;
  spec.focal = 64;
  spec.grid_resolution = 16;
  spec.particles_per_cell = 1;
  spec.validate();
  return spec;
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  REQUIRE(f);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("scene catalog") {
  const std::vector<std::string> names = scene_names();
  CHECK(names.size() == 6);
  for (const std::string& name : names) {
    const SceneSpec s = scene_catalog(name);
    CHECK(s.name == name);
    CHECK(s.material_init.model == s.material_true.model);
    CHECK(s.scale > 0);
    // initial guesses must actually differ from the truth
    const auto errs = param_errors(s.material_init, s.material_true);
    double total = 0;
    for (const auto& [key, value] : errs) total += value;
    CHECK(total > 0.01);
    CHECK((s.v0_init - s.v0_true).norm() > 0.1);
  }
  CHECK_THROWS_AS(scene_catalog("no-such-scene"), ConfigError);
}

TEST_CASE("camera ring and training subsets") {
  ExperimentSpec spec = tiny_spec();
  const std::vector<Camera> ring = camera_ring(spec);
  CHECK(ring.size() == 10);
  for (const Camera& cam : ring) {
    CHECK(cam.width == spec.image_size);
    // every camera looks at the domain center from radius 1.5
    const Vec3 eye = cam.pose.inverse() * Vec3::Zero();
    CHECK((eye - Vec3(0.5, 0.5, 0.5)).norm() == doctest::Approx(1.5));
  }
  CHECK(training_camera_indices(spec) == std::vector<int>{1, 5, 9});
  spec.camera_count = 10;
  const std::vector<int> all = training_camera_indices(spec);
  CHECK(all.size() == 10);
  CHECK(all.front() == 0);
  CHECK(all.back() == 9);

  spec.camera_count = 4;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
  spec.camera_count = 3;
  spec.train_frames = spec.frames;
  CHECK_THROWS_AS(spec.validate(), ConfigError);
}

TEST_CASE("ground truth counting contract and determinism") {
  const ExperimentSpec spec = tiny_spec();
  const GroundTruth gt = generate_ground_truth(spec);

  CHECK(gt.trajectory.frames.size() == 4);
  CHECK(gt.observations.frame_count() == 4);
  REQUIRE(gt.observations.alpha.size() == 4);
  for (const auto& row : gt.observations.alpha) {
    REQUIRE(row.size() == 10);
    for (const AlphaImage& img : row) {
      CHECK(img.width == 32);
      CHECK(img.height == 32);
      // the cube must be visible from every ring camera
      double peak = 0;
      for (double v : img.values) peak = std::max(peak, v);
      CHECK(peak > 0.5);
    }
  }
  REQUIRE(gt.observations.visible.size() == 4);
  for (const auto& row : gt.observations.visible) {
    REQUIRE(row.size() == 10);
    for (const auto& cloud : row) CHECK(!cloud.empty());
  }
  CHECK(gt.observations.timestamps[1] == doctest::Approx(1.0 / 60.0));

  // frame 0 is the sampled shape, untouched by the integrator
  CHECK(gt.trajectory.frames[0].positions == gt.scene.particles.positions);

  const GroundTruth again = generate_ground_truth(spec);
  CHECK(again.trajectory.frames[3].positions ==
        gt.trajectory.frames[3].positions);
  CHECK(again.observations.visible[2][4] == gt.observations.visible[2][4]);
  CHECK(again.observations.alpha[3][7].values ==
        gt.observations.alpha[3][7].values);
}

TEST_CASE("psnr oracle") {
  AlphaImage a, b;
  a.width = b.width = 8;
  a.height = b.height = 8;
  a.values.assign(64, 0.0);
  b.values.assign(64, 0.5);
  // MSE = 0.25 -> 10 log10(4)
  CHECK(psnr(a, b) == doctest::Approx(10.0 * std::log10(4.0)));
  CHECK(psnr(a, a) == 99.0);
  b.width = 4;
  b.values.assign(32, 0.0);
  CHECK_THROWS_AS(psnr(a, b), ContractError);
}

TEST_CASE("parameter error oracle") {
  MaterialParams truth;
  truth.model = MaterialModel::Elastic;
  truth.E = 1e5;
  truth.nu = 0.3;
  MaterialParams fitted = truth;
  fitted.E = 1.1e5;
  fitted.nu = 0.27;
  const auto errs = param_errors(fitted, truth);
  REQUIRE(errs.size() == 2);
  CHECK(errs[0].first == "log10_E");
  CHECK(errs[0].second == doctest::Approx(std::log10(1.1)));
  CHECK(errs[1].first == "nu");
  CHECK(errs[1].second == doctest::Approx(0.03));

  MaterialParams sand;
  sand.model = MaterialModel::Sand;
  CHECK_THROWS_AS(param_errors(fitted, sand), ContractError);
  sand.theta_fric = 35.0;
  MaterialParams sand2 = sand;
  sand2.theta_fric = 20.0;
  const auto serr = param_errors(sand2, sand);
  REQUIRE(serr.size() == 1);
  CHECK(serr[0].second == doctest::Approx(15.0));
}

TEST_CASE("metrics on the exact truth") {
  const ExperimentSpec spec = tiny_spec();
  const GroundTruth gt = generate_ground_truth(spec);

  FitResult fit;
  fit.state.v0 = spec.scene.v0_true;
  fit.state.material = spec.scene.material_true;
  fit.state.particles = gt.scene.particles;

  const MetricsReport m = compute_metrics(fit, gt, spec);
  CHECK(!m.diverged);
  CHECK(m.cd_future == doctest::Approx(0.0));
  CHECK(m.emd_future == doctest::Approx(0.0));
  CHECK(m.psnr_seen == 99.0);
  CHECK(m.ssim_seen == doctest::Approx(1.0));
  CHECK(m.psnr_novel == 99.0);
  CHECK(m.v0_mae == 0.0);
  for (const auto& [key, value] : m.param_mae)
    CHECK(value == doctest::Approx(0.0));

  // every ring camera trained -> no novel views
  ExperimentSpec dense = spec;
  dense.camera_count = 10;
  const MetricsReport md = compute_metrics(fit, generate_ground_truth(dense),
                                           dense);
  CHECK(std::isnan(md.psnr_novel));
  CHECK(md.psnr_seen == 99.0);
}

TEST_CASE("spec JSON loading") {
  const std::string path = "/tmp/phyrec_spec_test.json";
  {
    std::ofstream f(path);
    f << R"({
      "scene": "sand-column-collapse",
      "cameras": 10,
      "frames": 6,
      "train_frames": 4,
      "image_size": 48,
      "iteration_scale": 0.5,
      "strategies": ["progressive", "sequential"],
      "seeds": [3, 4],
      "weights": {"lambda_cd": 50.0},
      "stage0": {"particle_count": 200, "iterations": 40}
    })";
  }
  const ExperimentSpec spec = load_spec(path);
  CHECK(spec.scene.name == "sand-column-collapse");
  CHECK(spec.scene.material_true.model == MaterialModel::Sand);
  CHECK(spec.camera_count == 10);
  CHECK(spec.frames == 6);
  CHECK(spec.train_frames == 4);
  CHECK(spec.image_size == 48);
  CHECK(spec.iteration_scale == 0.5);
  REQUIRE(spec.strategies.size() == 2);
  CHECK(spec.strategies[0] == StrategyKind::Progressive);
  CHECK(spec.strategies[1] == StrategyKind::Sequential);
  CHECK(spec.seeds == std::vector<std::uint64_t>{3, 4});
  CHECK(spec.weights.lambda_cd == 50.0);
  CHECK(spec.weights.lambda_l1 == 0.8);  // untouched default
  CHECK(spec.stage0.particle_count == 200);
  CHECK(spec.stage0.iterations == 40);

  {
    std::ofstream f(path);
    f << R"({"scene": "elastic-cube-drop", "framez": 6})";
  }
  CHECK_THROWS_AS(load_spec(path), ConfigError);
  {
    std::ofstream f(path);
    f << "not json";
  }
  CHECK_THROWS_AS(load_spec(path), ConfigError);
  CHECK_THROWS_AS(load_spec("/tmp/does_not_exist.json"), ConfigError);
}

TEST_CASE("scaled plans") {
  ExperimentSpec spec = tiny_spec();
  spec.iteration_scale = 0.01;
  for (const StageConfig& s :
       scaled_plan(StrategyKind::Progressive, spec).stages)
    CHECK(s.iterations == 1);
  spec.iteration_scale = 1.0;
  const StrategyPlan full = scaled_plan(StrategyKind::FullJoint, spec);
  int total = 0;
  for (const StageConfig& s : full.stages) total += s.iterations;
  CHECK(total == 300);  // elastic budget, all strategies equal
}

TEST_CASE("benchmark artifacts and report reproducibility") {
  ExperimentSpec spec = tiny_spec();
  spec.iteration_scale = 0.02;  // 2 iterations per stage
  spec.strategies = {StrategyKind::Progressive};
  spec.stage0.hull_resolution = 16;
  spec.stage0.particle_count = 64;
  spec.stage0.control_count = 8;
  spec.stage0.iterations = 8;
  spec.output_dir = "/tmp/phyrec_bench_a";
  std::filesystem::remove_all(spec.output_dir);

  const BenchmarkResult result = run_benchmark(spec);
  REQUIRE(result.runs.size() == 1);
  CHECK(result.runs[0].error.empty());
  CHECK(result.runs[0].fit.wall_seconds > 0);

  namespace fs = std::filesystem;
  CHECK(fs::exists(spec.output_dir + "/report.csv"));
  CHECK(fs::exists(spec.output_dir + "/summary.json"));
  CHECK(fs::exists(spec.output_dir +
                   "/traces/elastic-cube-drop_progressive_seed0.csv"));
  CHECK(fs::exists(spec.output_dir + "/rep4d/seed0.rep4d"));
  CHECK(fs::exists(spec.output_dir + "/ground_truth/alpha/f0_c0.pgm"));
  CHECK(fs::exists(spec.output_dir + "/ground_truth/frames/frame_0000.ply"));

  const std::string report = slurp(spec.output_dir + "/report.csv");
  CHECK(report.find("scene,strategy,cameras,seed") == 0);
  CHECK(report.find("elastic-cube-drop,progressive,3,0") != std::string::npos);
  // wall time must never leak into the report
  CHECK(report.find("wall") == std::string::npos);

  const std::string trace =
      slurp(spec.output_dir + "/traces/elastic-cube-drop_progressive_seed0.csv");
  CHECK(trace.find("stage,iter,total") == 0);
  CHECK(trace.find("log10_E") != std::string::npos);

  spec.output_dir = "/tmp/phyrec_bench_b";
  std::filesystem::remove_all(spec.output_dir);
  run_benchmark(spec);
  CHECK(slurp(spec.output_dir + "/report.csv") == report);
  CHECK(slurp(spec.output_dir +
              "/traces/elastic-cube-drop_progressive_seed0.csv") == trace);
}
