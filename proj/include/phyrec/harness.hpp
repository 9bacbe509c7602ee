#pragma once

#include "phyrec/rep4d.hpp"
#include "phyrec/sampling.hpp"

namespace phyrec {

// ---------------------------------------------------------------------------
// Scene catalog
// ---------------------------------------------------------------------------

/// A benchmark scene: geometry, ground-truth physics, and the initial
/// guesses handed to the optimizer.
struct SceneSpec {
  std::string name;
  Shape shape = Shape::Cube;
  Vec3 center = Vec3(0.5, 0.5, 0.5);
  double scale = 0.2;
  MaterialParams material_true;
  MaterialParams material_init;
  Vec3 v0_true = Vec3::Zero();
  Vec3 v0_init = Vec3::Zero();
  BoundaryType boundary = BoundaryType::Separating;
  double ground_friction = 0.5;
  double density = 1000.0;
};

std::vector<std::string> scene_names();
SceneSpec scene_catalog(const std::string& name);  // ConfigError when unknown

// ---------------------------------------------------------------------------
// Experiment specification
// ---------------------------------------------------------------------------

struct ExperimentSpec {
  SceneSpec scene;
  int camera_count = 3;   // 3 (ring indices {1,5,9}) or 10 (all)
  int ring_cameras = 10;  // full ring size
  int frames = 20;
  double fps = 60.0;
  int train_frames = 14;
  int image_size = 128;
  double focal = 256.0;
  int grid_resolution = 24;
  int particles_per_cell = 2;
  double sigma_obs = 0.002;       // jitter on observed point clouds
  double occlusion_radius = 2.0;  // pixels, visibility masking
  std::uint64_t noise_seed = 12345;
  std::vector<StrategyKind> strategies = {StrategyKind::Progressive,
                                          StrategyKind::Sequential,
                                          StrategyKind::FullJoint};
  std::vector<std::uint64_t> seeds = {0};
  double iteration_scale = 1.0;  // multiplies every stage budget
  long memory_budget = -1;
  LossWeights weights;  // lambda_img divided by |C| at fit time
  Stage0Config stage0;
  std::string output_dir = "out";

  void validate() const;
};

/// Reads a spec from a JSON file; unknown keys are rejected.
ExperimentSpec load_spec(const std::string& path);

/// The full camera ring used for ground truth, plus the training subset.
std::vector<Camera> camera_ring(const ExperimentSpec& spec);
std::vector<int> training_camera_indices(const ExperimentSpec& spec);

// ---------------------------------------------------------------------------
// Ground truth
// ---------------------------------------------------------------------------

struct GroundTruth {
  Scene scene;  // true particles / v0 / material
  Trajectory trajectory;
  ObservationSet observations;  // all frames x all ring cameras
  std::vector<Camera> cameras;
};

/// Simulates the true scene and renders alpha maps plus visibility-masked,
/// noise-jittered point clouds for every (frame, camera).
/// A divergent ground-truth simulation is a spec error (ConfigError).
GroundTruth generate_ground_truth(const ExperimentSpec& spec);

void write_ground_truth(const GroundTruth& truth, const std::string& dir);

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct MetricsReport {
  double cd_future = 0;  // mean test-frame chamfer, x1e3
  double emd_future = 0;
  double psnr_seen = 0;
  double ssim_seen = 0;
  double psnr_novel = 0;  // NaN when every ring camera was trained on
  double ssim_novel = 0;
  std::vector<std::pair<std::string, double>> param_mae;
  double v0_mae = 0;
  bool diverged = false;
};

/// Absolute parameter errors in the reporting spaces: log10 for the
/// stiffness-like quantities, linear for nu and the friction angle.
std::vector<std::pair<std::string, double>> param_errors(
    const MaterialParams& fitted, const MaterialParams& truth);

/// 10 log10(1 / MSE), capped at 99 dB.
double psnr(const AlphaImage& a, const AlphaImage& b);

/// Re-simulates the fitted parameters and scores the test frames.
MetricsReport compute_metrics(const FitResult& fit, const GroundTruth& truth,
                              const ExperimentSpec& spec);

// ---------------------------------------------------------------------------
// Benchmark driver
// ---------------------------------------------------------------------------

struct BenchmarkRun {
  StrategyKind strategy = StrategyKind::Progressive;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  FitResult fit;
  std::string error;  // nonempty when the run failed outright
};

struct BenchmarkResult {
  std::vector<BenchmarkRun> runs;
};

/// Builds the optimization problem for one seed: Stage-0 initialization on
/// the training cameras/frames, chamfer targets from the fitted deformation
/// field, and the catalog's initial guesses.
FitProblem make_fit_problem(const GroundTruth& truth,
                            const Stage0Result& stage0,
                            const ExperimentSpec& spec);

Stage0Result run_stage0(const GroundTruth& truth, const ExperimentSpec& spec,
                        std::uint64_t seed);

/// Strategy plan with every stage budget scaled by iteration_scale.
StrategyPlan scaled_plan(StrategyKind kind, const ExperimentSpec& spec);

/// Full grid: shared ground truth, per-seed Stage 0, strategy x seed runs.
/// Per-run failures are recorded and the benchmark continues. Artifacts
/// (report.csv, summary.json, traces/, ground truth) land in output_dir.
BenchmarkResult run_benchmark(const ExperimentSpec& spec);

// report.csv bytes depend only on spec + seeds (no wall times inside)
void write_report_csv(const std::string& path, const BenchmarkResult& result,
                      const ExperimentSpec& spec);
void write_summary_json(const std::string& path, const BenchmarkResult& result,
                        const ExperimentSpec& spec);
void write_trace_csv(const std::string& path, const FitResult& fit,
                     MaterialModel model);

}  // namespace phyrec
