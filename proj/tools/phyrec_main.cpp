#include <cstdio>
#include <exception>

#include <CLI11.hpp>

#include "gradcheck_common.hpp"
#include "phyrec/harness.hpp"
#include "phyrec/io.hpp"

using namespace phyrec;

namespace {

// flags shared by the subcommands that build a scene on the fly
void add_spec_options(CLI::App* cmd, ExperimentSpec& spec,
                      std::string& scene_name) {
  cmd->add_option("--scene", scene_name, "benchmark scene name")
      ->check(CLI::IsMember(scene_names()));
  cmd->add_option("--frames", spec.frames, "total frames");
  cmd->add_option("--train-frames", spec.train_frames,
                  "frames the optimizer sees");
  cmd->add_option("--fps", spec.fps, "frames per second");
  cmd->add_option("--grid", spec.grid_resolution, "grid resolution");
  cmd->add_option("--ppc", spec.particles_per_cell, "particles per cell");
  cmd->add_option("--image-size", spec.image_size, "square image size");
  cmd->add_option("--focal", spec.focal, "focal length in pixels");
  cmd->add_option("--cameras", spec.camera_count, "training cameras")
      ->check(CLI::IsMember({3, 10}));
  cmd->add_option("--iteration-scale", spec.iteration_scale,
                  "multiplier on every stage budget");
  cmd->add_option("--out", spec.output_dir, "output directory");
}

int report_runs(const BenchmarkResult& result, bool strict) {
  bool failed = false;
  for (const BenchmarkRun& run : result.runs) {
    std::printf("%-12s seed %llu  cd_future %.6g  emd %.6g  psnr %.2f  %s\n",
                to_string(run.strategy),
                static_cast<unsigned long long>(run.seed),
                run.metrics.cd_future, run.metrics.emd_future,
                run.metrics.psnr_seen,
                run.metrics.diverged ? "DIVERGED" : "ok");
    if (!run.error.empty()) std::printf("  error: %s\n", run.error.c_str());
    failed = failed || run.metrics.diverged || !run.error.empty();
  }
  return (strict && failed) ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"inverse-physics benchmark: differentiable MPM fit of initial "
               "velocity, material, and geometry from silhouette videos"};
  app.require_subcommand(1);
  app.fallthrough();  // allow --strict after the subcommand name
  bool strict = false;
  app.add_flag("--strict", strict,
               "exit nonzero when any run diverges or fails");

  ExperimentSpec spec;
  std::string scene_name = "elastic-cube-drop";

  CLI::App* sim = app.add_subcommand(
      "simulate", "run the ground-truth simulation and export PLY frames");
  add_spec_options(sim, spec, scene_name);

  CLI::App* ren = app.add_subcommand(
      "render", "export ground-truth silhouettes and visible point clouds");
  add_spec_options(ren, spec, scene_name);

  CLI::App* fit = app.add_subcommand(
      "fit", "fit one scene with one strategy and seed");
  std::string strategy = "progressive";
  std::uint64_t seed = 0;
  add_spec_options(fit, spec, scene_name);
  fit->add_option("--strategy", strategy, "optimization strategy")
      ->check(CLI::IsMember({"sequential", "fulljoint", "progressive"}));
  fit->add_option("--seed", seed, "initialization seed");

  CLI::App* bench = app.add_subcommand(
      "benchmark", "run the full strategy-by-seed grid from a JSON spec");
  std::string spec_path;
  bench->add_option("--spec", spec_path, "experiment spec JSON")
      ->required()
      ->check(CLI::ExistingFile);

  CLI::App* gc = app.add_subcommand(
      "gradcheck", "adjoint vs finite differences for every material");
  std::uint64_t gc_seed = 42;
  int gc_particles = 48;
  double gc_tol = 1e-3;
  gc->add_option("--seed", gc_seed, "scene randomization seed");
  gc->add_option("--particles", gc_particles, "cloud size (max 200)");
  gc->add_option("--tol", gc_tol, "relative tolerance");

  CLI11_PARSE(app, argc, argv);

  // keep the default train/test split usable for short clips
  spec.train_frames = std::min(spec.train_frames, spec.frames - 1);

  try {
    if (*sim) {
      spec.scene = scene_catalog(scene_name);
      const GroundTruth truth = generate_ground_truth(spec);
      export_trajectory(truth.trajectory, spec.output_dir + "/frames");
      std::printf("wrote %zu frames (%zu particles) to %s/frames\n",
                  truth.trajectory.frames.size(),
                  truth.scene.particles.size(), spec.output_dir.c_str());
      return 0;
    }
    if (*ren) {
      spec.scene = scene_catalog(scene_name);
      const GroundTruth truth = generate_ground_truth(spec);
      write_ground_truth(truth, spec.output_dir);
      std::printf("wrote %zu x %zu silhouettes and point clouds to %s\n",
                  truth.observations.alpha.size(), truth.cameras.size(),
                  spec.output_dir.c_str());
      return 0;
    }
    if (*fit) {
      spec.scene = scene_catalog(scene_name);
      spec.strategies = {strategy_from_string(strategy)};
      spec.seeds = {seed};
      const BenchmarkResult result = run_benchmark(spec);
      std::printf("report: %s/report.csv\n", spec.output_dir.c_str());
      return report_runs(result, strict);
    }
    if (*bench) {
      const ExperimentSpec loaded = load_spec(spec_path);
      const BenchmarkResult result = run_benchmark(loaded);
      std::printf("report: %s/report.csv\n", loaded.output_dir.c_str());
      return report_runs(result, strict);
    }
    if (*gc) {
      const std::vector<MaterialModel> models = {
          MaterialModel::Elastic, MaterialModel::Newtonian,
          MaterialModel::NonNewtonian, MaterialModel::Plasticine,
          MaterialModel::Sand};
      bool failed = false;
      std::printf("%-14s %12s %8s %14s\n", "material", "max_rel_err",
                  "coords", "branch_margin");
      for (MaterialModel model : models) {
        const GradCheckCase c = run_gradcheck(model, gc_seed, gc_particles);
        const bool ok = c.max_rel_err <= gc_tol && c.branch_margin >= 0.01;
        failed = failed || !ok;
        std::printf("%-14s %12.3e %8d %14.4f  %s\n", c.material.c_str(),
                    c.max_rel_err, c.coords, c.branch_margin,
                    ok ? "pass" : "FAIL");
      }
      return failed ? 1 : 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
