#pragma once

#include "phyrec/optengine.hpp"

namespace phyrec {

/// Silhouettes did not pin down any geometry (empty visual hull, etc.).
struct ReconstructionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Control-point displacement field: x_t = x_0 + sum_j w_j(x_0) d_{j,t} with
// normalized Gaussian RBF weights w_j(x) = k_j(x) / sum_m k_m(x),
// k_j(x) = exp(-|x - c_j|^2 / 2 sigma^2).
// ---------------------------------------------------------------------------

struct DeformationField {
  std::vector<Vec3> control_points;              // J entries
  std::vector<std::vector<Vec3>> displacements;  // [t][j]; row t=0 all zero
  double rbf_sigma = 0.1;

  std::size_t control_count() const { return control_points.size(); }
  std::size_t frame_count() const { return displacements.size(); }

  /// J >= 8, consistent row widths, zero first row, positive sigma.
  void validate() const;
};

/// Deformed positions at frame t. When every kernel underflows to zero the
/// point follows its nearest control point instead (counted process-wide).
/// Throws ContractError for t outside the fitted range.
std::vector<Vec3> eval_deformation(const DeformationField& field,
                                   const std::vector<Vec3>& x0,
                                   std::size_t t);

long deformation_fallback_count();
void reset_deformation_fallbacks();

/// Adjoint of eval_deformation: accumulates into x0_bar, control_bar and the
/// frame-t displacement row d_bar (all caller-sized).
void eval_deformation_vjp(const DeformationField& field,
                          const std::vector<Vec3>& x0, std::size_t t,
                          const std::vector<Vec3>& xhat_bar,
                          std::vector<Vec3>& x0_bar,
                          std::vector<Vec3>& control_bar,
                          std::vector<Vec3>& d_bar);

// ---------------------------------------------------------------------------
// Stage 0: visual-hull initialization plus joint fit of particles and the
// displacement field against all (frame, camera) alpha maps.
// ---------------------------------------------------------------------------

/// Voxel centers of the frame-0 visual hull: a voxel survives when every
/// camera sees alpha >= threshold at its projection (projections outside an
/// image reject the voxel). Throws ReconstructionError on an empty hull.
std::vector<Vec3> visual_hull(const ObservationSet& obs,
                              const std::vector<Camera>& cameras,
                              int resolution = 64, double threshold = 0.5);

struct Stage0Config {
  int hull_resolution = 64;
  double silhouette_threshold = 0.5;
  int particle_count = 1500;
  int control_count = 64;
  int iterations = 300;
  double lr_positions = 2e-3;
  double lr_controls = 2e-3;
  double lr_displacements = 2e-3;
  double lr_appearance = 2e-3;
  double floor_fraction = 0.25;
  double lambda_temp = 0.1;  // temporal smoothness on displacement rows
  LossWeights weights;
  double density = 1000.0;  // for the particle masses handed to the simulator
  double initial_opacity = 0.9;
  std::uint64_t seed = 0;
};

struct Stage0Result {
  ParticleSet particles;  // fitted x0 / radii / opacities, sim-ready masses
  DeformationField field;
  std::vector<double> loss_trace;      // objective per iteration
  std::vector<double> per_frame_loss;  // at the reported iterate
  double best_loss = 0;
  int best_iter = -1;
};

/// Fits the pair by Adam on
///   sum_{t,c} [lambda_img * image_loss + lambda_alpha * L1]
///   + lambda_temp * sum_{j,t} |d_{j,t+1} - d_{j,t}|^2,
/// reporting the minimum-objective iterate. Requires >= 1 camera and
/// >= 2 frames.
Stage0Result fit_stage0(const ObservationSet& obs,
                        const std::vector<Camera>& cameras,
                        const Stage0Config& config);

/// Per-frame deformed positions of the fitted particles.
std::vector<std::vector<Vec3>> deformed_targets(const Stage0Result& fit);

/// Single-file serialization (documented in docs/rep4d-format.md).
void save_rep4d(const std::string& path, const Stage0Result& fit);
Stage0Result load_rep4d(const std::string& path);

}  // namespace phyrec
