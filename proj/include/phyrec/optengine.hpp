#pragma once

#include "phyrec/adjoint.hpp"
#include "phyrec/geomloss.hpp"
#include "phyrec/render.hpp"

namespace phyrec {

// ---------------------------------------------------------------------------
// Optimizer primitives
// ---------------------------------------------------------------------------

/// Cosine annealing from lr0 down to floor_fraction * lr0 at iter = total.
/// Throws ContractError for total <= 0 or iter outside [0, total].
double cosine_lr(long iter, long total, double lr0, double floor_fraction);

struct AdamState {
  VecX m;
  VecX v;
  long step = 0;

  void reset(Eigen::Index n);
};

/// Bias-corrected Adam update of `params` in place. Throws NumericError on a
/// non-finite gradient and ContractError on dimension mismatch.
void adam_step(AdamState& state, VecX& params, const VecX& grads, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

// ---------------------------------------------------------------------------
// Stage / strategy configuration
// ---------------------------------------------------------------------------

/// Initial learning rates per parameter group (raw coordinates for material).
struct LearningRates {
  double v0 = 1e-1;
  double material = 1e-1;
  double x0 = 1e-3;
  double appearance = 1e-3;  // radii and opacities
};

enum class FrameWindow : std::uint8_t { FirstK, All };

struct StageConfig {
  ParamFlags active;
  FrameWindow frames = FrameWindow::All;
  int first_k = 3;       // window length when frames == FirstK
  int iterations = 100;  // must be positive
  LearningRates lr;
  double lr_scale = 1.0;          // global multiplier (0.5 for plasticine)
  double floor_fraction = 0.25;   // cosine schedule floor
};

enum class StrategyKind : std::uint8_t { Sequential, FullJoint, Progressive };

const char* to_string(StrategyKind k);
StrategyKind strategy_from_string(const std::string& s);

struct StrategyPlan {
  StrategyKind name = StrategyKind::Progressive;
  std::vector<StageConfig> stages;
};

/// Builds the stage list for a strategy with per-material iteration budgets.
/// Progressive activates {v0} on the first frames, then {v0, material}, then
/// everything; Sequential freezes each group after its stage; FullJoint is a
/// single all-parameter stage with the combined iteration budget.
StrategyPlan make_plan(StrategyKind kind, MaterialModel model);

// ---------------------------------------------------------------------------
// Fitting problem and results
// ---------------------------------------------------------------------------

/// Inverse problem shared by all stages: scene skeleton (initial particle
/// estimate, v0 and material guesses), training cameras with their alpha
/// observations, and per-frame position targets for the geometry loss.
/// Objective per frame: lambda_img * sum_c image_loss + lambda_cd * chamfer.
struct FitProblem {
  Scene scene;
  std::vector<Camera> cameras;
  ObservationSet observations;             // training frames only
  std::vector<std::vector<Vec3>> targets;  // per-frame target positions
  LossWeights weights;
  long memory_budget = -1;
  bool reset_optimizer_per_stage = true;
  std::vector<Vec3> x0_reference;  // optional diagnostic: true initial cloud
};

/// Parameters a strategy fits.
struct FitState {
  Vec3 v0 = Vec3::Zero();
  MaterialParams material;
  ParticleSet particles;
};

struct TraceRow {
  int stage = 0;
  int iter = 0;
  double total = 0;
  double l_img = 0;
  double l_cd = 0;
  double lr_factor = 0;
  Vec3 v0 = Vec3::Zero();
  VecX raw_material;
  double x0_err = 0;  // chamfer to x0_reference when provided
};

struct StageResult {
  double best_loss = 0;
  int best_iter = -1;
  bool diverged = false;
  std::vector<TraceRow> trace;
};

/// Per-group Adam moments, persisted across stages only when the problem
/// disables reset_optimizer_per_stage.
struct OptimStates {
  AdamState v0, material, x0, appearance;
};

/// Runs one stage of Adam steps on the active parameter groups, leaving
/// `state` at the minimum-objective iterate. On simulator divergence the
/// offending step is retried once at half step size, then the stage aborts
/// with the diverged flag set and the last stable best iterate.
StageResult run_stage(const FitProblem& problem, const StageConfig& stage,
                      int stage_index, FitState& state,
                      OptimStates* opt = nullptr);

struct FitResult {
  FitState state;
  std::vector<StageResult> stages;
  double wall_seconds = 0;
  bool diverged = false;
};

/// Executes the plan's stages in order, each starting from the previous
/// stage's best iterate. A divergent stage stops the plan with partial
/// results.
FitResult run_strategy(const FitProblem& problem, const StrategyPlan& plan);

}  // namespace phyrec
