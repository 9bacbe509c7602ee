#pragma once

#include <cstddef>
#include <functional>

#include "phyrec/sim.hpp"

namespace phyrec {

// ---------------------------------------------------------------------------
// Loss interface: anything differentiable that consumes trajectory snapshots.
// ---------------------------------------------------------------------------

/// Adjoint of one frame's loss contribution with respect to the snapshot.
struct FrameAdjoint {
  std::vector<Vec3> x_bar;
  std::vector<Vec3> v_bar;
  std::vector<double> radii_bar;
  std::vector<double> opacity_bar;

  void resize(std::size_t n) {
    x_bar.assign(n, Vec3::Zero());
    v_bar.assign(n, Vec3::Zero());
    radii_bar.assign(n, 0.0);
    opacity_bar.assign(n, 0.0);
  }
};

/// A differentiable functional of the trajectory. `evaluate` returns the
/// frame's loss contribution and accumulates the adjoint of that contribution
/// into `adj` (already sized to the particle count).
class TrajectoryLoss {
 public:
  virtual ~TrajectoryLoss() = default;
  virtual double evaluate(std::size_t frame, const ParticleSet& snapshot,
                          FrameAdjoint& adj) = 0;
};

// ---------------------------------------------------------------------------
// Gradients
// ---------------------------------------------------------------------------

struct ParamFlags {
  bool v0 = true;
  bool material = false;
  bool x0 = false;
  bool appearance = false;  // radii and opacities
};

struct ParamGradients {
  Vec3 d_v0 = Vec3::Zero();
  VecX d_material;  // unconstrained (raw) coordinates, raw_dim(model) entries
  std::vector<Vec3> d_x0;
  std::vector<double> d_radii;
  std::vector<double> d_opacities;
};

struct GradResult {
  double loss = 0;
  ParamGradients grads;
};

/// Checkpoint stride: smallest k whose stored-state count fits the budget
/// (k = 1 when the budget allows every substep boundary to be kept).
/// Throws ContractError if the budget cannot hold two states.
int checkpoint_schedule(long total_substeps, long memory_budget_states);

/// Forward-only loss evaluation over the schedule's snapshots.
double evaluate_loss(const Scene& scene, const MaterialParams& material,
                     const Vec3& v0, TrajectoryLoss& loss_fn,
                     const SimSchedule& schedule);

/// Reverse-mode gradient of the summed frame losses through the simulator.
/// The forward pass checkpoints every k substeps and the backward sweep
/// replays each window once; branch-local derivatives through the return
/// mappings and the floor friction. The reported loss is bitwise the forward
/// evaluation. Throws NumericError on a non-finite adjoint, naming the
/// substep.
GradResult grad(const Scene& scene, const MaterialParams& material,
                const Vec3& v0, TrajectoryLoss& loss_fn,
                const SimSchedule& schedule, const ParamFlags& which,
                long memory_budget_states = -1);

/// Central finite differences of the loss in the unconstrained space,
/// packed as [v0 (3) | raw material (raw_dim)]. Steps follow
/// h = max(1e-5, 1e-4 |theta|) per coordinate.
VecX fd_gradient(const Scene& scene, const MaterialParams& material,
                 const Vec3& v0, TrajectoryLoss& loss_fn,
                 const SimSchedule& schedule);

}  // namespace phyrec
