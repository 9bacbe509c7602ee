#pragma once

#include "phyrec/materials.hpp"
#include "phyrec/params.hpp"
#include "phyrec/types.hpp"

namespace phyrec {

// ---------------------------------------------------------------------------
// Background grid
// ---------------------------------------------------------------------------

/// Collocated mass/momentum grid with resolution^3 cells and
/// (resolution+1)^3 nodes.
struct Grid {
  int resolution = 0;
  std::vector<double> mass;
  std::vector<Vec3> momentum;

  explicit Grid(int res = 0) { reset(res); }

  void reset(int res) {
    resolution = res;
    const std::size_t n = std::size_t(res + 1) * (res + 1) * (res + 1);
    mass.assign(n, 0.0);
    momentum.assign(n, Vec3::Zero());
  }

  void clear() {
    std::fill(mass.begin(), mass.end(), 0.0);
    std::fill(momentum.begin(), momentum.end(), Vec3::Zero());
  }

  int nodes_per_axis() const { return resolution + 1; }

  std::size_t index(int ix, int iy, int iz) const {
    const int n = nodes_per_axis();
    return (std::size_t(ix) * n + iy) * n + iz;
  }
};

/// Quadratic B-spline interpolation stencil around one particle:
/// 3 weights and weight derivatives per axis over nodes base..base+2.
struct Interp {
  int base[3];
  double w[3][3];   // w[axis][offset]
  double dw[3][3];  // d w / d position, already scaled by 1/h
};

Interp interpolate(const Vec3& x, int resolution);

// ---------------------------------------------------------------------------
// Dynamic per-particle state (static fields stay in ParticleSet)
// ---------------------------------------------------------------------------

struct SimState {
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
  std::vector<Mat3> F;
  std::vector<Mat3> C;

  std::size_t size() const { return positions.size(); }

  static SimState from_particles(const ParticleSet& ps);
  void write_to(ParticleSet& ps) const;
};

// ---------------------------------------------------------------------------
// Substep phases (MLS-MPM with APIC transfer)
// ---------------------------------------------------------------------------

/// Scatters mass and stress-fused momentum to the grid. Throws
/// DomainEscapeError (naming particle and substep) if a particle leaves the
/// one-cell domain margin.
void p2g(const ParticleSet& statics, const SimState& state,
         const MaterialParams& material, const Lame& lame, double dt,
         Grid& grid, long substep_index = -1);

/// Momentum -> velocity, gravity, and boundary handling. After this call
/// `grid.momentum` holds nodal velocities. The ground plane occupies the two
/// lowest node layers; the remaining walls get a separating (normal-clamp)
/// treatment to keep stray particles inside.
void grid_update(Grid& grid, const Vec3& gravity, double dt,
                 BoundaryType boundary, double ground_friction);

/// Boundary treatment for a single node velocity (exposed so the adjoint can
/// replay the branch decisions).
void apply_boundary(Vec3& v, int ix, int iy, int iz, int nodes_per_axis,
                    BoundaryType boundary, double ground_friction);

/// Gathers velocities/APIC matrices, advects positions, updates deformation
/// gradients through the material's return mapping. Throws NumericError on
/// non-finite gathered velocities.
void g2p(const ParticleSet& statics, const Grid& grid,
         const MaterialParams& material, const Lame& lame, double dt,
         const SimState& state_in, SimState& state_out,
         long substep_index = -1);

/// One full p2g -> grid_update -> g2p substep.
void substep(const ParticleSet& statics, const Scene& scene,
             const MaterialParams& material, const Lame& lame, double dt,
             const SimState& in, SimState& out, Grid& grid,
             long substep_index = -1);

// ---------------------------------------------------------------------------
// Frame-level simulation
// ---------------------------------------------------------------------------

/// Fixed substep plan between observation timestamps, shared between a
/// forward evaluation and its adjoint / finite-difference probes so that the
/// discretization does not shift underfoot.
struct SimSchedule {
  std::vector<double> timestamps;
  std::vector<int> substeps;  // per interval, size = timestamps.size() - 1
  std::vector<double> dt;     // per interval

  long total_substeps() const;
};

SimSchedule make_schedule(const Scene& scene, const MaterialParams& material,
                          const std::vector<double>& timestamps);

struct Trajectory {
  std::vector<double> timestamps;
  std::vector<ParticleSet> frames;
  SimSchedule schedule;
};

/// Runs the simulator from the scene's initial particles with the global
/// initial velocity `v0` applied, snapshotting at each timestamp.
/// Throws DivergenceError when max speed exceeds 100 domain-units/s.
Trajectory simulate(const Scene& scene, const MaterialParams& material,
                    const Vec3& v0, const std::vector<double>& timestamps);

/// As above but with a precomputed schedule.
Trajectory simulate(const Scene& scene, const MaterialParams& material,
                    const Vec3& v0, const SimSchedule& schedule);

/// Writes one PLY per frame plus a timestamp manifest into `dir`.
void export_trajectory(const Trajectory& t, const std::string& dir);

constexpr double kMaxSpeed = 100.0;  // divergence threshold, domain-units/s

}  // namespace phyrec
