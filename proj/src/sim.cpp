#include "phyrec/sim.hpp"

#include <cmath>
#include <filesystem>

#include "phyrec/io.hpp"

namespace phyrec {

Interp interpolate(const Vec3& x, int resolution) {
  Interp it;
  const double inv_h = double(resolution);
  for (int a = 0; a < 3; ++a) {
    const double xs = x[a] * inv_h;
    const int base = int(std::floor(xs - 0.5));
    const double fx = xs - base;
    it.base[a] = base;
    // quadratic B-spline over the three nodes at fx - 0, 1, 2
    it.w[a][0] = 0.5 * (1.5 - fx) * (1.5 - fx);
    it.w[a][1] = 0.75 - (fx - 1.0) * (fx - 1.0);
    it.w[a][2] = 0.5 * (fx - 0.5) * (fx - 0.5);
    it.dw[a][0] = -(1.5 - fx) * inv_h;
    it.dw[a][1] = -2.0 * (fx - 1.0) * inv_h;
    it.dw[a][2] = (fx - 0.5) * inv_h;
  }
  return it;
}

SimState SimState::from_particles(const ParticleSet& ps) {
  SimState s;
  s.positions = ps.positions;
  s.velocities = ps.velocities;
  s.F = ps.deformation_gradients;
  s.C = ps.affine_velocities;
  return s;
}

void SimState::write_to(ParticleSet& ps) const {
  ps.positions = positions;
  ps.velocities = velocities;
  ps.deformation_gradients = F;
  ps.affine_velocities = C;
}

static void check_in_domain(const Interp& it, int resolution, std::size_t p,
                            long substep_index) {
  for (int a = 0; a < 3; ++a) {
    if (it.base[a] < 0 || it.base[a] > resolution - 2)
      throw DomainEscapeError("particle " + std::to_string(p) +
                              " left the domain at substep " +
                              std::to_string(substep_index));
  }
}

void p2g(const ParticleSet& statics, const SimState& state,
         const MaterialParams& material, const Lame& lame, double dt,
         Grid& grid, long substep_index) {
  grid.clear();
  const double inv_h2 = double(grid.resolution) * grid.resolution;
  for (std::size_t p = 0; p < state.size(); ++p) {
    const Interp it = interpolate(state.positions[p], grid.resolution);
    check_in_domain(it, grid.resolution, p, substep_index);
    const Mat3 tau = kirchhoff_stress(material, lame, state.F[p], state.C[p]);
    const Mat3 G = -(4.0 * inv_h2 * dt * statics.volumes[p]) * tau +
                   statics.masses[p] * state.C[p];
    const Vec3 mv = statics.masses[p] * state.velocities[p];
    const double h = 1.0 / grid.resolution;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const double w = it.w[0][i] * it.w[1][j] * it.w[2][k];
          const Vec3 dpos((it.base[0] + i) * h - state.positions[p].x(),
                          (it.base[1] + j) * h - state.positions[p].y(),
                          (it.base[2] + k) * h - state.positions[p].z());
          const std::size_t n =
              grid.index(it.base[0] + i, it.base[1] + j, it.base[2] + k);
          grid.mass[n] += w * statics.masses[p];
          grid.momentum[n] += w * (mv + G * dpos);
        }
  }
}

void apply_boundary(Vec3& v, int ix, int iy, int iz, int nodes,
                    BoundaryType boundary, double ground_friction) {
  if (iy <= 1) {
    if (boundary == BoundaryType::Sticky) {
      v.setZero();
    } else if (v.y() < 0.0) {
      const double vn = -v.y();
      v.y() = 0.0;
      const double vt = std::hypot(v.x(), v.z());
      if (vt > 0.0) {
        const double s = std::max(0.0, 1.0 - ground_friction * vn / vt);
        v.x() *= s;
        v.z() *= s;
      }
    }
  }
  // side and top walls: separating normal clamp only
  if (ix <= 1 && v.x() < 0.0) v.x() = 0.0;
  if (ix >= nodes - 2 && v.x() > 0.0) v.x() = 0.0;
  if (iz <= 1 && v.z() < 0.0) v.z() = 0.0;
  if (iz >= nodes - 2 && v.z() > 0.0) v.z() = 0.0;
  if (iy >= nodes - 2 && v.y() > 0.0) v.y() = 0.0;
}

void grid_update(Grid& grid, const Vec3& gravity, double dt,
                 BoundaryType boundary, double ground_friction) {
  const int n = grid.nodes_per_axis();
  for (int ix = 0; ix < n; ++ix)
    for (int iy = 0; iy < n; ++iy)
      for (int iz = 0; iz < n; ++iz) {
        const std::size_t idx = grid.index(ix, iy, iz);
        if (grid.mass[idx] <= 0.0) {
          grid.momentum[idx].setZero();
          continue;
        }
        Vec3 v = grid.momentum[idx] / grid.mass[idx] + dt * gravity;
        apply_boundary(v, ix, iy, iz, n, boundary, ground_friction);
        grid.momentum[idx] = v;
      }
}

void g2p(const ParticleSet& statics, const Grid& grid,
         const MaterialParams& material, const Lame& lame, double dt,
         const SimState& state_in, SimState& state_out, long substep_index) {
  const std::size_t np = state_in.size();
  state_out.positions.resize(np);
  state_out.velocities.resize(np);
  state_out.F.resize(np);
  state_out.C.resize(np);
  const double inv_h2 = double(grid.resolution) * grid.resolution;
  const double h = 1.0 / grid.resolution;
  for (std::size_t p = 0; p < np; ++p) {
    const Interp it = interpolate(state_in.positions[p], grid.resolution);
    Vec3 v = Vec3::Zero();
    Mat3 B = Mat3::Zero();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const double w = it.w[0][i] * it.w[1][j] * it.w[2][k];
          const Vec3 dpos((it.base[0] + i) * h - state_in.positions[p].x(),
                          (it.base[1] + j) * h - state_in.positions[p].y(),
                          (it.base[2] + k) * h - state_in.positions[p].z());
          const Vec3& vn = grid.momentum[grid.index(
              it.base[0] + i, it.base[1] + j, it.base[2] + k)];
          v += w * vn;
          B += (w * vn) * dpos.transpose();
        }
    if (!v.allFinite())
      throw NumericError("non-finite velocity gathered for particle " +
                         std::to_string(p) + " at substep " +
                         std::to_string(substep_index));
    const Mat3 C = 4.0 * inv_h2 * B;
    state_out.velocities[p] = v;
    state_out.C[p] = C;
    state_out.positions[p] = state_in.positions[p] + dt * v;
    const Mat3 trial = (Mat3::Identity() + dt * C) * state_in.F[p];
    state_out.F[p] = advance_F(material, lame, trial, dt);
  }
}

void substep(const ParticleSet& statics, const Scene& scene,
             const MaterialParams& material, const Lame& lame, double dt,
             const SimState& in, SimState& out, Grid& grid,
             long substep_index) {
  if (grid.resolution != scene.grid_resolution)
    grid.reset(scene.grid_resolution);
  p2g(statics, in, material, lame, dt, grid, substep_index);
  grid_update(grid, scene.gravity, dt, scene.boundary, scene.ground_friction);
  g2p(statics, grid, material, lame, dt, in, out, substep_index);
}

long SimSchedule::total_substeps() const {
  long n = 0;
  for (int s : substeps) n += s;
  return n;
}

SimSchedule make_schedule(const Scene& scene, const MaterialParams& material,
                          const std::vector<double>& timestamps) {
  if (timestamps.size() < 2)
    throw ContractError("make_schedule: need at least two timestamps");
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    if (timestamps[i] <= timestamps[i - 1])
      throw ContractError("make_schedule: timestamps must increase");
  SimSchedule sch;
  sch.timestamps = timestamps;
  const double h = scene.spacing();
  const double c = std::sqrt(material.stiffness() / scene.density);
  const double t_total = timestamps.back() - timestamps.front();
  // conservative speed bound: initial speed plus free-fall accumulation
  const double v_cap = scene.v0.norm() + scene.gravity.norm() * t_total;
  const double dt_max = scene.cfl * h / std::max(c + v_cap, 1e-12);
  for (std::size_t i = 0; i + 1 < timestamps.size(); ++i) {
    const double len = timestamps[i + 1] - timestamps[i];
    const int n = std::max(1, int(std::ceil(len / dt_max - 1e-12)));
    sch.substeps.push_back(n);
    sch.dt.push_back(len / n);
  }
  return sch;
}

static double max_speed(const SimState& s) {
  double m = 0.0;
  for (const Vec3& v : s.velocities) m = std::max(m, v.norm());
  return m;
}

Trajectory simulate(const Scene& scene, const MaterialParams& material,
                    const Vec3& v0, const SimSchedule& schedule) {
  material.validate();
  scene.particles.validate();
  const Lame lame = lame_from_material(material);
  Trajectory traj;
  traj.timestamps = schedule.timestamps;
  traj.schedule = schedule;

  SimState state = SimState::from_particles(scene.particles);
  for (Vec3& v : state.velocities) v = v0;

  auto snapshot = [&]() {
    ParticleSet ps = scene.particles;
    state.write_to(ps);
    traj.frames.push_back(std::move(ps));
  };
  snapshot();

  Grid grid(scene.grid_resolution);
  SimState next;
  long substep_index = 0;
  for (std::size_t i = 0; i < schedule.substeps.size(); ++i) {
    for (int s = 0; s < schedule.substeps[i]; ++s) {
      substep(scene.particles, scene, material, lame, schedule.dt[i], state,
              next, grid, substep_index);
      std::swap(state, next);
      ++substep_index;
      if (max_speed(state) > kMaxSpeed)
        throw DivergenceError("max particle speed exceeded " +
                              std::to_string(kMaxSpeed) + " at substep " +
                              std::to_string(substep_index - 1));
    }
    snapshot();
  }
  return traj;
}

Trajectory simulate(const Scene& scene, const MaterialParams& material,
                    const Vec3& v0, const std::vector<double>& timestamps) {
  return simulate(scene, material, v0, make_schedule(scene, material, timestamps));
}

void export_trajectory(const Trajectory& t, const std::string& dir) {
  std::filesystem::create_directories(dir);
  char name[32];
  for (std::size_t i = 0; i < t.frames.size(); ++i) {
    std::snprintf(name, sizeof(name), "frame_%04zu.ply", i);
    write_ply(dir + "/" + name, t.frames[i]);
  }
  write_manifest(dir + "/timestamps.txt", t.timestamps);
}

}  // namespace phyrec
