#include "phyrec/adjoint.hpp"

#include <cmath>

namespace phyrec {
namespace {

struct Adj {
  std::vector<Vec3> x, v;
  std::vector<Mat3> F, C;

  void resize_zero(std::size_t n) {
    x.assign(n, Vec3::Zero());
    v.assign(n, Vec3::Zero());
    F.assign(n, Mat3::Zero());
    C.assign(n, Mat3::Zero());
  }

  bool finite() const {
    for (const Vec3& a : x)
      if (!a.allFinite()) return false;
    for (const Vec3& a : v)
      if (!a.allFinite()) return false;
    for (const Mat3& a : F)
      if (!a.allFinite()) return false;
    for (const Mat3& a : C)
      if (!a.allFinite()) return false;
    return true;
  }
};

Vec3 weight_gradient(const Interp& it, int i, int j, int k) {
  return Vec3(it.dw[0][i] * it.w[1][j] * it.w[2][k],
              it.w[0][i] * it.dw[1][j] * it.w[2][k],
              it.w[0][i] * it.w[1][j] * it.dw[2][k]);
}

// Adjoint of apply_boundary: replays the forward branch decisions on the
// pre-boundary velocity and transforms the post-boundary adjoint in place.
void boundary_vjp(const Vec3& v_pre, int ix, int iy, int iz, int nodes,
                  BoundaryType boundary, double friction, Vec3& vb) {
  // forward floor result, needed to replay the wall clamp conditions
  Vec3 v1 = v_pre;
  bool floor_sticky = false, floor_separating = false;
  if (iy <= 1) {
    if (boundary == BoundaryType::Sticky) {
      v1.setZero();
      floor_sticky = true;
    } else if (v_pre.y() < 0.0) {
      floor_separating = true;
      const double vn = -v_pre.y();
      v1.y() = 0.0;
      const double vt = std::hypot(v_pre.x(), v_pre.z());
      if (vt > 0.0) {
        const double s = std::max(0.0, 1.0 - friction * vn / vt);
        v1.x() *= s;
        v1.z() *= s;
      }
    }
  }

  // walls applied after the floor in the forward pass, so undone first
  if (ix <= 1 && v1.x() < 0.0) vb.x() = 0.0;
  if (ix >= nodes - 2 && v1.x() > 0.0) vb.x() = 0.0;
  if (iz <= 1 && v1.z() < 0.0) vb.z() = 0.0;
  if (iz >= nodes - 2 && v1.z() > 0.0) vb.z() = 0.0;
  if (iy >= nodes - 2 && v1.y() > 0.0) vb.y() = 0.0;

  if (floor_sticky) {
    vb.setZero();
    return;
  }
  if (floor_separating) {
    const double vx = v_pre.x(), vz = v_pre.z();
    const double vn = -v_pre.y();
    const double vt = std::hypot(vx, vz);
    if (vt <= 0.0) {
      vb.setZero();
      return;
    }
    const double s = 1.0 - friction * vn / vt;
    if (s <= 0.0) {
      vb.setZero();
      return;
    }
    // out = (s vx, 0, s vz), s = 1 - friction vn / vt
    const double tang = vb.x() * vx + vb.z() * vz;
    const double ds_scale = friction * vn / (vt * vt * vt);
    Vec3 out;
    out.x() = vb.x() * s + tang * ds_scale * vx;
    out.z() = vb.z() * s + tang * ds_scale * vz;
    out.y() = tang * friction / vt;  // through vn = -v_y
    vb = out;
  }
}

// One reverse substep: consumes the adjoint of the post-substep state and
// produces the adjoint of the pre-substep state, accumulating material
// parameter gradients along the way.
void backward_substep(const ParticleSet& statics, const Scene& scene,
                      const MaterialParams& m, const Lame& l, double dt,
                      const SimState& pre, const Adj& post, Adj& out,
                      MaterialGrad& mgrad, Grid& grid) {
  const int res = scene.grid_resolution;
  if (grid.resolution != res) grid.reset(res);
  p2g(statics, pre, m, l, dt, grid);

  const int nn = grid.nodes_per_axis();
  const std::size_t NN = std::size_t(nn) * nn * nn;
  const double h = 1.0 / res;
  const double four_inv_h2 = 4.0 * double(res) * res;

  // forward node velocities (post boundary)
  std::vector<Vec3> vn(NN, Vec3::Zero());
  for (int ix = 0; ix < nn; ++ix)
    for (int iy = 0; iy < nn; ++iy)
      for (int iz = 0; iz < nn; ++iz) {
        const std::size_t idx = grid.index(ix, iy, iz);
        if (grid.mass[idx] <= 0.0) continue;
        Vec3 v = grid.momentum[idx] / grid.mass[idx] + dt * scene.gravity;
        apply_boundary(v, ix, iy, iz, nn, scene.boundary, scene.ground_friction);
        vn[idx] = v;
      }

  const std::size_t np = pre.size();
  out.resize_zero(np);
  std::vector<Vec3> vbar(NN, Vec3::Zero());

  // --- reverse of g2p ---
  for (std::size_t p = 0; p < np; ++p) {
    const Interp it = interpolate(pre.positions[p], res);

    Mat3 B = Mat3::Zero();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const double w = it.w[0][i] * it.w[1][j] * it.w[2][k];
          const Vec3 dpos((it.base[0] + i) * h - pre.positions[p].x(),
                          (it.base[1] + j) * h - pre.positions[p].y(),
                          (it.base[2] + k) * h - pre.positions[p].z());
          B += (w * vn[grid.index(it.base[0] + i, it.base[1] + j,
                                  it.base[2] + k)]) *
               dpos.transpose();
        }
    const Mat3 Cnew = four_inv_h2 * B;
    const Mat3 trial = (Mat3::Identity() + dt * Cnew) * pre.F[p];

    Mat3 Ftrial_bar = Mat3::Zero();
    advance_F_vjp(m, l, trial, dt, post.F[p], Ftrial_bar, mgrad);

    const Mat3 Cnew_bar = post.C[p] + dt * Ftrial_bar * pre.F[p].transpose();
    out.F[p] = (Mat3::Identity() + dt * Cnew).transpose() * Ftrial_bar;

    const Vec3 vtilde = post.v[p] + dt * post.x[p];
    Vec3 xbar = post.x[p];
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const double w = it.w[0][i] * it.w[1][j] * it.w[2][k];
          const Vec3 gw = weight_gradient(it, i, j, k);
          const Vec3 dpos((it.base[0] + i) * h - pre.positions[p].x(),
                          (it.base[1] + j) * h - pre.positions[p].y(),
                          (it.base[2] + k) * h - pre.positions[p].z());
          const std::size_t idx =
              grid.index(it.base[0] + i, it.base[1] + j, it.base[2] + k);
          const Vec3& vi = vn[idx];
          vbar[idx] += w * vtilde + (four_inv_h2 * w) * (Cnew_bar * dpos);
          xbar += vtilde.dot(vi) * gw +
                  four_inv_h2 * (vi.dot(Cnew_bar * dpos) * gw -
                                 w * (Cnew_bar.transpose() * vi));
        }
    out.x[p] = xbar;
  }

  // --- reverse of grid_update ---
  std::vector<Vec3> mombar(NN, Vec3::Zero());
  std::vector<double> massbar(NN, 0.0);
  for (int ix = 0; ix < nn; ++ix)
    for (int iy = 0; iy < nn; ++iy)
      for (int iz = 0; iz < nn; ++iz) {
        const std::size_t idx = grid.index(ix, iy, iz);
        const double mass = grid.mass[idx];
        if (mass <= 0.0) continue;
        const Vec3 v_pre = grid.momentum[idx] / mass + dt * scene.gravity;
        Vec3 vb = vbar[idx];
        boundary_vjp(v_pre, ix, iy, iz, nn, scene.boundary,
                     scene.ground_friction, vb);
        mombar[idx] = vb / mass;
        massbar[idx] = -(v_pre - dt * scene.gravity).dot(vb) / mass;
      }

  // --- reverse of p2g ---
  for (std::size_t p = 0; p < np; ++p) {
    const Interp it = interpolate(pre.positions[p], res);
    const Mat3 tau = kirchhoff_stress(m, l, pre.F[p], pre.C[p]);
    const double stress_coeff = four_inv_h2 * dt * statics.volumes[p];
    const Mat3 G = -stress_coeff * tau + statics.masses[p] * pre.C[p];
    const Vec3 mv = statics.masses[p] * pre.velocities[p];

    Vec3 vbar_p = Vec3::Zero();
    Mat3 Gbar = Mat3::Zero();
    Vec3 xbar_add = Vec3::Zero();
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j)
        for (int k = 0; k < 3; ++k) {
          const double w = it.w[0][i] * it.w[1][j] * it.w[2][k];
          const Vec3 gw = weight_gradient(it, i, j, k);
          const Vec3 dpos((it.base[0] + i) * h - pre.positions[p].x(),
                          (it.base[1] + j) * h - pre.positions[p].y(),
                          (it.base[2] + k) * h - pre.positions[p].z());
          const std::size_t idx =
              grid.index(it.base[0] + i, it.base[1] + j, it.base[2] + k);
          const Vec3& mb = mombar[idx];
          vbar_p += (w * statics.masses[p]) * mb;
          Gbar += (w * mb) * dpos.transpose();
          xbar_add += (mv + G * dpos).dot(mb) * gw - w * (G.transpose() * mb) +
                      (statics.masses[p] * massbar[idx]) * gw;
        }
    out.v[p] = vbar_p;
    out.x[p] += xbar_add;

    const Mat3 taubar = -stress_coeff * Gbar;
    Mat3 Fb = Mat3::Zero(), Cb = Mat3::Zero();
    kirchhoff_stress_vjp(m, l, pre.F[p], pre.C[p], taubar, Fb, Cb, mgrad);
    out.F[p] += Fb;
    out.C[p] = Cb + statics.masses[p] * Gbar;
  }
}

// Shared forward driver: runs the schedule, invoking `on_state` with the
// state at every substep boundary (including index 0 and the last).
template <class Fn>
void run_forward(const Scene& scene, const MaterialParams& material,
                 const Lame& lame, const Vec3& v0, const SimSchedule& schedule,
                 Fn&& on_state) {
  SimState state = SimState::from_particles(scene.particles);
  for (Vec3& v : state.velocities) v = v0;
  on_state(0L, state);

  Grid grid(scene.grid_resolution);
  SimState next;
  long index = 0;
  for (std::size_t i = 0; i < schedule.substeps.size(); ++i)
    for (int s = 0; s < schedule.substeps[i]; ++s) {
      substep(scene.particles, scene, material, lame, schedule.dt[i], state,
              next, grid, index);
      std::swap(state, next);
      ++index;
      double vmax = 0.0;
      for (const Vec3& v : state.velocities) vmax = std::max(vmax, v.norm());
      if (vmax > kMaxSpeed)
        throw DivergenceError("max particle speed exceeded " +
                              std::to_string(kMaxSpeed) + " at substep " +
                              std::to_string(index - 1));
      on_state(index, state);
    }
}

// Substep boundary index of each snapshot frame.
std::vector<long> frame_indices(const SimSchedule& schedule) {
  std::vector<long> cum = {0};
  for (int s : schedule.substeps) cum.push_back(cum.back() + s);
  return cum;
}

double substep_dt_at(const SimSchedule& schedule, long index) {
  long c = 0;
  for (std::size_t i = 0; i < schedule.substeps.size(); ++i) {
    c += schedule.substeps[i];
    if (index < c) return schedule.dt[i];
  }
  throw ContractError("substep index out of range");
}

}  // namespace

int checkpoint_schedule(long total_substeps, long memory_budget_states) {
  if (memory_budget_states < 2)
    throw ContractError("checkpoint_schedule: budget below two states");
  if (total_substeps <= 0) return 1;
  // checkpoints sit at substep boundaries 0, k, 2k, ...; the smallest stride
  // whose stored count fits the budget is ceil(T / (budget - 1))
  return int((total_substeps + memory_budget_states - 2) /
             (memory_budget_states - 1));
}

double evaluate_loss(const Scene& scene, const MaterialParams& material,
                     const Vec3& v0, TrajectoryLoss& loss_fn,
                     const SimSchedule& schedule) {
  const Lame lame = lame_from_material(material);
  const std::vector<long> frames = frame_indices(schedule);
  double loss = 0.0;
  std::size_t f = 0;
  FrameAdjoint scratch;
  run_forward(scene, material, lame, v0, schedule,
              [&](long index, const SimState& st) {
                if (f < frames.size() && frames[f] == index) {
                  ParticleSet ps = scene.particles;
                  st.write_to(ps);
                  scratch.resize(ps.size());
                  loss += loss_fn.evaluate(f, ps, scratch);
                  ++f;
                }
              });
  return loss;
}

GradResult grad(const Scene& scene, const MaterialParams& material,
                const Vec3& v0, TrajectoryLoss& loss_fn,
                const SimSchedule& schedule, const ParamFlags& which,
                long memory_budget_states) {
  const Lame lame = lame_from_material(material);
  const std::vector<long> frames = frame_indices(schedule);
  const long T = frames.back();
  const int k = checkpoint_schedule(
      T, memory_budget_states < 0 ? T + 2 : memory_budget_states);

  // Forward: checkpoints every k substeps, loss and frame adjoints on the fly.
  std::vector<SimState> checkpoints;
  std::vector<FrameAdjoint> fadj(frames.size());
  const std::size_t np = scene.particles.size();
  GradResult result;
  {
    std::size_t f = 0;
    run_forward(scene, material, lame, v0, schedule,
                [&](long index, const SimState& st) {
                  if (index % k == 0) checkpoints.push_back(st);
                  if (f < frames.size() && frames[f] == index) {
                    ParticleSet ps = scene.particles;
                    st.write_to(ps);
                    fadj[f].resize(np);
                    result.loss += loss_fn.evaluate(f, ps, fadj[f]);
                    ++f;
                  }
                });
  }

  // Backward sweep over checkpoint windows.
  Adj adj, adj_prev;
  adj.resize_zero(np);
  MaterialGrad mgrad;
  Grid grid(scene.grid_resolution);

  auto add_frame_adjoint = [&](std::size_t f) {
    for (std::size_t p = 0; p < np; ++p) {
      adj.x[p] += fadj[f].x_bar[p];
      adj.v[p] += fadj[f].v_bar[p];
    }
  };

  long current = T;
  std::size_t next_frame = frames.size() - 1;
  if (T > 0 && frames[next_frame] == current) {
    add_frame_adjoint(next_frame);
    if (next_frame > 0) --next_frame;
  }

  std::vector<SimState> window;
  while (current > 0) {
    const long w0 = ((current - 1) / k) * k;
    // replay the window from its checkpoint; window[i] = state at w0 + i
    window.clear();
    window.push_back(checkpoints[w0 / k]);
    {
      Grid fgrid(scene.grid_resolution);
      SimState next;
      for (long s = w0; s < current - 1; ++s) {
        substep(scene.particles, scene, material, lame, substep_dt_at(schedule, s),
                window.back(), next, fgrid, s);
        window.push_back(next);
      }
    }
    for (long s = current - 1; s >= w0; --s) {
      backward_substep(scene.particles, scene, material, lame,
                       substep_dt_at(schedule, s), window[s - w0], adj,
                       adj_prev, mgrad, grid);
      std::swap(adj, adj_prev);
      if (!adj.finite())
        throw NumericError("non-finite adjoint at substep " + std::to_string(s));
      if (s > 0 && frames[next_frame] == s) {
        add_frame_adjoint(next_frame);
        if (next_frame > 0) --next_frame;
      }
      window.pop_back();
    }
    current = w0;
  }
  add_frame_adjoint(0);

  // Map the state adjoint at t = 0 onto the parameters.
  ParamGradients& g = result.grads;
  g.d_material = VecX::Zero(raw_dim(material.model));
  g.d_x0.assign(np, Vec3::Zero());
  g.d_radii.assign(np, 0.0);
  g.d_opacities.assign(np, 0.0);

  if (which.v0)
    for (std::size_t p = 0; p < np; ++p) g.d_v0 += adj.v[p];
  if (which.material) g.d_material = raw_gradient(material, mgrad);
  if (which.x0)
    for (std::size_t p = 0; p < np; ++p) g.d_x0[p] = adj.x[p];
  if (which.appearance)
    for (const FrameAdjoint& fa : fadj)
      for (std::size_t p = 0; p < np; ++p) {
        g.d_radii[p] += fa.radii_bar[p];
        g.d_opacities[p] += fa.opacity_bar[p];
      }
  return result;
}

VecX fd_gradient(const Scene& scene, const MaterialParams& material,
                 const Vec3& v0, TrajectoryLoss& loss_fn,
                 const SimSchedule& schedule) {
  const VecX raw = params_to_raw(material);
  const int dim = 3 + int(raw.size());
  VecX out(dim);
  for (int i = 0; i < dim; ++i) {
    const double theta = i < 3 ? v0[i] : raw[i - 3];
    const double h = std::max(1e-5, 1e-4 * std::abs(theta));
    auto eval = [&](double delta) {
      Vec3 v = v0;
      VecX r = raw;
      if (i < 3)
        v[i] += delta;
      else
        r[i - 3] += delta;
      MaterialParams mp = material;
      if (i >= 3) {
        // decode only the active coordinates; inactive fields keep their
        // incoming values (Sand reads its fixed elastic moduli from them)
        const MaterialParams t = params_from_raw(material.model, r);
        switch (material.model) {
          case MaterialModel::Elastic:
            mp.E = t.E;
            mp.nu = t.nu;
            break;
          case MaterialModel::Newtonian:
            mp.mu_visc = t.mu_visc;
            mp.kappa = t.kappa;
            break;
          case MaterialModel::NonNewtonian:
            mp.mu_visc = t.mu_visc;
            mp.kappa = t.kappa;
            mp.tau_y = t.tau_y;
            mp.eta = t.eta;
            break;
          case MaterialModel::Plasticine:
            mp.E = t.E;
            mp.nu = t.nu;
            mp.tau_y = t.tau_y;
            break;
          case MaterialModel::Sand:
            mp.theta_fric = t.theta_fric;
            break;
        }
      }
      return evaluate_loss(scene, mp, v, loss_fn, schedule);
    };
    out[i] = (eval(h) - eval(-h)) / (2.0 * h);
  }
  return out;
}

}  // namespace phyrec
