#include "phyrec/rep4d.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "phyrec/io.hpp"

namespace phyrec {

namespace {

thread_local long g_fallbacks = 0;

struct Weights {
  std::vector<double> w;  // per control, normalized; empty when fallback
  int nearest = -1;       // fallback target when w is empty
};

Weights rbf_weights(const DeformationField& f, const Vec3& x) {
  Weights out;
  const std::size_t J = f.control_count();
  out.w.resize(J);
  const double inv2s2 = 1.0 / (2.0 * f.rbf_sigma * f.rbf_sigma);
  double sum = 0.0;
  double best_d2 = std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < J; ++j) {
    const double d2 = (x - f.control_points[j]).squaredNorm();
    out.w[j] = std::exp(-d2 * inv2s2);
    sum += out.w[j];
    if (d2 < best_d2) {
      best_d2 = d2;
      out.nearest = int(j);
    }
  }
  if (sum <= 0.0) {
    out.w.clear();
    ++g_fallbacks;
    return out;
  }
  for (double& v : out.w) v /= sum;
  return out;
}

void check_frame(const DeformationField& f, std::size_t t) {
  if (t >= f.frame_count())
    throw ContractError("eval_deformation: frame outside the fitted range");
}

}  // namespace

void DeformationField::validate() const {
  if (control_count() < 8)
    throw ContractError("DeformationField: needs at least 8 control points");
  if (!(rbf_sigma > 0))
    throw ContractError("DeformationField: rbf_sigma must be positive");
  if (displacements.empty())
    throw ContractError("DeformationField: no displacement rows");
  for (const auto& row : displacements)
    if (row.size() != control_count())
      throw ContractError("DeformationField: ragged displacement table");
  for (const Vec3& d : displacements[0])
    if (d != Vec3::Zero())
      throw ContractError("DeformationField: frame-0 displacements must be zero");
}

long deformation_fallback_count() { return g_fallbacks; }
void reset_deformation_fallbacks() { g_fallbacks = 0; }

std::vector<Vec3> eval_deformation(const DeformationField& field,
                                   const std::vector<Vec3>& x0,
                                   std::size_t t) {
  check_frame(field, t);
  const std::vector<Vec3>& d = field.displacements[t];
  std::vector<Vec3> out(x0.size());
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const Weights ww = rbf_weights(field, x0[i]);
    Vec3 shift = Vec3::Zero();
    if (ww.w.empty()) {
      shift = d[std::size_t(ww.nearest)];
    } else {
      for (std::size_t j = 0; j < d.size(); ++j) shift += ww.w[j] * d[j];
    }
    out[i] = x0[i] + shift;
  }
  return out;
}

void eval_deformation_vjp(const DeformationField& field,
                          const std::vector<Vec3>& x0, std::size_t t,
                          const std::vector<Vec3>& xhat_bar,
                          std::vector<Vec3>& x0_bar,
                          std::vector<Vec3>& control_bar,
                          std::vector<Vec3>& d_bar) {
  check_frame(field, t);
  const std::vector<Vec3>& d = field.displacements[t];
  const std::size_t J = field.control_count();
  const double inv_s2 = 1.0 / (field.rbf_sigma * field.rbf_sigma);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    const Vec3& u = xhat_bar[i];
    const Weights ww = rbf_weights(field, x0[i]);
    x0_bar[i] += u;
    if (ww.w.empty()) {
      // nearest-control branch: weights are locally constant
      d_bar[std::size_t(ww.nearest)] += u;
      continue;
    }
    // a_j = w_j (u . d_j); the weight-normalization adjoint reuses their sum
    double A = 0.0;
    Vec3 q = Vec3::Zero();
    for (std::size_t j = 0; j < J; ++j) {
      q += ww.w[j] * (x0[i] - field.control_points[j]);
      A += ww.w[j] * u.dot(d[j]);
    }
    Vec3 xb = A * q;
    for (std::size_t j = 0; j < J; ++j) {
      const double udj = u.dot(d[j]);
      const double aj = ww.w[j] * udj;
      const Vec3 rel = x0[i] - field.control_points[j];
      d_bar[j] += ww.w[j] * u;
      xb -= aj * rel;
      control_bar[j] += (ww.w[j] * (udj - A) * inv_s2) * rel;
    }
    x0_bar[i] += inv_s2 * xb;
  }
}

// ---------------------------------------------------------------------------
// Visual hull
// ---------------------------------------------------------------------------

std::vector<Vec3> visual_hull(const ObservationSet& obs,
                              const std::vector<Camera>& cameras,
                              int resolution, double threshold) {
  if (cameras.empty()) throw ContractError("visual_hull: no cameras");
  if (obs.alpha.empty() || obs.alpha[0].size() != cameras.size())
    throw ContractError("visual_hull: observations do not match cameras");
  if (resolution < 2) throw ContractError("visual_hull: resolution too small");

  std::vector<Vec3> hull;
  const double w = 1.0 / resolution;
  for (int ix = 0; ix < resolution; ++ix)
    for (int iy = 0; iy < resolution; ++iy)
      for (int iz = 0; iz < resolution; ++iz) {
        const Vec3 p((ix + 0.5) * w, (iy + 0.5) * w, (iz + 0.5) * w);
        bool inside = true;
        for (std::size_t c = 0; c < cameras.size() && inside; ++c) {
          const Camera& cam = cameras[c];
          const Vec3 pc = cam.to_camera(p);
          if (pc.z() <= 1e-3) {
            inside = false;
            break;
          }
          const Vec2 px = cam.project(pc);
          const long x = std::lround(px.x()), y = std::lround(px.y());
          if (x < 0 || y < 0 || x >= cam.width || y >= cam.height ||
              obs.alpha[0][c].at(int(x), int(y)) < threshold)
            inside = false;
        }
        if (inside) hull.push_back(p);
      }
  if (hull.empty())
    throw ReconstructionError(
        "visual_hull: silhouettes carve away the whole domain");
  return hull;
}

// ---------------------------------------------------------------------------
// Stage-0 fit
// ---------------------------------------------------------------------------

namespace {

double mean_control_spacing(const std::vector<Vec3>& c) {
  double sum = 0.0;
  for (std::size_t i = 0; i < c.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < c.size(); ++j)
      if (j != i) best = std::min(best, (c[i] - c[j]).squaredNorm());
    sum += std::sqrt(best);
  }
  return sum / double(c.size());
}

struct Stage0Params {
  std::vector<Vec3> positions;
  std::vector<double> radii, opacities;
  std::vector<Vec3> controls;
  std::vector<std::vector<Vec3>> disp;  // rows 0..T-1, row 0 stays zero
};

}  // namespace

Stage0Result fit_stage0(const ObservationSet& obs,
                        const std::vector<Camera>& cameras,
                        const Stage0Config& cfg) {
  if (cameras.empty()) throw ContractError("fit_stage0: need a camera");
  const std::size_t T = obs.frame_count();
  if (T < 2) throw ContractError("fit_stage0: need at least two frames");
  if (cfg.control_count < 8)
    throw ContractError("fit_stage0: need at least 8 control points");
  if (cfg.particle_count < cfg.control_count)
    throw ContractError("fit_stage0: fewer particles than control points");
  if (cfg.iterations < 1)
    throw ContractError("fit_stage0: iterations must be positive");

  const std::vector<Vec3> hull = visual_hull(
      obs, cameras, cfg.hull_resolution, cfg.silhouette_threshold);
  const double vox = 1.0 / cfg.hull_resolution;
  const double occupied = double(hull.size()) * vox * vox * vox;

  // jittered sampling of the hull voxels
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::vector<std::size_t> order(hull.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n = std::size_t(cfg.particle_count);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);

  Stage0Params p;
  p.positions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3& center = hull[order[i % hull.size()]];
    p.positions[i] = center + vox * Vec3(jitter(rng), jitter(rng), jitter(rng));
  }
  const double radius0 = 0.5 * std::cbrt(occupied / double(n));
  p.radii.assign(n, radius0);
  p.opacities.assign(n, cfg.initial_opacity);

  const std::size_t J = std::size_t(cfg.control_count);
  p.controls.resize(J);
  std::sample(p.positions.begin(), p.positions.end(), p.controls.begin(), J,
              rng);
  p.disp.assign(T, std::vector<Vec3>(J, Vec3::Zero()));

  DeformationField field;
  field.control_points = p.controls;
  field.displacements = p.disp;
  field.rbf_sigma = 2.0 * mean_control_spacing(p.controls);

  // one Adam state per parameter group; displacements for frames 1..T-1
  AdamState a_pos, a_ctrl, a_disp, a_app;
  a_pos.reset(Eigen::Index(3 * n));
  a_ctrl.reset(Eigen::Index(3 * J));
  a_disp.reset(Eigen::Index(3 * J * (T - 1)));
  a_app.reset(Eigen::Index(2 * n));

  ParticleSet view;
  view.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    view.masses[i] = 1.0;
    view.volumes[i] = 1.0;
  }

  Stage0Result result;
  result.best_loss = std::numeric_limits<double>::infinity();
  Stage0Params best = p;
  std::vector<double> best_frame_loss;

  for (int iter = 0; iter < cfg.iterations; ++iter) {
    field.control_points = p.controls;
    field.displacements = p.disp;

    std::vector<Vec3> g_pos(n, Vec3::Zero()), g_ctrl(J, Vec3::Zero());
    std::vector<double> g_rad(n, 0.0), g_op(n, 0.0);
    std::vector<std::vector<Vec3>> g_disp(T, std::vector<Vec3>(J, Vec3::Zero()));
    std::vector<double> frame_loss(T, 0.0);
    double total = 0.0;

    for (std::size_t i = 0; i < n; ++i) {
      view.radii[i] = p.radii[i];
      view.opacities[i] = p.opacities[i];
    }
    for (std::size_t t = 0; t < T; ++t) {
      view.positions = eval_deformation(field, p.positions, t);
      std::vector<Vec3> xhat_bar(n, Vec3::Zero());
      for (std::size_t c = 0; c < cameras.size(); ++c) {
        const AlphaImage img = render_alpha(view, cameras[c]);
        const AlphaImage& target = obs.alpha[t][c];
        const double lf = cfg.weights.lambda_img * image_loss(img, target, cfg.weights) +
                          cfg.weights.lambda_alpha * loss_l1(img, target);
        frame_loss[t] += lf;
        AlphaImage a_bar(img.width, img.height);
        image_loss_vjp(img, target, cfg.weights, cfg.weights.lambda_img, a_bar);
        loss_l1_vjp(img, target, cfg.weights.lambda_alpha, a_bar);
        render_alpha_vjp(view, cameras[c], a_bar, xhat_bar, g_rad, g_op);
      }
      total += frame_loss[t];
      eval_deformation_vjp(field, p.positions, t, xhat_bar, g_pos, g_ctrl,
                           g_disp[t]);
    }

    // temporal smoothness between consecutive displacement rows
    for (std::size_t t = 0; t + 1 < T; ++t)
      for (std::size_t j = 0; j < J; ++j) {
        const Vec3 diff = p.disp[t + 1][j] - p.disp[t][j];
        total += cfg.lambda_temp * diff.squaredNorm();
        g_disp[t + 1][j] += 2.0 * cfg.lambda_temp * diff;
        g_disp[t][j] -= 2.0 * cfg.lambda_temp * diff;
      }

    result.loss_trace.push_back(total);
    if (total < result.best_loss) {
      result.best_loss = total;
      result.best_iter = iter;
      best = p;
      best_frame_loss = frame_loss;
    }

    const double f = cosine_lr(iter, cfg.iterations, 1.0, cfg.floor_fraction);
    auto pack3 = [](const std::vector<Vec3>& v) {
      VecX out(3 * v.size());
      for (std::size_t i = 0; i < v.size(); ++i)
        out.segment<3>(Eigen::Index(3 * i)) = v[i];
      return out;
    };
    VecX q = pack3(p.positions);
    adam_step(a_pos, q, pack3(g_pos), cfg.lr_positions * f);
    for (std::size_t i = 0; i < n; ++i)
      for (int c = 0; c < 3; ++c)
        p.positions[i][c] = std::clamp(q[Eigen::Index(3 * i + c)], 0.01, 0.99);

    q = pack3(p.controls);
    adam_step(a_ctrl, q, pack3(g_ctrl), cfg.lr_controls * f);
    for (std::size_t j = 0; j < J; ++j)
      for (int c = 0; c < 3; ++c)
        p.controls[j][c] = std::clamp(q[Eigen::Index(3 * j + c)], 0.01, 0.99);

    VecX qd(Eigen::Index(3 * J * (T - 1))), gd(qd.size());
    for (std::size_t t = 1; t < T; ++t)
      for (std::size_t j = 0; j < J; ++j) {
        const Eigen::Index base = Eigen::Index(3 * ((t - 1) * J + j));
        qd.segment<3>(base) = p.disp[t][j];
        gd.segment<3>(base) = g_disp[t][j];
      }
    adam_step(a_disp, qd, gd, cfg.lr_displacements * f);
    for (std::size_t t = 1; t < T; ++t)
      for (std::size_t j = 0; j < J; ++j)
        p.disp[t][j] = qd.segment<3>(Eigen::Index(3 * ((t - 1) * J + j)));

    VecX qa(Eigen::Index(2 * n)), ga(qa.size());
    for (std::size_t i = 0; i < n; ++i) {
      qa[Eigen::Index(i)] = p.radii[i];
      qa[Eigen::Index(n + i)] = p.opacities[i];
      ga[Eigen::Index(i)] = g_rad[i];
      ga[Eigen::Index(n + i)] = g_op[i];
    }
    adam_step(a_app, qa, ga, cfg.lr_appearance * f);
    for (std::size_t i = 0; i < n; ++i) {
      p.radii[i] = std::max(qa[Eigen::Index(i)], 1e-4);
      p.opacities[i] = std::clamp(qa[Eigen::Index(n + i)], 1e-4, 1.0);
    }
  }

  // assemble the reported iterate as a sim-ready particle set
  result.particles.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    result.particles.positions[i] = best.positions[i];
    result.particles.masses[i] = cfg.density * occupied / double(n);
    result.particles.volumes[i] = occupied / double(n);
    result.particles.radii[i] = best.radii[i];
    result.particles.opacities[i] = best.opacities[i];
  }
  result.field.control_points = best.controls;
  result.field.displacements = best.disp;
  result.field.rbf_sigma = field.rbf_sigma;
  result.per_frame_loss = best_frame_loss;
  return result;
}

std::vector<std::vector<Vec3>> deformed_targets(const Stage0Result& fit) {
  std::vector<std::vector<Vec3>> out;
  for (std::size_t t = 0; t < fit.field.frame_count(); ++t)
    out.push_back(eval_deformation(fit.field, fit.particles.positions, t));
  return out;
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

void save_rep4d(const std::string& path, const Stage0Result& fit) {
  std::ofstream f(path);
  if (!f) throw ConfigError("save_rep4d: cannot open " + path);
  const std::size_t J = fit.field.control_count();
  const std::size_t T = fit.field.frame_count();
  const std::size_t n = fit.particles.size();
  f << "rep4d 1\n";
  f << "sigma " << format_double(fit.field.rbf_sigma) << "\n";
  f << "controls " << J << "\nframes " << T << "\nparticles " << n << "\n";
  f << "best_loss " << format_double(fit.best_loss) << "\n";
  f << "best_iter " << fit.best_iter << "\n";
  f << "frame_loss";
  for (double v : fit.per_frame_loss) f << " " << format_double(v);
  f << "\n";
  for (const Vec3& c : fit.field.control_points)
    f << format_double(c.x()) << " " << format_double(c.y()) << " "
      << format_double(c.z()) << "\n";
  for (const auto& row : fit.field.displacements)
    for (const Vec3& d : row)
      f << format_double(d.x()) << " " << format_double(d.y()) << " "
        << format_double(d.z()) << "\n";
  for (std::size_t i = 0; i < n; ++i) {
    const ParticleSet& ps = fit.particles;
    f << format_double(ps.positions[i].x()) << " "
      << format_double(ps.positions[i].y()) << " "
      << format_double(ps.positions[i].z()) << " "
      << format_double(ps.masses[i]) << " " << format_double(ps.volumes[i])
      << " " << format_double(ps.radii[i]) << " "
      << format_double(ps.opacities[i]) << "\n";
  }
}

Stage0Result load_rep4d(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("load_rep4d: cannot open " + path);
  std::string magic;
  int version = 0;
  f >> magic >> version;
  if (magic != "rep4d" || version != 1)
    throw ConfigError("load_rep4d: not a rep4d v1 file: " + path);
  std::string key;
  std::size_t J = 0, T = 0, n = 0;
  Stage0Result fit;
  f >> key >> fit.field.rbf_sigma;
  f >> key >> J >> key >> T >> key >> n;
  f >> key >> fit.best_loss >> key >> fit.best_iter;
  f >> key;  // frame_loss
  fit.per_frame_loss.resize(T);
  for (double& v : fit.per_frame_loss) f >> v;
  fit.field.control_points.resize(J);
  for (Vec3& c : fit.field.control_points) f >> c.x() >> c.y() >> c.z();
  fit.field.displacements.assign(T, std::vector<Vec3>(J));
  for (auto& row : fit.field.displacements)
    for (Vec3& d : row) f >> d.x() >> d.y() >> d.z();
  fit.particles.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    ParticleSet& ps = fit.particles;
    f >> ps.positions[i].x() >> ps.positions[i].y() >> ps.positions[i].z() >>
        ps.masses[i] >> ps.volumes[i] >> ps.radii[i] >> ps.opacities[i];
  }
  if (!f) throw ConfigError("load_rep4d: truncated file: " + path);
  return fit;
}

}  // namespace phyrec
