#include "phyrec/render.hpp"

#include <algorithm>
#include <array>
#include <cmath>

namespace phyrec {
namespace {

constexpr double kNearPlane = 1e-3;
constexpr double kCutSigmas = 3.0;
// truncated-Gaussian floor: subtracted and renormalized so the sprite profile
// peaks at exactly 1 and falls to exactly 0 at the cutoff radius
const double kTail = std::exp(-0.5 * kCutSigmas * kCutSigmas);

struct Splat {
  int pixel;
  double factor;  // 1 - opacity * g, in [0, 1)
  int particle;
};

// per-particle projection data shared between forward and adjoint
struct Projection {
  Vec3 pc;        // camera-frame position
  double cx, cy;  // projected center, pixels
  double r;       // sprite radius (one standard deviation), pixels
  double opacity;
  bool visible;
};

Projection project_particle(const ParticleSet& ps, std::size_t i,
                            const Camera& cam) {
  Projection pr;
  pr.pc = cam.to_camera(ps.positions[i]);
  pr.visible = pr.pc.z() > kNearPlane;
  if (!pr.visible) return pr;
  const Vec2 c = cam.project(pr.pc);
  pr.cx = c.x();
  pr.cy = c.y();
  pr.r = cam.focal * ps.radii[i] / pr.pc.z();
  pr.opacity = ps.opacities[i];
  return pr;
}

double sprite_g(double d2, double r) {
  const double e = std::exp(-0.5 * d2 / (r * r));
  return (e - kTail) / (1.0 - kTail);
}

void build_splats(const ParticleSet& ps, const Camera& cam,
                  std::vector<Splat>& out, int& skipped) {
  skipped = 0;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    const Projection pr = project_particle(ps, i, cam);
    if (!pr.visible) {
      ++skipped;
      continue;
    }
    if (pr.opacity <= 0.0 || pr.r <= 0.0) continue;
    const double cut = kCutSigmas * pr.r;
    const int x0 = std::max(0, int(std::ceil(pr.cx - cut)));
    const int x1 = std::min(cam.width - 1, int(std::floor(pr.cx + cut)));
    const int y0 = std::max(0, int(std::ceil(pr.cy - cut)));
    const int y1 = std::min(cam.height - 1, int(std::floor(pr.cy + cut)));
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) {
        const double d2 = (x - pr.cx) * (x - pr.cx) + (y - pr.cy) * (y - pr.cy);
        if (d2 > cut * cut) continue;
        const double g = sprite_g(d2, pr.r);
        if (g <= 0.0) continue;
        const double f = 1.0 - pr.opacity * g;
        if (f < 1.0) out.push_back({y * cam.width + x, f, int(i)});
      }
  }
  if (skipped > 0 && std::size_t(skipped) == ps.size())
    throw ContractError("render_alpha: all particles behind the camera");
  // per-pixel factor ordering makes the compositing product independent of
  // the particle storage order down to the last bit
  std::sort(out.begin(), out.end(), [](const Splat& a, const Splat& b) {
    if (a.pixel != b.pixel) return a.pixel < b.pixel;
    if (a.factor != b.factor) return a.factor < b.factor;
    return a.particle < b.particle;
  });
}

}  // namespace

AlphaImage render_alpha(const ParticleSet& particles, const Camera& camera,
                        int* skipped) {
  camera.validate();
  AlphaImage img(camera.width, camera.height);
  int skip = 0;
  if (!particles.positions.empty()) {
    std::vector<Splat> splats;
    build_splats(particles, camera, splats, skip);
    std::size_t s = 0;
    while (s < splats.size()) {
      std::size_t e = s;
      double prod = 1.0;
      while (e < splats.size() && splats[e].pixel == splats[s].pixel)
        prod *= splats[e++].factor;
      img.values[splats[s].pixel] = 1.0 - prod;
      s = e;
    }
  }
  if (skipped) *skipped = skip;
  return img;
}

void render_alpha_vjp(const ParticleSet& particles, const Camera& camera,
                      const AlphaImage& alpha_bar,
                      std::vector<Vec3>& d_positions,
                      std::vector<double>& d_radii,
                      std::vector<double>& d_opacities) {
  if (particles.positions.empty()) return;
  int skip = 0;
  std::vector<Splat> splats;
  build_splats(particles, camera, splats, skip);

  const Mat3 Rt = camera.pose.linear().transpose();
  std::vector<double> suffix;
  std::size_t s = 0;
  while (s < splats.size()) {
    std::size_t e = s;
    while (e < splats.size() && splats[e].pixel == splats[s].pixel) ++e;
    const double abar = alpha_bar.values[splats[s].pixel];
    if (abar != 0.0) {
      // product excluding each factor, via prefix/suffix sweeps (no division,
      // so exact zeros from opacity-1 peaks are handled)
      suffix.assign(e - s + 1, 1.0);
      for (std::size_t j = e - s; j-- > 0;)
        suffix[j] = suffix[j + 1] * splats[s + j].factor;
      double prefix = 1.0;
      for (std::size_t j = s; j < e; ++j) {
        const Splat& sp = splats[j];
        const double excl = prefix * suffix[j - s + 1];
        prefix *= sp.factor;
        const double f_bar = -abar * excl;
        if (f_bar == 0.0) continue;

        const Projection pr = project_particle(particles, sp.particle, camera);
        const int x = sp.pixel % camera.width;
        const int y = sp.pixel / camera.width;
        const double dx = x - pr.cx, dy = y - pr.cy;
        const double d2 = dx * dx + dy * dy;
        const double ex = std::exp(-0.5 * d2 / (pr.r * pr.r));
        const double g = (ex - kTail) / (1.0 - kTail);

        d_opacities[sp.particle] += f_bar * (-g);
        const double g_bar = f_bar * (-pr.opacity);
        const double dg_dd2 = -0.5 * ex / (pr.r * pr.r * (1.0 - kTail));
        const double dg_dr = ex * d2 / (pr.r * pr.r * pr.r * (1.0 - kTail));
        const double cx_bar = g_bar * dg_dd2 * (-2.0 * dx);
        const double cy_bar = g_bar * dg_dd2 * (-2.0 * dy);
        const double r_bar = g_bar * dg_dr;

        const double z = pr.pc.z();
        d_radii[sp.particle] += r_bar * camera.focal / z;
        Vec3 pc_bar;
        pc_bar.x() = cx_bar * camera.focal / z;
        pc_bar.y() = cy_bar * camera.focal / z;
        pc_bar.z() = -(cx_bar * pr.pc.x() + cy_bar * pr.pc.y()) *
                         camera.focal / (z * z) -
                     r_bar * camera.focal * particles.radii[sp.particle] /
                         (z * z);
        d_positions[sp.particle] += Rt * pc_bar;
      }
    }
    s = e;
  }
}

// ---------------------------------------------------------------------------
// L1
// ---------------------------------------------------------------------------

namespace {
void check_dims(const AlphaImage& a, const AlphaImage& b) {
  if (a.width != b.width || a.height != b.height)
    throw ContractError("image dimensions differ");
}
}  // namespace

double loss_l1(const AlphaImage& a, const AlphaImage& b) {
  check_dims(a, b);
  double s = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    s += std::abs(a.values[i] - b.values[i]);
  return s / double(a.values.size());
}

void loss_l1_vjp(const AlphaImage& a, const AlphaImage& b, double loss_bar,
                 AlphaImage& a_bar) {
  check_dims(a, b);
  const double w = loss_bar / double(a.values.size());
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const double d = a.values[i] - b.values[i];
    if (d > 0.0)
      a_bar.values[i] += w;
    else if (d < 0.0)
      a_bar.values[i] -= w;
  }
}

// ---------------------------------------------------------------------------
// SSIM (11x11 Gaussian window, border-renormalized separable filtering)
// ---------------------------------------------------------------------------

namespace {

constexpr int kWin = 11;
constexpr int kHalf = kWin / 2;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

const std::array<double, kWin>& window_kernel() {
  static const std::array<double, kWin> k = [] {
    std::array<double, kWin> w{};
    double sum = 0.0;
    for (int i = 0; i < kWin; ++i) {
      w[i] = std::exp(-0.5 * (i - kHalf) * (i - kHalf) / (1.5 * 1.5));
      sum += w[i];
    }
    for (double& v : w) v /= sum;
    return w;
  }();
  return k;
}

// One separable pass along `axis` (0: x, 1: y). The window is renormalized
// over its in-bounds taps; `adjoint` applies the transpose of that operator
// (divide first, then correlate: the kernel is symmetric).
std::vector<double> filter_axis(const std::vector<double>& in, int w, int h,
                                int axis, bool adjoint) {
  const auto& K = window_kernel();
  const int len = axis == 0 ? w : h;
  std::vector<double> norm(len, 0.0);
  for (int p = 0; p < len; ++p)
    for (int t = -kHalf; t <= kHalf; ++t)
      if (p + t >= 0 && p + t < len) norm[p] += K[t + kHalf];

  std::vector<double> src = in;
  if (adjoint)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        src[std::size_t(y) * w + x] /= norm[axis == 0 ? x : y];

  std::vector<double> out(in.size(), 0.0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int p = axis == 0 ? x : y;
      double acc = 0.0;
      for (int t = -kHalf; t <= kHalf; ++t) {
        const int q = p + t;
        if (q < 0 || q >= len) continue;
        const std::size_t idx =
            axis == 0 ? std::size_t(y) * w + q : std::size_t(q) * w + x;
        acc += K[t + kHalf] * src[idx];
      }
      out[std::size_t(y) * w + x] = adjoint ? acc : acc / norm[p];
    }
  return out;
}

std::vector<double> filter2(const std::vector<double>& in, int w, int h) {
  return filter_axis(filter_axis(in, w, h, 0, false), w, h, 1, false);
}

std::vector<double> filter2_adjoint(const std::vector<double>& in, int w,
                                    int h) {
  return filter_axis(filter_axis(in, w, h, 1, true), w, h, 0, true);
}

struct SsimFields {
  std::vector<double> mu_a, mu_b, ua2, ub2, uab;
};

SsimFields ssim_fields(const AlphaImage& a, const AlphaImage& b) {
  check_dims(a, b);
  if (a.width < kWin || a.height < kWin)
    throw ContractError("image smaller than the SSIM window");
  const int w = a.width, h = a.height;
  SsimFields f;
  f.mu_a = filter2(a.values, w, h);
  f.mu_b = filter2(b.values, w, h);
  std::vector<double> tmp(a.values.size());
  for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = a.values[i] * a.values[i];
  f.ua2 = filter2(tmp, w, h);
  for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = b.values[i] * b.values[i];
  f.ub2 = filter2(tmp, w, h);
  for (std::size_t i = 0; i < tmp.size(); ++i) tmp[i] = a.values[i] * b.values[i];
  f.uab = filter2(tmp, w, h);
  return f;
}

}  // namespace

double loss_ssim(const AlphaImage& a, const AlphaImage& b) {
  const SsimFields f = ssim_fields(a, b);
  double mean = 0.0;
  for (std::size_t i = 0; i < f.mu_a.size(); ++i) {
    const double va = f.ua2[i] - f.mu_a[i] * f.mu_a[i];
    const double vb = f.ub2[i] - f.mu_b[i] * f.mu_b[i];
    const double cab = f.uab[i] - f.mu_a[i] * f.mu_b[i];
    const double A1 = 2.0 * f.mu_a[i] * f.mu_b[i] + kC1;
    const double A2 = 2.0 * cab + kC2;
    const double B1 = f.mu_a[i] * f.mu_a[i] + f.mu_b[i] * f.mu_b[i] + kC1;
    const double B2 = va + vb + kC2;
    mean += (A1 * A2) / (B1 * B2);
  }
  return 1.0 - mean / double(f.mu_a.size());
}

void loss_ssim_vjp(const AlphaImage& a, const AlphaImage& b, double loss_bar,
                   AlphaImage& a_bar) {
  const SsimFields f = ssim_fields(a, b);
  const int w = a.width, h = a.height;
  const std::size_t n = f.mu_a.size();
  const double s_bar = -loss_bar / double(n);

  std::vector<double> mu_a_bar(n), ua2_bar(n), uab_bar(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double va = f.ua2[i] - f.mu_a[i] * f.mu_a[i];
    const double vb = f.ub2[i] - f.mu_b[i] * f.mu_b[i];
    const double cab = f.uab[i] - f.mu_a[i] * f.mu_b[i];
    const double A1 = 2.0 * f.mu_a[i] * f.mu_b[i] + kC1;
    const double A2 = 2.0 * cab + kC2;
    const double B1 = f.mu_a[i] * f.mu_a[i] + f.mu_b[i] * f.mu_b[i] + kC1;
    const double B2 = va + vb + kC2;
    const double S = (A1 * A2) / (B1 * B2);
    const double invB = 1.0 / (B1 * B2);

    const double A1b = s_bar * A2 * invB;
    const double A2b = s_bar * A1 * invB;
    const double B1b = -s_bar * S / B1;
    const double B2b = -s_bar * S / B2;
    const double cab_b = 2.0 * A2b;
    const double va_b = B2b;
    mu_a_bar[i] = 2.0 * f.mu_b[i] * A1b + 2.0 * f.mu_a[i] * B1b -
                  f.mu_b[i] * cab_b - 2.0 * f.mu_a[i] * va_b;
    ua2_bar[i] = va_b;
    uab_bar[i] = cab_b;
  }

  const std::vector<double> t1 = filter2_adjoint(mu_a_bar, w, h);
  const std::vector<double> t2 = filter2_adjoint(ua2_bar, w, h);
  const std::vector<double> t3 = filter2_adjoint(uab_bar, w, h);
  for (std::size_t i = 0; i < n; ++i)
    a_bar.values[i] += t1[i] + 2.0 * a.values[i] * t2[i] + b.values[i] * t3[i];
}

// ---------------------------------------------------------------------------
// Combined image objective
// ---------------------------------------------------------------------------

double image_loss(const AlphaImage& a, const AlphaImage& b,
                  const LossWeights& weights) {
  return weights.lambda_l1 * loss_l1(a, b) +
         weights.lambda_ssim * loss_ssim(a, b);
}

void image_loss_vjp(const AlphaImage& a, const AlphaImage& b,
                    const LossWeights& weights, double loss_bar,
                    AlphaImage& a_bar) {
  loss_l1_vjp(a, b, weights.lambda_l1 * loss_bar, a_bar);
  loss_ssim_vjp(a, b, weights.lambda_ssim * loss_bar, a_bar);
}

}  // namespace phyrec
