#include "phyrec/materials.hpp"

#include <cmath>
#include <limits>

namespace phyrec {
namespace {

constexpr double kMinSigma = 1e-4;
constexpr double kPi = 3.14159265358979323846;

Vec3 log_vec(const Vec3& s) {
  return Vec3(std::log(s[0]), std::log(s[1]), std::log(s[2]));
}

Vec3 exp_vec(const Vec3& s) {
  return Vec3(std::exp(s[0]), std::exp(s[1]), std::exp(s[2]));
}

// Clamps singular values in place; returns true if anything changed.
bool clamp_sigma(Svd3& s) {
  bool clamped = false;
  for (int i = 0; i < 3; ++i)
    if (s.sigma[i] < kMinSigma) {
      s.sigma[i] = kMinSigma;
      clamped = true;
    }
  return clamped;
}

// --- Neo-Hookean Kirchhoff stress: tau = mu (F F^T - I) + lambda log J I ---

Mat3 neo_hookean_tau(const Mat3& F, double mu, double lambda) {
  const double J = std::max(F.determinant(), 1e-12);
  return mu * (F * F.transpose() - Mat3::Identity()) +
         lambda * std::log(J) * Mat3::Identity();
}

void neo_hookean_tau_vjp(const Mat3& F, double mu, double lambda,
                         const Mat3& W, Mat3& F_bar, MaterialGrad& g) {
  const double J = std::max(F.determinant(), 1e-12);
  const Mat3 F_inv_T = F.inverse().transpose();
  F_bar += mu * (W + W.transpose()) * F + lambda * W.trace() * F_inv_T;
  g.d_mu_lame += (W.array() * (F * F.transpose() - Mat3::Identity()).array()).sum();
  g.d_lambda_lame += std::log(J) * W.trace();
}

// --- Equation of state: tau_p = 0.5 kappa (J - 1/J) I ---

double eos_pressure_stress(double J, double kappa) {
  return 0.5 * kappa * (J - 1.0 / J);
}

// d tau_p / dJ
double eos_pressure_stress_dJ(double J, double kappa) {
  return 0.5 * kappa * (1.0 + 1.0 / (J * J));
}

// Accumulates the EOS part of the stress VJP into F_bar and d_kappa.
void eos_vjp(const Mat3& F, double kappa, const Mat3& W, Mat3& F_bar,
             MaterialGrad& g) {
  const double J = std::max(F.determinant(), 1e-12);
  const double trW = W.trace();
  const double J_bar = eos_pressure_stress_dJ(J, kappa) * trW;
  F_bar += J_bar * J * F.inverse().transpose();
  g.d_kappa += 0.5 * (J - 1.0 / J) * trW;
}

// --- Hencky deviatoric "P-form": H = U diag(p) V^T with
//     p_i = 2 mu (eps_i - mean) / sigma_i, so that tau_dev = H F^T. ---

struct HenckyDev {
  Svd3 svd;
  Vec3 eps;
  double mean;
  Vec3 p;
  bool clamped = false;
};

HenckyDev hencky_dev(const Mat3& F, double mu) {
  HenckyDev h;
  h.svd = svd3(F);
  h.clamped = clamp_sigma(h.svd);
  h.eps = log_vec(h.svd.sigma);
  h.mean = h.eps.sum() / 3.0;
  for (int i = 0; i < 3; ++i) h.p[i] = 2.0 * mu * (h.eps[i] - h.mean) / h.svd.sigma[i];
  return h;
}

Mat3 hencky_dev_dp(const HenckyDev& h, double mu) {
  Mat3 dp;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double kron = i == j ? 1.0 : 0.0;
      dp(i, j) = 2.0 * mu * (kron - 1.0 / 3.0) / (h.svd.sigma[j] * h.svd.sigma[i]) -
                 kron * h.p[i] / h.svd.sigma[i];
    }
  return dp;
}

// --- Full Hencky "P-form" for sand: p_i = (2 mu eps_i + lambda tr) / sigma_i ---

struct HenckyFull {
  Svd3 svd;
  Vec3 eps;
  double tr;
  Vec3 p;
};

HenckyFull hencky_full(const Mat3& F, double mu, double lambda) {
  HenckyFull h;
  h.svd = svd3(F);
  clamp_sigma(h.svd);
  h.eps = log_vec(h.svd.sigma);
  h.tr = h.eps.sum();
  for (int i = 0; i < 3; ++i)
    h.p[i] = (2.0 * mu * h.eps[i] + lambda * h.tr) / h.svd.sigma[i];
  return h;
}

Mat3 hencky_full_dp(const HenckyFull& h, double mu, double lambda) {
  Mat3 dp;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double kron = i == j ? 1.0 : 0.0;
      dp(i, j) = (2.0 * mu * kron + lambda) / (h.svd.sigma[j] * h.svd.sigma[i]) -
                 kron * h.p[i] / h.svd.sigma[i];
    }
  return dp;
}

Mat3 dev_sym(const Mat3& C) {
  const Mat3 s = 0.5 * (C + C.transpose());
  return s - (s.trace() / 3.0) * Mat3::Identity();
}

// Jacobian of eps' wrt eps for the radial flow family
// eps' = mean + (n'/n) e + (coupling via n'(n)); used by von Mises (f = 0)
// and the viscoplastic relaxation (0 < f < 1).
Mat3 radial_flow_jacobian(const Vec3& e, double n, double n_over, double f) {
  // n_over = n'/n, f = dn'/dn
  Mat3 D;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double kron = i == j ? 1.0 : 0.0;
      D(i, j) = 1.0 / 3.0 + n_over * (kron - 1.0 / 3.0) +
                e[i] * e[j] * (f - n_over) / (n * n);
    }
  return D;
}

thread_local double g_branch_margin = std::numeric_limits<double>::infinity();

void note_branch_margin(double rel) {
  if (rel < g_branch_margin) g_branch_margin = rel;
}

}  // namespace

void reset_branch_margin() {
  g_branch_margin = std::numeric_limits<double>::infinity();
}

double min_branch_margin() { return g_branch_margin; }

double drucker_prager_alpha(double theta_fric_deg) {
  const double th = theta_fric_deg * kPi / 180.0;
  const double s = std::sin(th);
  return std::sqrt(2.0 / 3.0) * 2.0 * s / (3.0 - s);
}

// ---------------------------------------------------------------------------
// First Piola-Kirchhoff API
// ---------------------------------------------------------------------------

StressResult stress_elastic(const Mat3& F, double mu, double lambda) {
  const double J = F.determinant();
  if (!(J > 0)) throw NumericError("stress_elastic: det(F) <= 0");
  const Mat3 F_inv_T = F.inverse().transpose();
  StressResult r;
  r.stress = mu * (F - F_inv_T) + lambda * std::log(J) * F_inv_T;
  r.projected_F = F;
  return r;
}

StressResult stress_newtonian(double J, const Mat3& C_strain_rate,
                              double mu_visc, double kappa) {
  if (!(J > 0)) throw NumericError("stress_newtonian: volume ratio collapsed (J <= 0)");
  StressResult r;
  r.stress = eos_pressure_stress(J, kappa) * Mat3::Identity() +
             2.0 * mu_visc * dev_sym(C_strain_rate);
  r.projected_F = std::cbrt(J) * Mat3::Identity();
  return r;
}

StressResult return_map_herschel_bulkley(const Mat3& trial_F, double mu_visc,
                                         double kappa, double tau_y, double eta,
                                         double dt) {
  MaterialParams m;
  m.model = MaterialModel::NonNewtonian;
  m.mu_visc = mu_visc;
  m.kappa = kappa;
  m.tau_y = tau_y;
  m.eta = eta;
  StressResult r;
  r.projected_F = advance_F(m, Lame{}, trial_F, dt);
  const Mat3 tau = kirchhoff_stress(m, Lame{}, r.projected_F, Mat3::Zero());
  r.stress = tau * r.projected_F.inverse().transpose();
  return r;
}

StressResult return_map_von_mises(const Mat3& trial_F, double mu_lame,
                                  double lambda_lame, double tau_y) {
  MaterialParams m;
  m.model = MaterialModel::Plasticine;
  m.tau_y = tau_y;
  Lame l{mu_lame, lambda_lame};
  StressResult r;
  r.projected_F = advance_F(m, l, trial_F, 0.0);
  r.stress = stress_elastic(r.projected_F, mu_lame, lambda_lame).stress;
  return r;
}

StressResult return_map_drucker_prager(const Mat3& trial_F, double mu_lame,
                                       double lambda_lame,
                                       double theta_fric_deg) {
  MaterialParams m;
  m.model = MaterialModel::Sand;
  m.theta_fric = theta_fric_deg;
  Lame l{mu_lame, lambda_lame};
  StressResult r;
  r.projected_F = advance_F(m, l, trial_F, 0.0);
  const Mat3 tau = kirchhoff_stress(m, l, r.projected_F, Mat3::Zero());
  r.stress = tau * r.projected_F.inverse().transpose();
  return r;
}

// ---------------------------------------------------------------------------
// Simulator-facing Kirchhoff stress
// ---------------------------------------------------------------------------

Mat3 kirchhoff_stress(const MaterialParams& m, const Lame& l, const Mat3& F,
                      const Mat3& C) {
  switch (m.model) {
    case MaterialModel::Elastic:
    case MaterialModel::Plasticine:
      return neo_hookean_tau(F, l.mu, l.lambda);
    case MaterialModel::Newtonian: {
      const double J = std::max(F.determinant(), 1e-12);
      return eos_pressure_stress(J, m.kappa) * Mat3::Identity() +
             2.0 * m.mu_visc * dev_sym(C);
    }
    case MaterialModel::NonNewtonian: {
      const HenckyDev h = hencky_dev(F, m.mu_visc);
      const Mat3 H = spectral_apply(h.svd, h.p);
      const double J = std::max(F.determinant(), 1e-12);
      return H * F.transpose() + eos_pressure_stress(J, m.kappa) * Mat3::Identity();
    }
    case MaterialModel::Sand: {
      const HenckyFull h = hencky_full(F, l.mu, l.lambda);
      const Mat3 H = spectral_apply(h.svd, h.p);
      return H * F.transpose();
    }
  }
  return Mat3::Zero();
}

void kirchhoff_stress_vjp(const MaterialParams& m, const Lame& l, const Mat3& F,
                          const Mat3& C, const Mat3& W, Mat3& F_bar,
                          Mat3& C_bar, MaterialGrad& g) {
  switch (m.model) {
    case MaterialModel::Elastic:
    case MaterialModel::Plasticine:
      neo_hookean_tau_vjp(F, l.mu, l.lambda, W, F_bar, g);
      return;
    case MaterialModel::Newtonian: {
      eos_vjp(F, m.kappa, W, F_bar, g);
      C_bar += 2.0 * m.mu_visc * dev_sym(W);
      g.d_mu_visc += 2.0 * (W.array() * dev_sym(C).array()).sum();
      return;
    }
    case MaterialModel::NonNewtonian: {
      const HenckyDev h = hencky_dev(F, m.mu_visc);
      const Mat3 H = spectral_apply(h.svd, h.p);
      // tau = H F^T + eos: product rule, then spectral VJP for H.
      F_bar += W.transpose() * H;
      const Mat3 H_bar = W * F;
      F_bar += spectral_vjp(h.svd, h.p, hencky_dev_dp(h, m.mu_visc), H_bar);
      const Vec3 diag = spectral_param_diag(h.svd, H_bar);
      for (int i = 0; i < 3; ++i)
        g.d_mu_visc += diag[i] * 2.0 * (h.eps[i] - h.mean) / h.svd.sigma[i];
      eos_vjp(F, m.kappa, W, F_bar, g);
      return;
    }
    case MaterialModel::Sand: {
      const HenckyFull h = hencky_full(F, l.mu, l.lambda);
      const Mat3 H = spectral_apply(h.svd, h.p);
      F_bar += W.transpose() * H;
      const Mat3 H_bar = W * F;
      F_bar += spectral_vjp(h.svd, h.p, hencky_full_dp(h, l.mu, l.lambda), H_bar);
      // Sand's elastic moduli are fixed (only theta_fric is estimated).
      return;
    }
  }
}

// ---------------------------------------------------------------------------
// End-of-substep F processing
// ---------------------------------------------------------------------------

Mat3 advance_F(const MaterialParams& m, const Lame& l, const Mat3& trial_F,
               double dt) {
  switch (m.model) {
    case MaterialModel::Elastic: {
      // Clamp only when a singular value could be under the floor:
      // sigma_min >= det / ||F||_F^2 is a cheap sufficient bound.
      const double det = trial_F.determinant();
      if (det > kMinSigma * trial_F.squaredNorm()) return trial_F;
      Svd3 s = svd3_clamped(trial_F, kMinSigma);
      return spectral_apply(s, s.sigma);
    }
    case MaterialModel::Newtonian: {
      const double J = std::max(trial_F.determinant(), 1e-9);
      return std::cbrt(J) * Mat3::Identity();
    }
    case MaterialModel::NonNewtonian: {
      const HenckyDev h = hencky_dev(trial_F, m.mu_visc);
      const Vec3 e = h.eps - Vec3::Constant(h.mean);
      const double n = e.norm();
      const double rho = std::sqrt(2.0 / 3.0) * m.tau_y / (2.0 * m.mu_visc);
      note_branch_margin(std::abs(n - rho) / std::max({n, rho, 1e-12}));
      if (n <= rho) return h.clamped ? spectral_apply(h.svd, h.svd.sigma) : trial_F;
      const double f = 1.0 / (1.0 + 2.0 * m.mu_visc * dt / m.eta);
      const double n_new = rho + (n - rho) * f;
      const Vec3 eps_new = Vec3::Constant(h.mean) + (n_new / n) * e;
      return spectral_apply(h.svd, exp_vec(eps_new));
    }
    case MaterialModel::Plasticine: {
      Svd3 s = svd3(trial_F);
      const bool clamped = clamp_sigma(s);
      const Vec3 eps = log_vec(s.sigma);
      const double mean = eps.sum() / 3.0;
      const Vec3 e = eps - Vec3::Constant(mean);
      const double n = e.norm();
      const double rho = m.tau_y / (2.0 * l.mu);
      note_branch_margin(std::abs(n - rho) / std::max({n, rho, 1e-12}));
      if (n <= rho) return clamped ? spectral_apply(s, s.sigma) : trial_F;
      const Vec3 eps_new = Vec3::Constant(mean) + (rho / n) * e;
      return spectral_apply(s, exp_vec(eps_new));
    }
    case MaterialModel::Sand: {
      Svd3 s = svd3(trial_F);
      const bool clamped = clamp_sigma(s);
      const Vec3 eps = log_vec(s.sigma);
      const double tr = eps.sum();
      note_branch_margin(std::abs(tr) / std::max(eps.norm(), 1e-12));
      if (tr > 0) return s.U * s.V.transpose();  // apex: no tension
      const Vec3 e = eps - Vec3::Constant(tr / 3.0);
      const double n = e.norm();
      const double alpha_hat =
          drucker_prager_alpha(m.theta_fric) * (3.0 * l.lambda + 2.0 * l.mu) / (2.0 * l.mu);
      const double dgamma = n + alpha_hat * tr;
      note_branch_margin(std::abs(dgamma) / std::max(n, 1e-12));
      if (dgamma <= 0) return clamped ? spectral_apply(s, s.sigma) : trial_F;  // inside the cone
      const Vec3 eps_new = eps - (dgamma / n) * e;
      return spectral_apply(s, exp_vec(eps_new));
    }
  }
  return trial_F;
}

void advance_F_vjp(const MaterialParams& m, const Lame& l, const Mat3& trial_F,
                   double dt, const Mat3& W, Mat3& Ftrial_bar,
                   MaterialGrad& g) {
  switch (m.model) {
    case MaterialModel::Elastic: {
      const double det = trial_F.determinant();
      if (det > kMinSigma * trial_F.squaredNorm()) {
        Ftrial_bar += W;
        return;
      }
      Svd3 s = svd3(trial_F);
      Mat3 dh = Mat3::Zero();
      Vec3 h = s.sigma;
      for (int i = 0; i < 3; ++i) {
        if (h[i] < kMinSigma) h[i] = kMinSigma;  // clamped: zero derivative
        else dh(i, i) = 1.0;
      }
      Ftrial_bar += spectral_vjp(s, h, dh, W);
      return;
    }
    case MaterialModel::Newtonian: {
      const double det = trial_F.determinant();
      if (det <= 1e-9) return;  // clamped branch
      const double J_bar = (1.0 / 3.0) * std::pow(det, -2.0 / 3.0) * W.trace();
      Ftrial_bar += J_bar * det * trial_F.inverse().transpose();
      return;
    }
    case MaterialModel::NonNewtonian: {
      const HenckyDev hd = hencky_dev(trial_F, m.mu_visc);
      const Svd3& s = hd.svd;
      const Vec3 e = hd.eps - Vec3::Constant(hd.mean);
      const double n = e.norm();
      const double rho = std::sqrt(2.0 / 3.0) * m.tau_y / (2.0 * m.mu_visc);
      if (n <= rho) {
        Ftrial_bar += W;  // elastic branch, pass-through
        return;
      }
      const double f = 1.0 / (1.0 + 2.0 * m.mu_visc * dt / m.eta);
      const double n_new = rho + (n - rho) * f;
      const Vec3 eps_new = Vec3::Constant(hd.mean) + (n_new / n) * e;
      const Vec3 h = exp_vec(eps_new);
      const Mat3 D = radial_flow_jacobian(e, n, n_new / n, f);
      Mat3 dh;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) dh(i, j) = h[i] * D(i, j) / s.sigma[j];
      Ftrial_bar += spectral_vjp(s, h, dh, W);
      // Parameter chain through rho and f.
      const Vec3 diag = spectral_param_diag(s, W);
      double s_rho = 0;
      for (int i = 0; i < 3; ++i) s_rho += diag[i] * h[i] * e[i] / n;
      const double rho_bar = s_rho * (1.0 - f);
      const double f_bar = s_rho * (n - rho);
      g.d_tau_y += rho_bar * std::sqrt(2.0 / 3.0) / (2.0 * m.mu_visc);
      g.d_mu_visc += rho_bar * (-rho / m.mu_visc) +
                     f_bar * (-f * f * 2.0 * dt / m.eta);
      g.d_eta += f_bar * (f * f * 2.0 * m.mu_visc * dt / (m.eta * m.eta));
      return;
    }
    case MaterialModel::Plasticine: {
      Svd3 s = svd3(trial_F);
      clamp_sigma(s);
      const Vec3 eps = log_vec(s.sigma);
      const double mean = eps.sum() / 3.0;
      const Vec3 e = eps - Vec3::Constant(mean);
      const double n = e.norm();
      const double rho = m.tau_y / (2.0 * l.mu);
      if (n <= rho) {
        Ftrial_bar += W;
        return;
      }
      const Vec3 eps_new = Vec3::Constant(mean) + (rho / n) * e;
      const Vec3 h = exp_vec(eps_new);
      const Mat3 D = radial_flow_jacobian(e, n, rho / n, 0.0);
      Mat3 dh;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) dh(i, j) = h[i] * D(i, j) / s.sigma[j];
      Ftrial_bar += spectral_vjp(s, h, dh, W);
      const Vec3 diag = spectral_param_diag(s, W);
      double s_rho = 0;
      for (int i = 0; i < 3; ++i) s_rho += diag[i] * h[i] * e[i] / n;
      g.d_tau_y += s_rho / (2.0 * l.mu);
      g.d_mu_lame += s_rho * (-rho / l.mu);
      return;
    }
    case MaterialModel::Sand: {
      Svd3 s = svd3(trial_F);
      clamp_sigma(s);
      const Vec3 eps = log_vec(s.sigma);
      const double tr = eps.sum();
      if (tr > 0) {
        // Apex: F' = U V^T, h = 1, dh = 0.
        Ftrial_bar += spectral_vjp(s, Vec3::Ones(), Mat3::Zero(), W);
        return;
      }
      const Vec3 e = eps - Vec3::Constant(tr / 3.0);
      const double n = e.norm();
      const double alpha_hat =
          drucker_prager_alpha(m.theta_fric) * (3.0 * l.lambda + 2.0 * l.mu) / (2.0 * l.mu);
      const double dgamma = n + alpha_hat * tr;
      if (dgamma <= 0) {
        Ftrial_bar += W;
        return;
      }
      const Vec3 eps_new = eps - (dgamma / n) * e;
      const Vec3 h = exp_vec(eps_new);
      Mat3 D;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
          const double kron = i == j ? 1.0 : 0.0;
          const double ddg_dj = e[j] / n + alpha_hat;
          const double dhat_dj = (kron - 1.0 / 3.0) / n - e[i] * e[j] / (n * n * n);
          D(i, j) = kron - ddg_dj * e[i] / n - dgamma * dhat_dj;
        }
      Mat3 dh;
      for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) dh(i, j) = h[i] * D(i, j) / s.sigma[j];
      Ftrial_bar += spectral_vjp(s, h, dh, W);
      // theta_fric chain: d eps'_i / d alpha_hat = -tr * e_i / n.
      const Vec3 diag = spectral_param_diag(s, W);
      double a_bar = 0;
      for (int i = 0; i < 3; ++i) a_bar += diag[i] * h[i] * (-tr * e[i] / n);
      const double th = m.theta_fric * kPi / 180.0;
      const double dalpha_dth =
          std::sqrt(2.0 / 3.0) * 6.0 * std::cos(th) / std::pow(3.0 - std::sin(th), 2);
      g.d_theta_fric += a_bar * (3.0 * l.lambda + 2.0 * l.mu) / (2.0 * l.mu) *
                        dalpha_dth * kPi / 180.0;
      return;
    }
  }
}

}  // namespace phyrec
