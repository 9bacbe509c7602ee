#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "phyrec/materials.hpp"

using namespace phyrec;

namespace {

double inner(const Mat3& a, const Mat3& b) {
  return (a.array() * b.array()).sum();
}

Mat3 random_def_grad(std::mt19937_64& rng, double spread) {
  std::uniform_real_distribution<double> u(-spread, spread);
  for (;;) {
    Mat3 F;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) F(i, j) = (i == j ? 1.0 : 0.0) + u(rng);
    if (F.determinant() > 0.3) return F;
  }
}

Mat3 random_mat(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Mat3 W;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) W(i, j) = u(rng);
  return W;
}

// Hencky strain deviator norm of F.
double hencky_dev_norm(const Mat3& F) {
  Eigen::JacobiSVD<Mat3> svd(F);
  Vec3 eps = svd.singularValues().array().log();
  return (eps - Vec3::Constant(eps.sum() / 3.0)).norm();
}

void check_close(double a, double b, double eps, double floor = 1e-7) {
  CHECK(a == doctest::Approx(b).epsilon(eps).scale(std::abs(b) + floor));
}

}  // namespace

// ---------------------------------------------------------------------------
// Constitutive examples
// ---------------------------------------------------------------------------

TEST_CASE("neo-hookean stress") {
  CHECK(stress_elastic(Mat3::Identity(), 38461.5, 57692.3)
            .stress.cwiseAbs()
            .maxCoeff() == 0.0);

  // uniaxial strain: P11 ~ (2 mu + lambda) eps to first order
  const double mu = 38461.5, lam = 57692.3, eps = 1e-4;
  Mat3 F = Mat3::Identity();
  F(0, 0) = 1.0 + eps;
  const double p11 = stress_elastic(F, mu, lam).stress(0, 0);
  check_close(p11, (2.0 * mu + lam) * eps, 1e-3);

  // pure rotation: frame indifference
  Eigen::AngleAxisd aa(0.7, Vec3(1, -1, 2).normalized());
  const Mat3 R = aa.toRotationMatrix();
  CHECK(stress_elastic(R, mu, lam).stress.cwiseAbs().maxCoeff() < 1e-10 * mu);

  F(0, 0) = -1.0;
  CHECK_THROWS_AS(stress_elastic(F, mu, lam), NumericError);
}

TEST_CASE("newtonian stress") {
  CHECK(stress_newtonian(1.0, Mat3::Zero(), 10.0, 1e5)
            .stress.cwiseAbs()
            .maxCoeff() == 0.0);

  // pure shear rate
  Mat3 C = Mat3::Zero();
  C(0, 1) = 2.0;
  const Mat3 s = 0.5 * (C + C.transpose());
  const Mat3 dev = s - (s.trace() / 3.0) * Mat3::Identity();
  const double mu = 7.0;
  const Mat3 got = stress_newtonian(1.0, C, mu, 1e5).stress;
  CHECK((got - 2.0 * mu * dev).cwiseAbs().maxCoeff() < 1e-12);

  // frozen equation-of-state evaluation at J = 0.99, kappa = 1e5
  const Mat3 p = stress_newtonian(0.99, Mat3::Zero(), 10.0, 1e5).stress;
  check_close(p(0, 0), -1005.0505050505051, 1e-9);
  CHECK(p(0, 1) == 0.0);

  CHECK_THROWS_AS(stress_newtonian(-0.1, Mat3::Zero(), 10.0, 1e5), NumericError);
}

TEST_CASE("viscoplastic relaxation") {
  const double mu = 1e3, kappa = 1e5, eta = 5.0, dt = 1e-3;

  // zero deviator: below yield, no flow
  const Mat3 vol = 1.02 * Mat3::Identity();
  CHECK(return_map_herschel_bulkley(vol, mu, kappa, 50.0, eta, dt).projected_F ==
        vol);

  // tau_y = 0: the deviatoric Hencky norm contracts by exactly 1/(1+2 mu dt/eta)
  const Vec3 e(0.08, -0.03, -0.05);
  const Mat3 trial = Vec3(std::exp(e[0]), std::exp(e[1]), std::exp(e[2]))
                         .asDiagonal()
                         .toDenseMatrix();
  const double f = 1.0 / (1.0 + 2.0 * mu * dt / eta);
  const Mat3 proj0 =
      return_map_herschel_bulkley(trial, mu, kappa, 0.0, eta, dt).projected_F;
  check_close(hencky_dev_norm(proj0), e.norm() * f, 1e-9);

  // and its pressure channel matches the newtonian equation of state
  const double J = trial.determinant();
  StressResult r = return_map_herschel_bulkley(vol, mu, kappa, 0.0, eta, dt);
  const Mat3 tau = r.stress * r.projected_F.transpose();
  const Mat3 eos = stress_newtonian(vol.determinant(), Mat3::Zero(), mu, kappa).stress;
  CHECK((tau - eos).cwiseAbs().maxCoeff() < 1e-9 * kappa);
  (void)J;

  // just above yield: post norm between the yield radius and the trial norm
  const double tau_y = 100.0;
  const double rho = std::sqrt(2.0 / 3.0) * tau_y / (2.0 * mu);
  const Vec3 e2 = (1.3 * rho / e.norm()) * e;
  const Mat3 trial2 = Vec3(std::exp(e2[0]), std::exp(e2[1]), std::exp(e2[2]))
                          .asDiagonal()
                          .toDenseMatrix();
  const double post = hencky_dev_norm(
      return_map_herschel_bulkley(trial2, mu, kappa, tau_y, eta, dt).projected_F);
  CHECK(post >= rho - 1e-12);
  CHECK(post <= e2.norm() + 1e-12);
  // scalar radial-return oracle: rho + (n - rho) f
  check_close(post, rho + (e2.norm() - rho) * f, 1e-9);
}

TEST_CASE("von mises projection") {
  const double mu = 3.8e4, lam = 5.7e4;

  StressResult r = return_map_von_mises(Mat3::Identity(), mu, lam, 1e3);
  CHECK(r.projected_F == Mat3::Identity());
  CHECK(r.stress.cwiseAbs().maxCoeff() == 0.0);

  // below yield: exact pass-through
  Mat3 small = Mat3::Identity();
  small(0, 1) = 1e-4;
  CHECK(return_map_von_mises(small, mu, lam, 1e3).projected_F == small);

  // large shear: projected deviator sits on the yield radius
  Mat3 big = Mat3::Identity();
  big(0, 1) = 0.5;
  const double tau_y = 500.0;
  const Mat3 proj = return_map_von_mises(big, mu, lam, tau_y).projected_F;
  check_close(hencky_dev_norm(proj), tau_y / (2.0 * mu), 1e-8);

  // idempotent
  const Mat3 twice = return_map_von_mises(proj, mu, lam, tau_y).projected_F;
  CHECK((twice - proj).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("drucker-prager projection") {
  const double mu = 3.8e4, lam = 5.7e4, theta = 30.0;

  CHECK(return_map_drucker_prager(Mat3::Identity(), mu, lam, theta).projected_F ==
        Mat3::Identity());

  // pure expansion collapses to the apex
  const Mat3 expand = Vec3(1.1, 1.2, 1.05).asDiagonal().toDenseMatrix();
  const Mat3 apex = return_map_drucker_prager(expand, mu, lam, theta).projected_F;
  CHECK((apex - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-10);

  // compressive shear: projected state satisfies the cone inequality
  const Vec3 eps(-0.20, 0.06, -0.08);
  const Mat3 trial = Vec3(std::exp(eps[0]), std::exp(eps[1]), std::exp(eps[2]))
                         .asDiagonal()
                         .toDenseMatrix();
  const Mat3 proj = return_map_drucker_prager(trial, mu, lam, theta).projected_F;
  Eigen::JacobiSVD<Mat3> svd(proj);
  Vec3 he = svd.singularValues().array().log();
  const double tr = he.sum();
  const double n = (he - Vec3::Constant(tr / 3.0)).norm();
  const double alpha_hat =
      drucker_prager_alpha(theta) * (3.0 * lam + 2.0 * mu) / (2.0 * mu);
  CHECK(n + alpha_hat * tr <= 1e-8);

  // idempotent
  const Mat3 twice = return_map_drucker_prager(proj, mu, lam, theta).projected_F;
  CHECK((twice - proj).cwiseAbs().maxCoeff() < 1e-10);

  // alpha formula spot value
  const double s = std::sin(30.0 * M_PI / 180.0);
  check_close(drucker_prager_alpha(30.0),
              std::sqrt(2.0 / 3.0) * 2.0 * s / (3.0 - s), 1e-12);
}

// ---------------------------------------------------------------------------
// VJPs vs finite differences
// ---------------------------------------------------------------------------

namespace {

struct Setup {
  MaterialParams m;
  Lame l;
};

Setup make_setup(MaterialModel model) {
  Setup s;
  s.m.model = model;
  s.m.E = 1e5;
  s.m.nu = 0.3;
  s.m.mu_visc = 1e3;
  s.m.kappa = 1e5;
  s.m.tau_y = 80.0;  // low yield so shear states flow
  s.m.eta = 5.0;
  s.m.theta_fric = 30.0;
  s.l = lame_from_E_nu(s.m.E, s.m.nu);
  return s;
}

// FD of sum(W .* kirchhoff_stress) wrt F against the VJP output.
void fd_check_stress_F(const Setup& s, const Mat3& F, const Mat3& C,
                       std::mt19937_64& rng) {
  const Mat3 W = random_mat(rng);
  Mat3 F_bar = Mat3::Zero(), C_bar = Mat3::Zero();
  MaterialGrad g;
  kirchhoff_stress_vjp(s.m, s.l, F, C, W, F_bar, C_bar, g);
  const double h = 1e-6;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Mat3 Fp = F, Fm = F;
      Fp(i, j) += h;
      Fm(i, j) -= h;
      const double fd = (inner(W, kirchhoff_stress(s.m, s.l, Fp, C)) -
                         inner(W, kirchhoff_stress(s.m, s.l, Fm, C))) /
                        (2.0 * h);
      check_close(F_bar(i, j), fd, 2e-4, 1e-4 * W.norm() * s.m.kappa * 1e-5);
    }
}

double stress_param_objective(const Setup& s, const Mat3& F, const Mat3& C,
                              const Mat3& W) {
  return inner(W, kirchhoff_stress(s.m, s.l, F, C));
}

}  // namespace

TEST_CASE("kirchhoff stress vjp matches finite differences") {
  std::mt19937_64 rng(23);

  for (MaterialModel model :
       {MaterialModel::Elastic, MaterialModel::Newtonian,
        MaterialModel::NonNewtonian, MaterialModel::Plasticine,
        MaterialModel::Sand}) {
    CAPTURE(int(model));
    Setup s = make_setup(model);
    for (int trial = 0; trial < 5; ++trial) {
      Mat3 F = random_def_grad(rng, 0.25);
      if (model == MaterialModel::Newtonian)
        F = std::cbrt(F.determinant()) * Mat3::Identity();
      const Mat3 C = random_mat(rng);
      fd_check_stress_F(s, F, C, rng);
    }
  }
}

TEST_CASE("kirchhoff stress vjp parameter channels") {
  std::mt19937_64 rng(29);
  const double h_rel = 1e-5;

  // newtonian: mu_visc and kappa
  {
    Setup s = make_setup(MaterialModel::Newtonian);
    const Mat3 F = std::cbrt(1.06) * Mat3::Identity();
    const Mat3 C = random_mat(rng);
    const Mat3 W = random_mat(rng);
    Mat3 F_bar = Mat3::Zero(), C_bar = Mat3::Zero();
    MaterialGrad g;
    kirchhoff_stress_vjp(s.m, s.l, F, C, W, F_bar, C_bar, g);

    // C channel
    const double hc = 1e-6;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        Mat3 Cp = C, Cm = C;
        Cp(i, j) += hc;
        Cm(i, j) -= hc;
        const double fd = (stress_param_objective(s, F, Cp, W) -
                           stress_param_objective(s, F, Cm, W)) /
                          (2.0 * hc);
        check_close(C_bar(i, j), fd, 1e-5);
      }

    Setup sp = s, sm = s;
    sp.m.mu_visc *= 1.0 + h_rel;
    sm.m.mu_visc *= 1.0 - h_rel;
    double fd = (stress_param_objective(sp, F, C, W) -
                 stress_param_objective(sm, F, C, W)) /
                (2.0 * h_rel * s.m.mu_visc);
    check_close(g.d_mu_visc, fd, 1e-5);

    sp = s;
    sm = s;
    sp.m.kappa *= 1.0 + h_rel;
    sm.m.kappa *= 1.0 - h_rel;
    fd = (stress_param_objective(sp, F, C, W) -
          stress_param_objective(sm, F, C, W)) /
         (2.0 * h_rel * s.m.kappa);
    check_close(g.d_kappa, fd, 1e-5);
  }

  // elastic: E and nu through the lame fold
  {
    Setup s = make_setup(MaterialModel::Elastic);
    const Mat3 F = random_def_grad(rng, 0.2);
    const Mat3 W = random_mat(rng);
    Mat3 F_bar = Mat3::Zero(), C_bar = Mat3::Zero();
    MaterialGrad g;
    kirchhoff_stress_vjp(s.m, s.l, F, Mat3::Zero(), W, F_bar, C_bar, g);
    g.fold_lame(s.m);

    Setup sp = s, sm = s;
    sp.m.E *= 1.0 + h_rel;
    sp.l = lame_from_E_nu(sp.m.E, sp.m.nu);
    sm.m.E *= 1.0 - h_rel;
    sm.l = lame_from_E_nu(sm.m.E, sm.m.nu);
    double fd = (stress_param_objective(sp, F, Mat3::Zero(), W) -
                 stress_param_objective(sm, F, Mat3::Zero(), W)) /
                (2.0 * h_rel * s.m.E);
    check_close(g.d_E, fd, 1e-5);

    const double hn = 1e-6;
    sp = s;
    sm = s;
    sp.m.nu += hn;
    sp.l = lame_from_E_nu(sp.m.E, sp.m.nu);
    sm.m.nu -= hn;
    sm.l = lame_from_E_nu(sm.m.E, sm.m.nu);
    fd = (stress_param_objective(sp, F, Mat3::Zero(), W) -
          stress_param_objective(sm, F, Mat3::Zero(), W)) /
         (2.0 * hn);
    check_close(g.d_nu, fd, 1e-4);
  }

  // non-newtonian deviatoric channel: mu_visc
  {
    Setup s = make_setup(MaterialModel::NonNewtonian);
    const Mat3 F = random_def_grad(rng, 0.15);
    const Mat3 W = random_mat(rng);
    Mat3 F_bar = Mat3::Zero(), C_bar = Mat3::Zero();
    MaterialGrad g;
    kirchhoff_stress_vjp(s.m, s.l, F, Mat3::Zero(), W, F_bar, C_bar, g);

    Setup sp = s, sm = s;
    sp.m.mu_visc *= 1.0 + h_rel;
    sm.m.mu_visc *= 1.0 - h_rel;
    const double fd = (stress_param_objective(sp, F, Mat3::Zero(), W) -
                       stress_param_objective(sm, F, Mat3::Zero(), W)) /
                      (2.0 * h_rel * s.m.mu_visc);
    check_close(g.d_mu_visc, fd, 1e-4);
  }
}

namespace {

double advance_objective(const Setup& s, const Mat3& F, double dt,
                         const Mat3& W) {
  return inner(W, advance_F(s.m, s.l, F, dt));
}

void fd_check_advance_F(const Setup& s, const Mat3& F, double dt,
                        std::mt19937_64& rng, double tol = 2e-4) {
  const Mat3 W = random_mat(rng);
  Mat3 F_bar = Mat3::Zero();
  MaterialGrad g;
  advance_F_vjp(s.m, s.l, F, dt, W, F_bar, g);
  const double h = 1e-6;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      Mat3 Fp = F, Fm = F;
      Fp(i, j) += h;
      Fm(i, j) -= h;
      const double fd =
          (advance_objective(s, Fp, dt, W) - advance_objective(s, Fm, dt, W)) /
          (2.0 * h);
      check_close(F_bar(i, j), fd, tol, 1e-6);
    }
}

// FD of a natural material parameter against the accumulated gradient slot.
void fd_check_advance_param(const Setup& s, const Mat3& F, double dt,
                            double MaterialParams::* field,
                            double MaterialGrad::* slot, std::mt19937_64& rng,
                            bool refresh_lame = false, double tol = 1e-4) {
  const Mat3 W = random_mat(rng);
  Mat3 F_bar = Mat3::Zero();
  MaterialGrad g;
  advance_F_vjp(s.m, s.l, F, dt, W, F_bar, g);
  if (refresh_lame) g.fold_lame(s.m);
  const double h = 1e-6 * std::max(1.0, std::abs(s.m.*field));
  Setup sp = s, sm = s;
  sp.m.*field += h;
  sm.m.*field -= h;
  if (refresh_lame) {
    sp.l = lame_from_E_nu(sp.m.E, sp.m.nu);
    sm.l = lame_from_E_nu(sm.m.E, sm.m.nu);
  }
  const double fd =
      (advance_objective(sp, F, dt, W) - advance_objective(sm, F, dt, W)) /
      (2.0 * h);
  check_close(g.*slot, fd, tol);
}

}  // namespace

TEST_CASE("deformation-gradient advance vjp matches finite differences") {
  std::mt19937_64 rng(31);
  const double dt = 1e-3;

  // elastic: regular region is a pass-through
  {
    Setup s = make_setup(MaterialModel::Elastic);
    const Mat3 F = random_def_grad(rng, 0.3);
    fd_check_advance_F(s, F, dt, rng);
  }

  // newtonian volume tracking
  {
    Setup s = make_setup(MaterialModel::Newtonian);
    const Mat3 F = random_def_grad(rng, 0.2);
    fd_check_advance_F(s, F, dt, rng);
  }

  // non-newtonian, flowing branch (dev norm well above yield)
  {
    Setup s = make_setup(MaterialModel::NonNewtonian);
    Mat3 F = Mat3::Identity();
    F(0, 1) = 0.2;
    F(1, 2) = -0.1;
    fd_check_advance_F(s, F, dt, rng);
    fd_check_advance_param(s, F, dt, &MaterialParams::tau_y,
                           &MaterialGrad::d_tau_y, rng);
    fd_check_advance_param(s, F, dt, &MaterialParams::eta, &MaterialGrad::d_eta,
                           rng);
    fd_check_advance_param(s, F, dt, &MaterialParams::mu_visc,
                           &MaterialGrad::d_mu_visc, rng, false, 5e-4);
  }

  // plasticine, yielding branch
  {
    Setup s = make_setup(MaterialModel::Plasticine);
    s.m.tau_y = 500.0;
    Mat3 F = Mat3::Identity();
    F(0, 1) = 0.3;
    fd_check_advance_F(s, F, dt, rng);
    fd_check_advance_param(s, F, dt, &MaterialParams::tau_y,
                           &MaterialGrad::d_tau_y, rng);
    fd_check_advance_param(s, F, dt, &MaterialParams::E, &MaterialGrad::d_E,
                           rng, true);
    fd_check_advance_param(s, F, dt, &MaterialParams::nu, &MaterialGrad::d_nu,
                           rng, true, 1e-3);
  }

  // sand, cone branch
  {
    Setup s = make_setup(MaterialModel::Sand);
    const Mat3 F = Vec3(std::exp(-0.15), std::exp(0.05), std::exp(-0.06))
                       .asDiagonal()
                       .toDenseMatrix() *
                   Eigen::AngleAxisd(0.3, Vec3(0, 0, 1)).toRotationMatrix();
    fd_check_advance_F(s, F, dt, rng);
    fd_check_advance_param(s, F, dt, &MaterialParams::theta_fric,
                           &MaterialGrad::d_theta_fric, rng, false, 1e-3);
  }

  // sand, apex branch
  {
    Setup s = make_setup(MaterialModel::Sand);
    const Mat3 F = Vec3(1.08, 1.13, 1.02).asDiagonal().toDenseMatrix() *
                   Eigen::AngleAxisd(-0.4, Vec3(1, 1, 0).normalized())
                       .toRotationMatrix();
    fd_check_advance_F(s, F, dt, rng, 1e-3);
  }
}
