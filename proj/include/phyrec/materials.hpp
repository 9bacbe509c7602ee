#pragma once

#include "phyrec/params.hpp"
#include "phyrec/spectral.hpp"
#include "phyrec/types.hpp"

namespace phyrec {

/// First Piola-Kirchhoff stress plus the post-return-mapping deformation
/// gradient.
struct StressResult {
  Mat3 stress = Mat3::Zero();
  Mat3 projected_F = Mat3::Identity();
};

// ---------------------------------------------------------------------------
// Constitutive API (first Piola-Kirchhoff forms, used by tests and tools)
// ---------------------------------------------------------------------------

/// Neo-Hookean: P(F) = mu (F - F^-T) + lambda log(det F) F^-T.
StressResult stress_elastic(const Mat3& F, double mu_lame, double lambda_lame);

/// Weakly compressible viscous fluid. Pressure from the equation of state
/// 0.5 kappa (J - 1/J), viscous part 2 mu dev(sym(C)).
StressResult stress_newtonian(double J, const Mat3& C_strain_rate,
                              double mu_visc, double kappa);

/// Viscoplastic yield-stress fluid: Hencky deviatoric elasticity with shear
/// modulus mu, radial overstress relaxation by factor 1/(1 + 2 mu dt / eta)
/// above the yield radius sqrt(2/3) tau_y / (2 mu). Below yield: no flow.
StressResult return_map_herschel_bulkley(const Mat3& trial_F, double mu_visc,
                                         double kappa, double tau_y, double eta,
                                         double dt);

/// Von Mises: projects the Hencky strain deviator onto norm <= tau_y/(2 mu),
/// then evaluates the Neo-Hookean stress on the projected state.
StressResult return_map_von_mises(const Mat3& trial_F, double mu_lame,
                                  double lambda_lame, double tau_y);

/// Drucker-Prager (cohesionless): Hencky-space cone projection with
/// alpha(theta) = sqrt(2/3) * 2 sin(theta) / (3 - sin(theta)).
/// Three cases: elastic, cone surface, apex (any volume gain).
StressResult return_map_drucker_prager(const Mat3& trial_F, double mu_lame,
                                       double lambda_lame,
                                       double theta_fric_deg);

double drucker_prager_alpha(double theta_fric_deg);

// ---------------------------------------------------------------------------
// Simulator-facing forms (Kirchhoff stress tau = P F^T) with hand-written
// vector-Jacobian products. The adjoint accumulates into F_bar / C_bar and
// the natural-space material gradient.
// ---------------------------------------------------------------------------

Mat3 kirchhoff_stress(const MaterialParams& m, const Lame& l, const Mat3& F,
                      const Mat3& C);

void kirchhoff_stress_vjp(const MaterialParams& m, const Lame& l, const Mat3& F,
                          const Mat3& C, const Mat3& tau_bar, Mat3& F_bar,
                          Mat3& C_bar, MaterialGrad& grad);

/// End-of-substep deformation-gradient processing: plastic return mapping for
/// the solid models, volume-ratio tracking (F -> J^(1/3) I) for the fluids,
/// singular-value clamping for the elastic model.
Mat3 advance_F(const MaterialParams& m, const Lame& l, const Mat3& trial_F,
               double dt);

void advance_F_vjp(const MaterialParams& m, const Lame& l, const Mat3& trial_F,
                   double dt, const Mat3& Fnew_bar, Mat3& Ftrial_bar,
                   MaterialGrad& grad);

/// Plastic branch-boundary proximity tracking. advance_F records, per thread,
/// the smallest relative distance of any trial state to a yield/apex branch
/// switch; gradient checks near a kink are excluded based on it.
void reset_branch_margin();
double min_branch_margin();

}  // namespace phyrec
