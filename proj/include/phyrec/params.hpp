#pragma once

#include "phyrec/types.hpp"

namespace phyrec {

struct Lame {
  double mu = 0;
  double lambda = 0;
};

/// mu = E / (2(1+nu)), lambda = E nu / ((1+nu)(1-2nu)).
/// Throws ContractError for nu >= 0.5 (incompressible) or E <= 0.
Lame lame_from_E_nu(double E, double nu);

/// Lame moduli the simulator hands to the constitutive routines. Only the
/// solid models read them; the fluids carry their own (mu_visc, kappa).
Lame lame_from_material(const MaterialParams& p);

/// Gradient accumulator in the natural material space. The simulator adjoint
/// writes into whichever slots the active constitutive model touches; the
/// Lame slots are folded into (E, nu) before packing.
struct MaterialGrad {
  double d_mu_lame = 0, d_lambda_lame = 0;
  double d_E = 0, d_nu = 0;
  double d_mu_visc = 0, d_kappa = 0;
  double d_tau_y = 0, d_eta = 0;
  double d_theta_fric = 0;  // per degree

  MaterialGrad& operator+=(const MaterialGrad& o);

  /// Chains (d_mu_lame, d_lambda_lame) into (d_E, d_nu) at the given
  /// parameter point and zeroes the Lame slots.
  void fold_lame(const MaterialParams& p);
};

// ---------------------------------------------------------------------------
// Unconstrained parameterization. Stiffness-like quantities (E, mu, kappa,
// tau_y, eta) are optimized in log10 space; nu and theta_fric through scaled
// sigmoids onto (0, 0.45) and (0, 45). Active coordinates per model:
//   Elastic       [log10 E, raw nu]
//   Newtonian     [log10 mu, log10 kappa]
//   NonNewtonian  [log10 mu, log10 kappa, log10 tau_y, log10 eta]
//   Plasticine    [log10 E, raw nu, log10 tau_y]
//   Sand          [raw theta_fric]
// ---------------------------------------------------------------------------

int raw_dim(MaterialModel m);

/// Names of the raw coordinates, for traces and reports.
std::vector<std::string> raw_names(MaterialModel m);

VecX params_to_raw(const MaterialParams& p);
MaterialParams params_from_raw(MaterialModel model, const VecX& raw);

/// Decodes raw coordinates onto a copy of `base`, touching only the active
/// fields of base.model (Sand keeps its fixed elastic moduli, etc.).
MaterialParams apply_raw(const MaterialParams& base, const VecX& raw);

/// Chains a natural-space gradient (with Lame slots already folded or not;
/// folding is applied here) into the raw coordinate space at point `p`.
VecX raw_gradient(const MaterialParams& p, MaterialGrad g);

}  // namespace phyrec
