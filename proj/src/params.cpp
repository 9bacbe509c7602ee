#include "phyrec/params.hpp"

#include <algorithm>
#include <cmath>

namespace phyrec {
namespace {

constexpr double kLn10 = 2.302585092994045684;

// Clamped away from {0, 1} so saturated raw values still map strictly
// inside the open parameter ranges.
double sigmoid(double x) {
  const double s = 1.0 / (1.0 + std::exp(-x));
  return std::clamp(s, 1e-12, 1.0 - 1e-12);
}

double logit(double y) { return std::log(y / (1.0 - y)); }

double from_log10(double r) { return std::pow(10.0, r); }

// value = scale * sigmoid(raw)
double bounded_from_raw(double raw, double scale) { return scale * sigmoid(raw); }
double bounded_to_raw(double value, double scale) { return logit(value / scale); }
double bounded_dvalue_draw(double raw, double scale) {
  const double s = sigmoid(raw);
  return scale * s * (1.0 - s);
}

}  // namespace

Lame lame_from_E_nu(double E, double nu) {
  if (!(E > 0)) throw ContractError("lame_from_E_nu: E must be positive");
  if (!(nu > 0 && nu < 0.5))
    throw ContractError("lame_from_E_nu: nu outside (0, 0.5) (incompressible limit)");
  Lame l;
  l.mu = E / (2.0 * (1.0 + nu));
  l.lambda = E * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
  return l;
}

Lame lame_from_material(const MaterialParams& p) {
  return lame_from_E_nu(p.E, p.nu);
}

MaterialGrad& MaterialGrad::operator+=(const MaterialGrad& o) {
  d_mu_lame += o.d_mu_lame;
  d_lambda_lame += o.d_lambda_lame;
  d_E += o.d_E;
  d_nu += o.d_nu;
  d_mu_visc += o.d_mu_visc;
  d_kappa += o.d_kappa;
  d_tau_y += o.d_tau_y;
  d_eta += o.d_eta;
  d_theta_fric += o.d_theta_fric;
  return *this;
}

void MaterialGrad::fold_lame(const MaterialParams& p) {
  const double E = p.E, nu = p.nu;
  const double dmu_dE = 1.0 / (2.0 * (1.0 + nu));
  const double dmu_dnu = -E / (2.0 * (1.0 + nu) * (1.0 + nu));
  const double D = (1.0 + nu) * (1.0 - 2.0 * nu);
  const double dD_dnu = -1.0 - 4.0 * nu;
  const double dlam_dE = nu / D;
  const double dlam_dnu = E * (D - nu * dD_dnu) / (D * D);
  d_E += d_mu_lame * dmu_dE + d_lambda_lame * dlam_dE;
  d_nu += d_mu_lame * dmu_dnu + d_lambda_lame * dlam_dnu;
  d_mu_lame = 0;
  d_lambda_lame = 0;
}

int raw_dim(MaterialModel m) {
  switch (m) {
    case MaterialModel::Elastic: return 2;
    case MaterialModel::Newtonian: return 2;
    case MaterialModel::NonNewtonian: return 4;
    case MaterialModel::Plasticine: return 3;
    case MaterialModel::Sand: return 1;
  }
  return 0;
}

std::vector<std::string> raw_names(MaterialModel m) {
  switch (m) {
    case MaterialModel::Elastic: return {"log10_E", "raw_nu"};
    case MaterialModel::Newtonian: return {"log10_mu", "log10_kappa"};
    case MaterialModel::NonNewtonian:
      return {"log10_mu", "log10_kappa", "log10_tau_y", "log10_eta"};
    case MaterialModel::Plasticine: return {"log10_E", "raw_nu", "log10_tau_y"};
    case MaterialModel::Sand: return {"raw_theta_fric"};
  }
  return {};
}

VecX params_to_raw(const MaterialParams& p) {
  VecX r(raw_dim(p.model));
  switch (p.model) {
    case MaterialModel::Elastic:
      r << std::log10(p.E), bounded_to_raw(p.nu, 0.45);
      break;
    case MaterialModel::Newtonian:
      r << std::log10(p.mu_visc), std::log10(p.kappa);
      break;
    case MaterialModel::NonNewtonian:
      r << std::log10(p.mu_visc), std::log10(p.kappa), std::log10(p.tau_y),
          std::log10(p.eta);
      break;
    case MaterialModel::Plasticine:
      r << std::log10(p.E), bounded_to_raw(p.nu, 0.45), std::log10(p.tau_y);
      break;
    case MaterialModel::Sand:
      r << bounded_to_raw(p.theta_fric, 45.0);
      break;
  }
  return r;
}

MaterialParams params_from_raw(MaterialModel model, const VecX& raw) {
  if (raw.size() != raw_dim(model))
    throw ContractError("params_from_raw: raw dimension mismatch");
  MaterialParams p;
  p.model = model;
  switch (model) {
    case MaterialModel::Elastic:
      p.E = from_log10(raw[0]);
      p.nu = bounded_from_raw(raw[1], 0.45);
      break;
    case MaterialModel::Newtonian:
      p.mu_visc = from_log10(raw[0]);
      p.kappa = from_log10(raw[1]);
      break;
    case MaterialModel::NonNewtonian:
      p.mu_visc = from_log10(raw[0]);
      p.kappa = from_log10(raw[1]);
      p.tau_y = from_log10(raw[2]);
      p.eta = from_log10(raw[3]);
      break;
    case MaterialModel::Plasticine:
      p.E = from_log10(raw[0]);
      p.nu = bounded_from_raw(raw[1], 0.45);
      p.tau_y = from_log10(raw[2]);
      break;
    case MaterialModel::Sand:
      p.theta_fric = bounded_from_raw(raw[0], 45.0);
      break;
  }
  return p;
}

MaterialParams apply_raw(const MaterialParams& base, const VecX& raw) {
  const MaterialParams decoded = params_from_raw(base.model, raw);
  MaterialParams p = base;
  switch (base.model) {
    case MaterialModel::Elastic:
      p.E = decoded.E;
      p.nu = decoded.nu;
      break;
    case MaterialModel::Newtonian:
      p.mu_visc = decoded.mu_visc;
      p.kappa = decoded.kappa;
      break;
    case MaterialModel::NonNewtonian:
      p.mu_visc = decoded.mu_visc;
      p.kappa = decoded.kappa;
      p.tau_y = decoded.tau_y;
      p.eta = decoded.eta;
      break;
    case MaterialModel::Plasticine:
      p.E = decoded.E;
      p.nu = decoded.nu;
      p.tau_y = decoded.tau_y;
      break;
    case MaterialModel::Sand:
      p.theta_fric = decoded.theta_fric;
      break;
  }
  return p;
}

VecX raw_gradient(const MaterialParams& p, MaterialGrad g) {
  g.fold_lame(p);
  const VecX raw = params_to_raw(p);
  VecX out(raw.size());
  auto dlog10 = [](double value, double natural_grad) {
    return natural_grad * value * kLn10;  // d value / d log10(value) = value ln10
  };
  switch (p.model) {
    case MaterialModel::Elastic:
      out << dlog10(p.E, g.d_E), g.d_nu * bounded_dvalue_draw(raw[1], 0.45);
      break;
    case MaterialModel::Newtonian:
      out << dlog10(p.mu_visc, g.d_mu_visc), dlog10(p.kappa, g.d_kappa);
      break;
    case MaterialModel::NonNewtonian:
      out << dlog10(p.mu_visc, g.d_mu_visc), dlog10(p.kappa, g.d_kappa),
          dlog10(p.tau_y, g.d_tau_y), dlog10(p.eta, g.d_eta);
      break;
    case MaterialModel::Plasticine:
      out << dlog10(p.E, g.d_E), g.d_nu * bounded_dvalue_draw(raw[1], 0.45),
          dlog10(p.tau_y, g.d_tau_y);
      break;
    case MaterialModel::Sand:
      out << g.d_theta_fric * bounded_dvalue_draw(raw[0], 45.0);
      break;
  }
  return out;
}

}  // namespace phyrec
