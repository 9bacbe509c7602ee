#include "phyrec/types.hpp"

#include <cmath>

namespace phyrec {

void ParticleSet::resize(std::size_t n) {
  positions.assign(n, Vec3::Zero());
  velocities.assign(n, Vec3::Zero());
  masses.assign(n, 0.0);
  volumes.assign(n, 0.0);
  deformation_gradients.assign(n, Mat3::Identity());
  affine_velocities.assign(n, Mat3::Zero());
  radii.assign(n, 0.0);
  opacities.assign(n, 1.0);
}

void ParticleSet::validate() const {
  const std::size_t n = size();
  if (velocities.size() != n || masses.size() != n || volumes.size() != n ||
      deformation_gradients.size() != n || affine_velocities.size() != n ||
      radii.size() != n || opacities.size() != n) {
    throw ContractError("ParticleSet: field sizes disagree");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(masses[i] > 0)) throw ContractError("ParticleSet: mass must be positive");
    if (!(volumes[i] > 0)) throw ContractError("ParticleSet: volume must be positive");
    if (!(radii[i] > 0)) throw ContractError("ParticleSet: radius must be positive");
    if (!(opacities[i] >= 0 && opacities[i] <= 1))
      throw ContractError("ParticleSet: opacity outside [0,1]");
    if (!(deformation_gradients[i].determinant() > 0))
      throw ContractError("ParticleSet: det(F) must be positive");
  }
}

const char* to_string(MaterialModel m) {
  switch (m) {
    case MaterialModel::Elastic: return "elastic";
    case MaterialModel::Newtonian: return "newtonian";
    case MaterialModel::NonNewtonian: return "non_newtonian";
    case MaterialModel::Plasticine: return "plasticine";
    case MaterialModel::Sand: return "sand";
  }
  return "?";
}

MaterialModel material_model_from_string(const std::string& s) {
  if (s == "elastic") return MaterialModel::Elastic;
  if (s == "newtonian") return MaterialModel::Newtonian;
  if (s == "non_newtonian" || s == "non-newtonian") return MaterialModel::NonNewtonian;
  if (s == "plasticine") return MaterialModel::Plasticine;
  if (s == "sand") return MaterialModel::Sand;
  throw ConfigError("unknown material model: " + s);
}

void MaterialParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw ContractError(std::string("MaterialParams: ") + name + " must be positive");
  };
  switch (model) {
    case MaterialModel::Elastic:
      positive(E, "E");
      if (!(nu > 0 && nu < 0.45)) throw ContractError("MaterialParams: nu outside (0, 0.45)");
      break;
    case MaterialModel::Newtonian:
      positive(mu_visc, "mu_visc");
      positive(kappa, "kappa");
      break;
    case MaterialModel::NonNewtonian:
      positive(mu_visc, "mu_visc");
      positive(kappa, "kappa");
      if (!(tau_y >= 0)) throw ContractError("MaterialParams: tau_y must be nonnegative");
      positive(eta, "eta");
      break;
    case MaterialModel::Plasticine:
      positive(E, "E");
      if (!(nu > 0 && nu < 0.45)) throw ContractError("MaterialParams: nu outside (0, 0.45)");
      if (!(tau_y >= 0)) throw ContractError("MaterialParams: tau_y must be nonnegative");
      break;
    case MaterialModel::Sand:
      if (!(theta_fric > 0 && theta_fric < 45))
        throw ContractError("MaterialParams: theta_fric outside (0, 45)");
      break;
  }
}

double MaterialParams::stiffness() const {
  switch (model) {
    case MaterialModel::Elastic:
    case MaterialModel::Plasticine:
    case MaterialModel::Sand:
      return E;
    case MaterialModel::Newtonian:
    case MaterialModel::NonNewtonian:
      return kappa;
  }
  return E;
}

void Camera::validate() const {
  const Mat3 R = pose.linear();
  if ((R.transpose() * R - Mat3::Identity()).cwiseAbs().maxCoeff() >= 1e-9)
    throw ContractError("Camera: pose rotation is not orthonormal");
  if (!(focal > 0)) throw ContractError("Camera: focal must be positive");
}

Camera make_ring_camera(const Vec3& target, double radius, double elevation,
                        double azimuth, double focal, int width, int height) {
  const Vec3 offset(radius * std::cos(elevation) * std::cos(azimuth),
                    radius * std::sin(elevation),
                    radius * std::cos(elevation) * std::sin(azimuth));
  const Vec3 eye = target + offset;

  // Camera frame: +z toward the target, +y down, +x right.
  const Vec3 z = (target - eye).normalized();
  const Vec3 world_up(0, 1, 0);
  const Vec3 x = z.cross(world_up).normalized();
  const Vec3 y = z.cross(x);

  Mat3 R_wc;  // rows are the camera axes
  R_wc.row(0) = x.transpose();
  R_wc.row(1) = y.transpose();
  R_wc.row(2) = z.transpose();

  Camera cam;
  cam.pose.linear() = R_wc;
  cam.pose.translation() = -R_wc * eye;
  cam.focal = focal;
  cam.principal_point = Vec2(0.5 * width, 0.5 * height);
  cam.width = width;
  cam.height = height;
  return cam;
}

}  // namespace phyrec
