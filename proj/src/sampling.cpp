#include "phyrec/sampling.hpp"

#include <cmath>
#include <random>

namespace phyrec {

const char* to_string(Shape s) {
  switch (s) {
    case Shape::Cube: return "cube";
    case Shape::Sphere: return "sphere";
    case Shape::Torus: return "torus";
  }
  return "?";
}

Shape shape_from_string(const std::string& s) {
  if (s == "cube") return Shape::Cube;
  if (s == "sphere") return Shape::Sphere;
  if (s == "torus") return Shape::Torus;
  throw ConfigError("unknown shape: " + s);
}

double shape_sdf(Shape shape, const Vec3& p, double scale) {
  switch (shape) {
    case Shape::Cube: {
      // side length = scale
      const Vec3 q = p.cwiseAbs() - Vec3::Constant(0.5 * scale);
      const Vec3 outside = q.cwiseMax(0.0);
      return outside.norm() + std::min(q.maxCoeff(), 0.0);
    }
    case Shape::Sphere:
      return p.norm() - scale;
    case Shape::Torus: {
      const double major = 0.75 * scale, minor = 0.25 * scale;
      const double ring = std::hypot(p.x(), p.z()) - major;
      return std::hypot(ring, p.y()) - minor;
    }
  }
  return 1.0;
}

ParticleSet sample_shape(Shape shape, const Vec3& center, double scale,
                         int particles_per_cell, int grid_resolution,
                         double density, std::uint64_t seed) {
  if (!(scale > 0)) throw ContractError("sample_shape: scale must be positive");
  if (particles_per_cell < 1) throw ContractError("sample_shape: particles_per_cell < 1");
  const double h = 1.0 / grid_resolution;
  const double margin = 2.0 * h;
  for (int a = 0; a < 3; ++a) {
    if (center[a] - scale < margin || center[a] + scale > 1.0 - margin)
      throw ContractError("sample_shape: shape escapes the [0,1]^3 domain margin");
  }

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(0.0, 1.0);

  ParticleSet ps;
  const int lo[3] = {int(std::floor((center.x() - scale) / h)),
                     int(std::floor((center.y() - scale) / h)),
                     int(std::floor((center.z() - scale) / h))};
  const int hi[3] = {int(std::ceil((center.x() + scale) / h)),
                     int(std::ceil((center.y() + scale) / h)),
                     int(std::ceil((center.z() + scale) / h))};
  for (int ix = lo[0]; ix <= hi[0]; ++ix)
    for (int iy = lo[1]; iy <= hi[1]; ++iy)
      for (int iz = lo[2]; iz <= hi[2]; ++iz)
        for (int k = 0; k < particles_per_cell; ++k) {
          const Vec3 p((ix + jitter(rng)) * h, (iy + jitter(rng)) * h,
                       (iz + jitter(rng)) * h);
          if (shape_sdf(shape, p - center, scale) <= 0.0) ps.positions.push_back(p);
        }

  const std::size_t n = ps.positions.size();
  if (n == 0) throw ContractError("sample_shape: no particles sampled");

  // Each accepted sample represents an equal share of one cell.
  const double vol = h * h * h / particles_per_cell;
  ps.velocities.assign(n, Vec3::Zero());
  ps.masses.assign(n, density * vol);
  ps.volumes.assign(n, vol);
  ps.deformation_gradients.assign(n, Mat3::Identity());
  ps.affine_velocities.assign(n, Mat3::Zero());
  ps.radii.assign(n, 0.5 * std::cbrt(vol));
  ps.opacities.assign(n, 1.0);
  return ps;
}

}  // namespace phyrec
