#pragma once

#include <cstdint>

#include "phyrec/types.hpp"

namespace phyrec {

enum class Shape : std::uint8_t { Cube, Sphere, Torus };

const char* to_string(Shape s);
Shape shape_from_string(const std::string& s);

/// Signed distance to the shape surface (negative inside), shape centered at
/// the origin. The cube has side length `scale`, the sphere radius `scale`,
/// the torus major radius 0.75*scale and minor radius 0.25*scale (xz-plane).
double shape_sdf(Shape shape, const Vec3& p, double scale);

/// Stratified jittered sampling of `particles_per_cell` candidates per grid
/// cell, keeping those inside the shape. Deterministic for a fixed seed.
/// Deformation gradients are identity, affine velocities zero; mass is
/// density * occupied volume / N; the render radius is half the mean
/// inter-sample spacing.
///
/// Throws ContractError if the shape does not fit strictly inside [0,1]^3
/// with a 2-cell margin.
ParticleSet sample_shape(Shape shape, const Vec3& center, double scale,
                         int particles_per_cell, int grid_resolution,
                         double density = 1000.0, std::uint64_t seed = 0);

}  // namespace phyrec
