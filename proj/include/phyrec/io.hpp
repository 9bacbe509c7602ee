#pragma once

#include <string>
#include <vector>

#include "phyrec/types.hpp"

namespace phyrec {

/// ASCII PLY with per-vertex x y z radius opacity.
void write_ply(const std::string& path, const ParticleSet& ps);

struct PlyPoints {
  std::vector<Vec3> positions;
  std::vector<double> radii;
  std::vector<double> opacities;
};

PlyPoints read_ply(const std::string& path);

/// ASCII PGM (P2), values scaled to 0..255.
void write_pgm(const std::string& path, const AlphaImage& img);

/// One timestamp per line.
void write_manifest(const std::string& path, const std::vector<double>& timestamps);
std::vector<double> read_manifest(const std::string& path);

/// Formats a double with enough digits to round-trip exactly.
std::string format_double(double v);

}  // namespace phyrec
