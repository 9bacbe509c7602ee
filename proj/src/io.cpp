#include "phyrec/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace phyrec {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_ply(const std::string& path, const ParticleSet& ps) {
  std::ofstream out(path);
  if (!out) throw ConfigError("write_ply: cannot open " + path);
  out << "ply\nformat ascii 1.0\n";
  out << "element vertex " << ps.size() << "\n";
  out << "property double x\nproperty double y\nproperty double z\n";
  out << "property double radius\nproperty double opacity\n";
  out << "end_header\n";
  for (std::size_t i = 0; i < ps.size(); ++i) {
    out << format_double(ps.positions[i].x()) << ' '
        << format_double(ps.positions[i].y()) << ' '
        << format_double(ps.positions[i].z()) << ' '
        << format_double(ps.radii[i]) << ' ' << format_double(ps.opacities[i])
        << '\n';
  }
}

PlyPoints read_ply(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("read_ply: cannot open " + path);
  std::string line;
  std::size_t n = 0;
  bool header_done = false;
  while (std::getline(in, line)) {
    if (line.rfind("element vertex", 0) == 0)
      n = std::stoul(line.substr(std::string("element vertex ").size()));
    if (line == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) throw ConfigError("read_ply: malformed header in " + path);
  PlyPoints pts;
  pts.positions.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x, y, z, r, o;
    in >> x >> y >> z >> r >> o;
    if (!in) throw ConfigError("read_ply: truncated vertex data in " + path);
    pts.positions.emplace_back(x, y, z);
    pts.radii.push_back(r);
    pts.opacities.push_back(o);
  }
  return pts;
}

void write_pgm(const std::string& path, const AlphaImage& img) {
  std::ofstream out(path);
  if (!out) throw ConfigError("write_pgm: cannot open " + path);
  out << "P2\n" << img.width << ' ' << img.height << "\n255\n";
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const int v = int(std::lround(std::clamp(img.at(x, y), 0.0, 1.0) * 255.0));
      out << v << (x + 1 == img.width ? '\n' : ' ');
    }
  }
}

void write_manifest(const std::string& path, const std::vector<double>& ts) {
  std::ofstream out(path);
  if (!out) throw ConfigError("write_manifest: cannot open " + path);
  for (double t : ts) out << format_double(t) << '\n';
}

std::vector<double> read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("read_manifest: cannot open " + path);
  std::vector<double> ts;
  double t;
  while (in >> t) ts.push_back(t);
  return ts;
}

}  // namespace phyrec
