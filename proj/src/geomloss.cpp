#include "phyrec/geomloss.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_map>

namespace phyrec {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Uniform hash grid over a point set for nearest-neighbor queries.
class HashGrid {
 public:
  explicit HashGrid(const std::vector<Vec3>& pts) : pts_(pts) {
    Vec3 lo = pts[0], hi = pts[0];
    for (const Vec3& p : pts) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const double diag = (hi - lo).norm();
    // degenerate extent: everything shares one cell and the scan is direct
    h_ = diag > 0.0 ? diag / std::cbrt(double(pts.size())) : 1.0;
    origin_ = lo;
    cmin_ = cell_of(lo);
    cmax_ = cell_of(hi);
    for (std::size_t i = 0; i < pts.size(); ++i)
      cells_[key(cell_of(pts[i]))].push_back(int(i));
  }

  // nearest index under (squared distance, index) lexicographic order
  int nearest(const Vec3& q, double& best_d2) const {
    const Eigen::Vector3i c = cell_of(q);
    int first_ring = 0, max_ring = 0;
    for (int axis = 0; axis < 3; ++axis) {
      first_ring = std::max({first_ring, cmin_[axis] - c[axis],
                             c[axis] - cmax_[axis]});
      max_ring = std::max({max_ring, std::abs(cmin_[axis] - c[axis]),
                           std::abs(cmax_[axis] - c[axis])});
    }
    best_d2 = kInf;
    int best = -1;
    for (int ring = first_ring; ring <= max_ring; ++ring) {
      // any point in a cell at Chebyshev ring r is at least (r - 1) h away
      if (best >= 0 && ring >= 2) {
        const double reach = double(ring - 1) * h_;
        if (reach * reach > best_d2) break;
      }
      // only cells inside the populated bounding box can hold points
      const int x0 = std::max(-ring, cmin_.x() - c.x());
      const int x1 = std::min(ring, cmax_.x() - c.x());
      const int y0 = std::max(-ring, cmin_.y() - c.y());
      const int y1 = std::min(ring, cmax_.y() - c.y());
      const int z0 = std::max(-ring, cmin_.z() - c.z());
      const int z1 = std::min(ring, cmax_.z() - c.z());
      for (int dx = x0; dx <= x1; ++dx)
        for (int dy = y0; dy <= y1; ++dy)
          for (int dz = z0; dz <= z1; ++dz) {
            if (std::max({std::abs(dx), std::abs(dy), std::abs(dz)}) != ring)
              continue;
            const auto it = cells_.find(
                key(Eigen::Vector3i(c.x() + dx, c.y() + dy, c.z() + dz)));
            if (it == cells_.end()) continue;
            for (int i : it->second) {
              const double d2 = (pts_[i] - q).squaredNorm();
              if (d2 < best_d2 || (d2 == best_d2 && i < best)) {
                best_d2 = d2;
                best = i;
              }
            }
          }
    }
    return best;
  }

 private:
  Eigen::Vector3i cell_of(const Vec3& p) const {
    return Eigen::Vector3i(int(std::floor((p.x() - origin_.x()) / h_)),
                           int(std::floor((p.y() - origin_.y()) / h_)),
                           int(std::floor((p.z() - origin_.z()) / h_)));
  }
  static std::int64_t key(const Eigen::Vector3i& c) {
    return (std::int64_t(c.x()) * 73856093) ^
           (std::int64_t(c.y()) * 19349663) ^
           (std::int64_t(c.z()) * 83492791);
  }
  const std::vector<Vec3>& pts_;
  double h_ = 1.0;
  Vec3 origin_ = Vec3::Zero();
  Eigen::Vector3i cmin_ = Eigen::Vector3i::Zero();
  Eigen::Vector3i cmax_ = Eigen::Vector3i::Zero();
  std::unordered_map<std::int64_t, std::vector<int>> cells_;
};

std::vector<int> all_nearest(const std::vector<Vec3>& from,
                             const std::vector<Vec3>& to,
                             std::vector<double>* d2_out = nullptr) {
  const HashGrid grid(to);
  std::vector<int> nn(from.size());
  if (d2_out) d2_out->resize(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    double d2;
    nn[i] = grid.nearest(from[i], d2);
    if (d2_out) (*d2_out)[i] = d2;
  }
  return nn;
}

void check_nonempty(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  if (a.empty() || b.empty()) throw ContractError("empty point set");
}

}  // namespace

double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  check_nonempty(a, b);
  std::vector<double> d2a, d2b;
  all_nearest(a, b, &d2a);
  all_nearest(b, a, &d2b);
  double sa = 0.0, sb = 0.0;
  for (double d : d2a) sa += d;
  for (double d : d2b) sb += d;
  return sa / double(a.size()) + sb / double(b.size());
}

void chamfer_vjp(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                 double loss_bar, std::vector<Vec3>& d_a) {
  check_nonempty(a, b);
  const std::vector<int> nn_ab = all_nearest(a, b);
  const std::vector<int> nn_ba = all_nearest(b, a);
  const double wa = 2.0 * loss_bar / double(a.size());
  const double wb = 2.0 * loss_bar / double(b.size());
  for (std::size_t i = 0; i < a.size(); ++i)
    d_a[i] += wa * (a[i] - b[nn_ab[i]]);
  for (std::size_t j = 0; j < b.size(); ++j)
    d_a[nn_ba[j]] += wb * (a[nn_ba[j]] - b[j]);
}

// ---------------------------------------------------------------------------
// Earth Mover's Distance
// ---------------------------------------------------------------------------

double emd_hungarian(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  check_nonempty(a, b);
  if (a.size() != b.size())
    throw ContractError("exact transport needs equal point counts");
  const int n = int(a.size());
  // O(n^3) assignment with row/column potentials
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> p(n + 1, 0), way(n + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(n + 1, kInf);
    std::vector<char> used(n + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = kInf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur =
            (a[i0 - 1] - b[j - 1]).squaredNorm() - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  double cost = 0.0;
  for (int j = 1; j <= n; ++j)
    cost += (a[p[j] - 1] - b[j - 1]).squaredNorm();
  return cost / double(n);
}

double emd_sinkhorn(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                    double eps_scale, int iterations) {
  check_nonempty(a, b);
  const std::size_t n = a.size(), m = b.size();
  Vec3 lo = a[0], hi = a[0];
  for (const Vec3& p : a) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  for (const Vec3& p : b) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const double eps = std::max(eps_scale * (hi - lo).norm(), 1e-12);

  std::vector<double> C(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      C[i * m + j] = (a[i] - b[j]).squaredNorm();

  // log-domain alternating potential updates with uniform marginals
  std::vector<double> f(n, 0.0), g(m, 0.0);
  const double log_inv_n = -std::log(double(n));
  const double log_inv_m = -std::log(double(m));
  auto lse = [](const std::vector<double>& t) {
    const double mx = *std::max_element(t.begin(), t.end());
    double s = 0.0;
    for (double x : t) s += std::exp(x - mx);
    return mx + std::log(s);
  };
  std::vector<double> row(m), col(n);
  for (int it = 0; it < iterations; ++it) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < m; ++j)
        row[j] = (g[j] - C[i * m + j]) / eps + log_inv_m;
      f[i] = -eps * lse(row);
    }
    for (std::size_t j = 0; j < m; ++j) {
      for (std::size_t i = 0; i < n; ++i)
        col[i] = (f[i] - C[i * m + j]) / eps + log_inv_n;
      g[j] = -eps * lse(col);
    }
  }
  // transport cost with exactly row-normalized plans
  double value = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mx = -kInf;
    for (std::size_t j = 0; j < m; ++j)
      mx = std::max(mx, (g[j] - C[i * m + j]) / eps);
    double z = 0.0, acc = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double w = std::exp((g[j] - C[i * m + j]) / eps - mx);
      z += w;
      acc += w * C[i * m + j];
    }
    value += acc / z;
  }
  return value / double(n);
}

EmdResult emd(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
              std::size_t exact_limit) {
  EmdResult r;
  r.exact = a.size() <= exact_limit && b.size() <= exact_limit;
  r.value = r.exact ? emd_hungarian(a, b) : emd_sinkhorn(a, b);
  return r;
}

// ---------------------------------------------------------------------------
// Camera-visibility masking
// ---------------------------------------------------------------------------

std::vector<int> visible_indices(const std::vector<Vec3>& points,
                                 const Camera& camera,
                                 double occlusion_radius) {
  if (occlusion_radius <= 0.0)
    throw ContractError("occlusion radius must be positive");
  struct Proj {
    double x, y, z;
    bool front;
  };
  std::vector<Proj> pr(points.size());
  // bucket projections on a pixel grid of occlusion_radius cells
  std::unordered_map<std::int64_t, std::vector<int>> buckets;
  auto bkey = [](int cx, int cy) {
    return (std::int64_t(cx) << 32) ^ std::int64_t(std::uint32_t(cy));
  };
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 pc = camera.to_camera(points[i]);
    pr[i].front = pc.z() > 1e-3;
    if (!pr[i].front) continue;
    const Vec2 px = camera.project(pc);
    pr[i] = {px.x(), px.y(), pc.z(), true};
    buckets[bkey(int(std::floor(px.x() / occlusion_radius)),
                 int(std::floor(px.y() / occlusion_radius)))]
        .push_back(int(i));
  }
  std::vector<int> out;
  const double r2 = occlusion_radius * occlusion_radius;
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!pr[i].front) continue;
    const int cx = int(std::floor(pr[i].x / occlusion_radius));
    const int cy = int(std::floor(pr[i].y / occlusion_radius));
    bool occluded = false;
    for (int dx = -1; dx <= 1 && !occluded; ++dx)
      for (int dy = -1; dy <= 1 && !occluded; ++dy) {
        const auto it = buckets.find(bkey(cx + dx, cy + dy));
        if (it == buckets.end()) continue;
        for (int j : it->second) {
          if (j == int(i) || pr[j].z >= pr[i].z) continue;
          const double ddx = pr[j].x - pr[i].x, ddy = pr[j].y - pr[i].y;
          if (ddx * ddx + ddy * ddy < r2) {
            occluded = true;
            break;
          }
        }
      }
    if (!occluded) out.push_back(int(i));
  }
  return out;
}

std::vector<Vec3> visible_subset(const std::vector<Vec3>& points,
                                 const Camera& camera,
                                 double occlusion_radius) {
  std::vector<Vec3> out;
  for (int i : visible_indices(points, camera, occlusion_radius))
    out.push_back(points[i]);
  return out;
}

}  // namespace phyrec
