#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "phyrec/geomloss.hpp"

using namespace phyrec;

namespace {

std::vector<Vec3> random_points(int n, std::uint64_t seed, double lo = 0.0,
                                double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Vec3> out;
  for (int i = 0; i < n; ++i) out.emplace_back(u(rng), u(rng), u(rng));
  return out;
}

// exhaustive nearest-neighbor reference with the same tie rule
double chamfer_brute(const std::vector<Vec3>& a, const std::vector<Vec3>& b) {
  auto one_way = [](const std::vector<Vec3>& x, const std::vector<Vec3>& y) {
    double s = 0.0;
    for (const Vec3& p : x) {
      double best = std::numeric_limits<double>::infinity();
      for (const Vec3& q : y) best = std::min(best, (p - q).squaredNorm());
      s += best;
    }
    return s / double(x.size());
  };
  return one_way(a, b) + one_way(b, a);
}

}  // namespace

TEST_CASE("chamfer oracle values") {
  const std::vector<Vec3> a = random_points(20, 3);
  CHECK(chamfer(a, a) == 0.0);

  const std::vector<Vec3> p = {Vec3(0.1, 0.2, 0.3)};
  const std::vector<Vec3> q = {Vec3(0.4, 0.1, 0.5)};
  CHECK(chamfer(p, q) ==
        doctest::Approx(2.0 * (p[0] - q[0]).squaredNorm()).epsilon(1e-15));

  CHECK_THROWS_AS(chamfer({}, a), ContractError);
  CHECK_THROWS_AS(chamfer(a, {}), ContractError);
}

TEST_CASE("chamfer equals the exhaustive oracle") {
  for (std::uint64_t seed : {5u, 6u, 7u}) {
    const std::vector<Vec3> a = random_points(64, seed);
    const std::vector<Vec3> b = random_points(64, seed + 100);
    const double fast = chamfer(a, b);
    const double slow = chamfer_brute(a, b);
    CHECK(fast == doctest::Approx(slow).epsilon(1e-12));
    CHECK(chamfer(a, b) == chamfer(b, a));  // symmetry
    CHECK(fast > 0.0);
  }
  // clustered sets stress the ring search with empty cells in between
  std::vector<Vec3> a = random_points(30, 9, 0.0, 0.1);
  std::vector<Vec3> far = random_points(30, 10, 0.9, 1.0);
  a.insert(a.end(), far.begin(), far.end());
  const std::vector<Vec3> b = random_points(40, 11, 0.4, 0.6);
  CHECK(chamfer(a, b) == doctest::Approx(chamfer_brute(a, b)).epsilon(1e-12));
}

TEST_CASE("chamfer gradient matches finite differences") {
  const std::vector<Vec3> a = random_points(24, 13);
  const std::vector<Vec3> b = random_points(30, 14);
  std::vector<Vec3> d_a(a.size(), Vec3::Zero());
  chamfer_vjp(a, b, 1.0, d_a);

  const double h = 1e-7;
  std::mt19937_64 rng(15);
  std::uniform_int_distribution<int> pick(0, int(a.size()) - 1);
  for (int trial = 0; trial < 20; ++trial) {
    const int i = pick(rng);
    const int c = trial % 3;
    std::vector<Vec3> ap = a, am = a;
    ap[i][c] += h;
    am[i][c] -= h;
    const double fd = (chamfer(ap, b) - chamfer(am, b)) / (2.0 * h);
    const double denom = std::max({std::abs(fd), std::abs(d_a[i][c]), 1e-9});
    CHECK(std::abs(d_a[i][c] - fd) / denom <= 1e-4);
  }
}

TEST_CASE("emd oracle values and mode dispatch") {
  const std::vector<Vec3> a = random_points(16, 17);
  CHECK(emd_hungarian(a, a) == 0.0);

  // swapped pair: the assignment recovers the permutation
  const std::vector<Vec3> p = {Vec3(0.1, 0.1, 0.1), Vec3(0.8, 0.2, 0.4)};
  const std::vector<Vec3> q = {p[1], p[0]};
  CHECK(emd_hungarian(p, q) == 0.0);

  CHECK_THROWS_AS(emd_hungarian(a, random_points(10, 18)), ContractError);

  const EmdResult exact = emd(a, a);
  CHECK(exact.exact);
  const EmdResult approx = emd(a, a, 8);
  CHECK(!approx.exact);
}

TEST_CASE("sinkhorn tracks the hungarian oracle") {
  for (std::uint64_t seed : {19u, 20u, 21u}) {
    const std::vector<Vec3> a = random_points(16, seed);
    const std::vector<Vec3> b = random_points(16, seed + 50);
    const double exact = emd_hungarian(a, b);
    const double approx = emd_sinkhorn(a, b);
    CHECK(std::abs(approx - exact) <= 0.05 * exact);
  }
}

TEST_CASE("visibility masking") {
  const Camera cam = make_ring_camera(Vec3(0.5, 0.5, 0.5), 1.5, 0.2, 0.5, 128,
                                      128, 128);
  // single point
  CHECK(visible_indices({Vec3(0.5, 0.5, 0.5)}, cam, 2.0) ==
        std::vector<int>{0});

  // two points on one camera ray: only the nearer survives
  const Vec3 eye = -cam.pose.linear().transpose() * cam.pose.translation();
  const Vec3 dir = (Vec3(0.5, 0.5, 0.5) - eye).normalized();
  const std::vector<Vec3> ray = {eye + 1.0 * dir, eye + 1.4 * dir};
  CHECK(visible_indices(ray, cam, 2.0) == std::vector<int>{0});

  CHECK_THROWS_AS(visible_indices(ray, cam, 0.0), ContractError);
}

TEST_CASE("cube visibility agrees with the quadratic oracle") {
  // 16^3 lattice cube
  std::vector<Vec3> pts;
  for (int i = 0; i < 16; ++i)
    for (int j = 0; j < 16; ++j)
      for (int k = 0; k < 16; ++k)
        pts.emplace_back(0.4 + 0.2 * i / 15.0, 0.4 + 0.2 * j / 15.0,
                         0.4 + 0.2 * k / 15.0);
  const Camera cam = make_ring_camera(Vec3(0.5, 0.5, 0.5), 1.5, 0.0, 0.0, 128,
                                      128, 128);
  const double radius = 1.5;
  const std::vector<int> fast = visible_indices(pts, cam, radius);

  // O(N^2) restatement of the definition as an independent reference
  std::vector<int> slow;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Vec3 pci = cam.to_camera(pts[i]);
    if (pci.z() <= 1e-3) continue;
    const Vec2 pi = cam.project(pci);
    bool occ = false;
    for (std::size_t j = 0; j < pts.size() && !occ; ++j) {
      if (i == j) continue;
      const Vec3 pcj = cam.to_camera(pts[j]);
      if (pcj.z() <= 1e-3 || pcj.z() >= pci.z()) continue;
      occ = (cam.project(pcj) - pi).squaredNorm() < radius * radius;
    }
    if (!occ) slow.push_back(int(i));
  }
  CHECK(fast == slow);

  // roughly the camera-facing face of the lattice
  const double frac = double(fast.size()) / double(pts.size());
  CHECK(frac >= 1.0 / 16.0);
  CHECK(frac <= 0.25);

  // subset property and monotonicity in the occlusion radius
  const std::vector<int> wider = visible_indices(pts, cam, 3.0);
  CHECK(wider.size() <= fast.size());
  for (int idx : wider)
    CHECK(std::find(fast.begin(), fast.end(), idx) != fast.end());
}
