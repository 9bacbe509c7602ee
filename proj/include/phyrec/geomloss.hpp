#pragma once

#include "phyrec/types.hpp"

namespace phyrec {

/// Bidirectional Chamfer distance: mean squared nearest distance from a to b
/// plus the same from b to a. Nearest neighbors found through a uniform
/// spatial hash; ties broken toward the lowest index. Throws ContractError on
/// an empty set.
double chamfer(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

/// Gradient of chamfer with respect to the first set (branch-local: the
/// nearest-neighbor assignment is held fixed).
void chamfer_vjp(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                 double loss_bar, std::vector<Vec3>& d_a);

struct EmdResult {
  double value = 0;
  bool exact = false;  // Hungarian (true) or Sinkhorn (false)
};

/// Exact assignment cost / N on squared distances. Requires |a| = |b|.
double emd_hungarian(const std::vector<Vec3>& a, const std::vector<Vec3>& b);

/// Entropic approximation: eps = eps_scale * bounding-box diagonal of the
/// combined sets, fixed iteration count, row-normalized transport cost.
double emd_sinkhorn(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
                    double eps_scale = 0.01, int iterations = 200);

/// Dispatches to the exact solver up to `exact_limit` points per set.
EmdResult emd(const std::vector<Vec3>& a, const std::vector<Vec3>& b,
              std::size_t exact_limit = 512);

/// Indices of points not occluded on this camera: a point survives iff no
/// other point projects within `occlusion_radius` pixels at strictly smaller
/// depth. Points behind the near plane never survive.
std::vector<int> visible_indices(const std::vector<Vec3>& points,
                                 const Camera& camera,
                                 double occlusion_radius);

std::vector<Vec3> visible_subset(const std::vector<Vec3>& points,
                                 const Camera& camera,
                                 double occlusion_radius);

}  // namespace phyrec
