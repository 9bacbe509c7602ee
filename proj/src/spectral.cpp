#include "phyrec/spectral.hpp"

#include <Eigen/SVD>
#include <atomic>
#include <cmath>

namespace phyrec {
namespace {
std::atomic<long> g_clamp_count{0};
}

Svd3 svd3(const Mat3& F) {
  Eigen::JacobiSVD<Mat3> svd(F, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Svd3 s;
  s.U = svd.matrixU();
  s.V = svd.matrixV();
  s.sigma = svd.singularValues();
  // Fold reflections into the last singular value so both factors are
  // rotations; flipping the last column of U and V together leaves U S V^T
  // unchanged when done pairwise.
  if (s.U.determinant() < 0) {
    s.U.col(2) *= -1;
    s.sigma[2] *= -1;
  }
  if (s.V.determinant() < 0) {
    s.V.col(2) *= -1;
    s.sigma[2] *= -1;
  }
  return s;
}

Svd3 svd3_clamped(const Mat3& F, double min_sigma) {
  Svd3 s = svd3(F);
  bool clamped = false;
  for (int i = 0; i < 3; ++i)
    if (s.sigma[i] < min_sigma) {
      s.sigma[i] = min_sigma;
      clamped = true;
    }
  if (clamped) ++g_clamp_count;
  return s;
}

long clamp_count() { return g_clamp_count.load(); }

Mat3 spectral_apply(const Svd3& s, const Vec3& h) {
  return s.U * h.asDiagonal() * s.V.transpose();
}

Mat3 spectral_vjp(const Svd3& s, const Vec3& h, const Mat3& dh, const Mat3& W) {
  const Mat3 B = s.U.transpose() * W * s.V;  // output adjoint in the SVD basis
  Mat3 A = Mat3::Zero();
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 3; ++i) A(j, j) += dh(i, j) * B(i, i);
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) {
      const double ds = s.sigma[i] - s.sigma[j];
      // (h_i - h_j)/(s_i - s_j) with its analytic limit at coincident values.
      const double a = std::abs(ds) > 1e-9 ? (h[i] - h[j]) / ds
                                           : dh(i, i) - dh(i, j);
      const double b = (h[i] + h[j]) / std::max(s.sigma[i] + s.sigma[j], 1e-9);
      A(i, j) += 0.5 * ((a + b) * B(i, j) + (a - b) * B(j, i));
      A(j, i) += 0.5 * ((a - b) * B(i, j) + (a + b) * B(j, i));
    }
  return s.U * A * s.V.transpose();
}

Vec3 spectral_param_diag(const Svd3& s, const Mat3& W) {
  const Mat3 B = s.U.transpose() * W * s.V;
  return B.diagonal();
}

}  // namespace phyrec
