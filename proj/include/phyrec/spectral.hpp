#pragma once

#include "phyrec/types.hpp"

namespace phyrec {

/// Rotation-SVD of a 3x3 matrix: F = U * diag(sigma) * V^T with
/// det(U) = det(V) = 1. For det(F) > 0 all singular values are positive.
struct Svd3 {
  Mat3 U, V;
  Vec3 sigma;
};

Svd3 svd3(const Mat3& F);

/// svd3 with singular values clamped to at least `min_sigma`. Counts clamps
/// in clamp_count() (degenerate deformation states during optimization).
Svd3 svd3_clamped(const Mat3& F, double min_sigma = 1e-4);

/// Number of singular-value clamps since process start.
long clamp_count();

/// H = U * diag(h) * V^T.
Mat3 spectral_apply(const Svd3& s, const Vec3& h);

/// Vector-Jacobian product of F -> U h(sigma(F)) V^T for an isotropic
/// spectral function. `h` are the function values at s.sigma, `dh(i,j)` is
/// dh_i/dsigma_j. Given the output adjoint W, returns the adjoint of F.
/// Divided differences across near-equal singular values use the analytic
/// limit dh_i/dsigma_i - dh_i/dsigma_j.
Mat3 spectral_vjp(const Svd3& s, const Vec3& h, const Mat3& dh, const Mat3& W);

/// diag(U^T W V): the inner products needed to chain output adjoints into
/// parameters of the spectral function (theta_bar = sum_i diag_i * dh_i/dtheta).
Vec3 spectral_param_diag(const Svd3& s, const Mat3& W);

}  // namespace phyrec
