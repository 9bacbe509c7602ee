#pragma once

#include "phyrec/types.hpp"

namespace phyrec {

// ---------------------------------------------------------------------------
// Silhouette splatting. Each particle becomes an isotropic 2-D Gaussian
// sprite of pixel radius focal * radius / depth; per-pixel alpha composites
// order-independently as 1 - prod_i (1 - opacity_i * g_i). The sprite profile
// is a truncated Gaussian renormalized to peak 1 and reach exactly 0 at the
// 3-sigma cutoff, so the image is continuous in the particle parameters.
// ---------------------------------------------------------------------------

/// Renders the silhouette. Particles behind the near plane (depth <= 1e-3)
/// are skipped and counted into `skipped` when given; if every particle of a
/// non-empty set is skipped a ContractError is thrown.
AlphaImage render_alpha(const ParticleSet& particles, const Camera& camera,
                        int* skipped = nullptr);

/// Adjoint of render_alpha: accumulates d(loss)/d(positions, radii,
/// opacities) for the given image adjoint into caller-sized arrays.
void render_alpha_vjp(const ParticleSet& particles, const Camera& camera,
                      const AlphaImage& alpha_bar,
                      std::vector<Vec3>& d_positions,
                      std::vector<double>& d_radii,
                      std::vector<double>& d_opacities);

// ---------------------------------------------------------------------------
// Image losses
// ---------------------------------------------------------------------------

/// Mean absolute difference. Throws ContractError on dimension mismatch.
double loss_l1(const AlphaImage& a, const AlphaImage& b);
void loss_l1_vjp(const AlphaImage& a, const AlphaImage& b, double loss_bar,
                 AlphaImage& a_bar);

/// 1 - SSIM with the standard 11x11 Gaussian window (sigma 1.5) and
/// constants C1 = 0.01^2, C2 = 0.03^2 on the [0,1] range. Windows are
/// renormalized at the image border. Throws ContractError if the image is
/// smaller than the window.
double loss_ssim(const AlphaImage& a, const AlphaImage& b);
void loss_ssim_vjp(const AlphaImage& a, const AlphaImage& b, double loss_bar,
                   AlphaImage& a_bar);

/// lambda_l1 * L1 + lambda_ssim * (1 - SSIM).
double image_loss(const AlphaImage& a, const AlphaImage& b,
                  const LossWeights& weights);
void image_loss_vjp(const AlphaImage& a, const AlphaImage& b,
                    const LossWeights& weights, double loss_bar,
                    AlphaImage& a_bar);

}  // namespace phyrec
