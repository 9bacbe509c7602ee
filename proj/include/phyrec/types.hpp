#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace phyrec {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using VecX = Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

struct ContractError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Particle left the simulation domain (names particle index and substep).
struct DomainEscapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Velocity blow-up detected mid-simulation.
struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// NaN/Inf or a failed decomposition.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Particles
// ---------------------------------------------------------------------------

/// Per-particle simulation and appearance state. Positions live in the
/// normalized [0,1]^3 scene domain. Fluid models keep F = J^(1/3) * I so
/// det(F) doubles as the tracked volume ratio.
struct ParticleSet {
  std::vector<Vec3> positions;
  std::vector<Vec3> velocities;
  std::vector<double> masses;
  std::vector<double> volumes;
  std::vector<Mat3> deformation_gradients;
  std::vector<Mat3> affine_velocities;  // APIC C matrices, 1/s
  std::vector<double> radii;            // isotropic render radius
  std::vector<double> opacities;        // in [0,1]

  std::size_t size() const { return positions.size(); }

  void resize(std::size_t n);

  /// Checks the construction invariants (positive masses/volumes/radii,
  /// opacities in range, det F > 0). Throws ContractError on violation.
  void validate() const;
};

// ---------------------------------------------------------------------------
// Materials
// ---------------------------------------------------------------------------

enum class MaterialModel : std::uint8_t {
  Elastic,       // Neo-Hookean
  Newtonian,     // weakly compressible viscous fluid
  NonNewtonian,  // viscoplastic yield-stress fluid
  Plasticine,    // von Mises elastoplastic
  Sand,          // Drucker-Prager
};

const char* to_string(MaterialModel m);
MaterialModel material_model_from_string(const std::string& s);

/// Tagged union over the five material models. Only the fields relevant to
/// `model` are active (the others keep their defaults and are never
/// optimized): Elastic (E, nu); Newtonian (mu_visc, kappa);
/// NonNewtonian (mu_visc, kappa, tau_y, eta); Plasticine (E, nu, tau_y);
/// Sand (theta_fric). Sand still draws its elastic moduli from (E, nu)
/// at their fixed defaults.
struct MaterialParams {
  MaterialModel model = MaterialModel::Elastic;
  double E = 1e5;            // Young's modulus, Pa
  double nu = 0.3;           // Poisson ratio, (0, 0.45)
  double mu_visc = 1e3;      // shear modulus / viscosity slot, Pa or Pa s
  double kappa = 1e5;        // bulk modulus, Pa
  double tau_y = 1e3;        // yield stress, Pa
  double eta = 10.0;         // plastic viscosity, Pa s
  double theta_fric = 30.0;  // friction angle, degrees, (0, 45)

  void validate() const;

  /// Stiffness scale used for the CFL sound-speed estimate.
  double stiffness() const;
};

// ---------------------------------------------------------------------------
// Camera
// ---------------------------------------------------------------------------

/// Pinhole camera. `pose` maps world points into the camera frame
/// (+z looking forward, +x right, +y down in image coordinates).
struct Camera {
  Eigen::Isometry3d pose = Eigen::Isometry3d::Identity();
  double focal = 0;  // pixels
  Vec2 principal_point = Vec2::Zero();
  int width = 0;
  int height = 0;

  void validate() const;

  /// World point -> camera frame.
  Vec3 to_camera(const Vec3& p) const { return pose * p; }

  /// Camera-frame point -> pixel coordinates (no depth check).
  Vec2 project(const Vec3& pc) const {
    return Vec2(focal * pc.x() / pc.z() + principal_point.x(),
                focal * pc.y() / pc.z() + principal_point.y());
  }
};

/// Camera on a horizontal ring of `radius` around `target`, at `elevation`
/// radians above the horizontal plane, looking at `target`.
Camera make_ring_camera(const Vec3& target, double radius, double elevation,
                        double azimuth, double focal, int width, int height);

// ---------------------------------------------------------------------------
// Scene
// ---------------------------------------------------------------------------

enum class BoundaryType : std::uint8_t { Sticky, Separating };

struct Scene {
  ParticleSet particles;
  Vec3 v0 = Vec3::Zero();  // global initial velocity, applied at t = 0
  MaterialParams material;
  Vec3 gravity = Vec3(0, -9.8, 0);
  int grid_resolution = 32;
  double frame_dt = 1.0 / 60.0;
  double cfl = 0.3;
  double ground_friction = 0.5;
  BoundaryType boundary = BoundaryType::Separating;
  double density = 1000.0;  // kg per domain-unit^3

  double spacing() const { return 1.0 / grid_resolution; }
};

// ---------------------------------------------------------------------------
// Losses / observations
// ---------------------------------------------------------------------------

struct LossWeights {
  double lambda_img = 1.0;  // defaulted to 1/|C| by the harness
  double lambda_cd = 1.0;
  double lambda_l1 = 0.8;
  double lambda_ssim = 0.2;
  double lambda_alpha = 1.0;
};

/// Silhouette image, values in [0,1], row-major.
struct AlphaImage {
  int width = 0;
  int height = 0;
  std::vector<double> values;

  AlphaImage() = default;
  AlphaImage(int w, int h) : width(w), height(h), values(std::size_t(w) * h, 0.0) {}

  double& at(int x, int y) { return values[std::size_t(y) * width + x]; }
  double at(int x, int y) const { return values[std::size_t(y) * width + x]; }
};

/// Ground-truth observations per (frame, camera): alpha maps plus the
/// visibility-masked point subsets extracted by the harness.
struct ObservationSet {
  std::vector<double> timestamps;                          // |T|
  std::vector<std::vector<AlphaImage>> alpha;              // [t][c]
  std::vector<std::vector<std::vector<Vec3>>> visible;     // [t][c]

  std::size_t frame_count() const { return timestamps.size(); }
  std::size_t camera_count() const { return alpha.empty() ? 0 : alpha[0].size(); }
};

}  // namespace phyrec
