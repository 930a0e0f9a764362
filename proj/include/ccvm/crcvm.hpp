#pragma once

#include <string>
#include <vector>

#include "ccvm/geometry.hpp"
#include "ccvm/kernel.hpp"
#include "ccvm/random.hpp"
#include "ccvm/track.hpp"

namespace ccvm::crcvm {

using kernel::Vec4;

/// Smallest distance to shore used when evaluating the angular velocity.
constexpr double kMinShoreDistance = 0.01;

/// Parameters of the angular-velocity surface f(theta, d) = f_r + f_a.
/// a = b = 0 is accepted and gives f = 0 (plain CVM).
struct OmegaParams {
  double a = 4.0;                      // rad/h, repulsion scale
  double b = 4.0;                      // rad/h, attraction scale
  double d_r = 0.5;                    // km, repulsion range
  double d_a = 1.0;                    // km, attraction distance
  double sigma_theta = 0.39269908169872414;  // rad (pi/8)
  double sigma_d = 0.3;                // km

  /// Angular coordinate of the attraction kernel centre, pi / (2 sqrt 3).
  static double theta_center();
  void validate() const;
};

/// f_r(theta, d) = a theta (theta - pi/2)(theta + pi/2) (D_r/d) exp(-d/D_r)
double omega_repulsive(const OmegaParams& p, double theta, double d_shore);
/// f_a(theta, d) = b exp(-[(theta - m1)^2/sigma_theta^2 + (d - D_a)^2/sigma_d^2])
double omega_attractive(const OmegaParams& p, double theta, double d_shore);
/// f_r + f_a with d_shore clamped to >= kMinShoreDistance.
double omega_fn(const OmegaParams& p, double theta, double d_shore);

enum class LandPolicy { record, abort };

struct SimulationConfig {
  double dt = 1.0 / 60.0;  // h
  std::size_t n_steps = 0;
  Vec2 initial_position = Vec2::Zero();
  Vec2 initial_velocity = Vec2::Zero();
  double t0 = 0.0;
  LandPolicy land_policy = LandPolicy::record;

  void validate() const;
};

struct Trajectory {
  std::vector<double> times;
  std::vector<Vec4> states;  // (x, y, vx, vy)
  std::vector<std::size_t> land_hit_steps;
  bool aborted = false;

  std::size_t size() const { return times.size(); }
  bool hit_land() const { return !land_hit_steps.empty(); }
};

/// Constrained RCVM: each fine step uses omega_fn evaluated at the current
/// state's boundary covariates and the exact RCVM kernel with that omega.
Trajectory simulate_crcvm(const geometry::PolygonDomain& domain, double tau, double nu,
                          const OmegaParams& op, const SimulationConfig& cfg, Rng& rng);

/// Unconstrained RCVM with constant omega (omega = 0 gives the CVM). Draws
/// the same random numbers per step as simulate_crcvm.
Trajectory simulate_rcvm(double tau, double nu, double omega, const SimulationConfig& cfg, Rng& rng);

/// CVM step followed by specular reflection at the boundary.
Trajectory simulate_reflected_cvm(const geometry::PolygonDomain& domain, double tau, double nu,
                                  const SimulationConfig& cfg, Rng& rng);

/// Reflects the move p -> q off the boundary: at most 5 bounces, after which
/// the position falls back to p. The same fallback applies when a bounce off
/// a vertex lands outside. The velocity's normal component is negated at
/// every bounce. Returns the number of bounces, or 5 when clamped.
int reflect_step(const geometry::PolygonDomain& domain, const Vec2& p, Vec2& q, Vec2& v);

/// Keeps every stride-th state plus the last one.
Trajectory subsample(const Trajectory& traj, std::size_t stride);

/// Positions with i.i.d. N(0, sigma_obs^2) noise per axis.
Track add_noise(const Trajectory& traj, double sigma_obs, Rng& rng, const std::string& id);

/// Uniform draw over the water region at distance [d_min, d_max] from shore.
Vec2 random_start(const geometry::PolygonDomain& domain, double d_min, double d_max, Rng& rng);

struct NamedTrajectory {
  std::string id;
  const Trajectory* trajectory = nullptr;
};

/// CSV `id,t,x,y,vx,vy,on_land`.
void write_trajectories(const std::string& path, const std::vector<NamedTrajectory>& trajs);

}  // namespace ccvm::crcvm
