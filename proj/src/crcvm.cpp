#include "ccvm/crcvm.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "ccvm/errors.hpp"
#include "ccvm/io.hpp"

namespace ccvm::crcvm {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr int kMaxBounces = 5;

double cross(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

struct Crossing {
  double t = 0.0;  // fraction of p -> q
  Vec2 a;
  Vec2 b;
};

// First boundary segment crossed by the move p -> q, ignoring touches at p.
bool first_crossing(const geometry::PolygonDomain& domain, const Vec2& p, const Vec2& q,
                    Crossing& out) {
  const Vec2 lo = p.cwiseMin(q);
  const Vec2 hi = p.cwiseMax(q);
  const Vec2 d = q - p;
  bool found = false;
  out.t = std::numeric_limits<double>::infinity();
  for (std::size_t id : domain.candidates_in_box(lo, hi)) {
    const auto& s = domain.segments()[id];
    const Vec2 e = s.b - s.a;
    const double den = cross(d, e);
    if (den == 0.0) continue;
    const Vec2 ap = s.a - p;
    const double t = cross(ap, e) / den;
    const double u = cross(ap, d) / den;
    if (t <= 1e-12 || t > 1.0 || u < 0.0 || u > 1.0) continue;
    if (t < out.t) {
      out = Crossing{t, s.a, s.b};
      found = true;
    }
  }
  return found;
}

Vec4 pack(const Vec2& x, const Vec2& v) {
  Vec4 s;
  s << x, v;
  return s;
}

Trajectory start(const SimulationConfig& cfg) {
  Trajectory traj;
  traj.times.reserve(cfg.n_steps + 1);
  traj.states.reserve(cfg.n_steps + 1);
  traj.times.push_back(cfg.t0);
  traj.states.push_back(pack(cfg.initial_position, cfg.initial_velocity));
  return traj;
}

}  // namespace

double OmegaParams::theta_center() { return kPi / (2.0 * std::sqrt(3.0)); }

void OmegaParams::validate() const {
  auto nonneg = [](double v) { return std::isfinite(v) && v >= 0.0; };
  auto pos = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!nonneg(a) || !nonneg(b)) throw InputError("omega scales a, b must be finite and >= 0");
  if (!pos(d_r) || !pos(d_a) || !pos(sigma_theta) || !pos(sigma_d)) {
    throw InputError("omega ranges D_r, D_a, sigma_theta, sigma_D must be finite and > 0");
  }
}

double omega_repulsive(const OmegaParams& p, double theta, double d_shore) {
  // theta (theta - pi/2)(theta + pi/2) written so that f_r(-theta) = -f_r(theta) exactly
  return p.a * theta * (theta * theta - kPi * kPi / 4.0) * (p.d_r / d_shore) *
         std::exp(-d_shore / p.d_r);
}

double omega_attractive(const OmegaParams& p, double theta, double d_shore) {
  const double u = (theta - OmegaParams::theta_center()) / p.sigma_theta;
  const double w = (d_shore - p.d_a) / p.sigma_d;
  return p.b * std::exp(-(u * u + w * w));
}

double omega_fn(const OmegaParams& p, double theta, double d_shore) {
  const double d = std::max(d_shore, kMinShoreDistance);
  return omega_repulsive(p, theta, d) + omega_attractive(p, theta, d);
}

void SimulationConfig::validate() const {
  if (!(std::isfinite(dt) && dt > 0.0)) throw InputError("simulation dt must be > 0");
  if (!initial_position.allFinite() || !initial_velocity.allFinite() || !std::isfinite(t0)) {
    throw InputError("simulation initial state must be finite");
  }
}

Trajectory simulate_crcvm(const geometry::PolygonDomain& domain, double tau, double nu,
                          const OmegaParams& op, const SimulationConfig& cfg, Rng& rng) {
  cfg.validate();
  op.validate();
  if (!geometry::contains(domain, cfg.initial_position)) {
    throw InputError("initial position is not inside the domain");
  }
  Trajectory traj = start(cfg);
  Vec4 state = traj.states.back();
  for (std::size_t k = 0; k < cfg.n_steps; ++k) {
    const auto m = geometry::boundary_metrics(domain, state.head<2>(), state.tail<2>());
    const double omega = omega_fn(op, m.theta, m.d_shore);
    const auto kern = kernel::transition_kernel(kernel::RcvmParams{tau, nu, omega}, cfg.dt);
    state = kernel::sample_transition(kern, state, Vec2::Zero(), rng);
    traj.times.push_back(cfg.t0 + static_cast<double>(k + 1) * cfg.dt);
    traj.states.push_back(state);
    if (!geometry::contains(domain, state.head<2>())) {
      traj.land_hit_steps.push_back(k + 1);
      if (cfg.land_policy == LandPolicy::abort) {
        traj.aborted = true;
        break;
      }
    }
  }
  return traj;
}

Trajectory simulate_rcvm(double tau, double nu, double omega, const SimulationConfig& cfg, Rng& rng) {
  cfg.validate();
  const auto kern = kernel::transition_kernel(kernel::RcvmParams{tau, nu, omega}, cfg.dt);
  Trajectory traj = start(cfg);
  Vec4 state = traj.states.back();
  for (std::size_t k = 0; k < cfg.n_steps; ++k) {
    state = kernel::sample_transition(kern, state, Vec2::Zero(), rng);
    traj.times.push_back(cfg.t0 + static_cast<double>(k + 1) * cfg.dt);
    traj.states.push_back(state);
  }
  return traj;
}

int reflect_step(const geometry::PolygonDomain& domain, const Vec2& p, Vec2& q, Vec2& v) {
  Vec2 from = p;
  Crossing c;
  for (int bounce = 0; bounce <= kMaxBounces; ++bounce) {
    if (!first_crossing(domain, from, q, c)) {
      // a bounce exactly at a vertex can leave q behind the neighbouring segment
      if (bounce > 0 && !geometry::contains(domain, q)) break;
      return bounce;
    }
    if (bounce == kMaxBounces) break;
    const Vec2 hit = from + c.t * (q - from);
    const Vec2 e = (c.b - c.a).normalized();
    const Vec2 n(-e.y(), e.x());
    q -= 2.0 * (q - hit).dot(n) * n;
    v -= 2.0 * v.dot(n) * n;
    from = hit;
  }
  q = p;
  return kMaxBounces;
}

Trajectory simulate_reflected_cvm(const geometry::PolygonDomain& domain, double tau, double nu,
                                  const SimulationConfig& cfg, Rng& rng) {
  cfg.validate();
  if (!geometry::contains(domain, cfg.initial_position)) {
    throw InputError("initial position is not inside the domain");
  }
  const auto kern = kernel::transition_kernel(kernel::RcvmParams{tau, nu, 0.0}, cfg.dt);
  Trajectory traj = start(cfg);
  Vec4 state = traj.states.back();
  for (std::size_t k = 0; k < cfg.n_steps; ++k) {
    const Vec4 next = kernel::sample_transition(kern, state, Vec2::Zero(), rng);
    Vec2 q = next.head<2>();
    Vec2 v = next.tail<2>();
    reflect_step(domain, state.head<2>(), q, v);
    state = pack(q, v);
    traj.times.push_back(cfg.t0 + static_cast<double>(k + 1) * cfg.dt);
    traj.states.push_back(state);
    if (!geometry::contains(domain, q)) traj.land_hit_steps.push_back(k + 1);
  }
  return traj;
}

Trajectory subsample(const Trajectory& traj, std::size_t stride) {
  if (stride < 1) throw InputError("subsample stride must be >= 1");
  Trajectory out;
  out.aborted = traj.aborted;
  const std::size_t n = traj.size();
  std::vector<std::size_t> map(n, n);
  for (std::size_t i = 0; i < n; i += stride) {
    map[i] = out.times.size();
    out.times.push_back(traj.times[i]);
    out.states.push_back(traj.states[i]);
  }
  if (n > 0 && (n - 1) % stride != 0) {
    map[n - 1] = out.times.size();
    out.times.push_back(traj.times[n - 1]);
    out.states.push_back(traj.states[n - 1]);
  }
  for (std::size_t s : traj.land_hit_steps) {
    if (s < n && map[s] < n) out.land_hit_steps.push_back(map[s]);
  }
  return out;
}

Track add_noise(const Trajectory& traj, double sigma_obs, Rng& rng, const std::string& id) {
  if (!(std::isfinite(sigma_obs) && sigma_obs >= 0.0)) throw InputError("sigma_obs must be >= 0");
  std::normal_distribution<double> normal(0.0, 1.0);
  Track t;
  t.id = id;
  t.times = traj.times;
  t.observations.reserve(traj.size());
  for (const auto& s : traj.states) {
    Vec2 y = s.head<2>();
    if (sigma_obs > 0.0) {
      const double e1 = normal(rng);
      const double e2 = normal(rng);
      y += sigma_obs * Vec2(e1, e2);
    }
    t.observations.push_back(y);
  }
  return t;
}

Vec2 random_start(const geometry::PolygonDomain& domain, double d_min, double d_max, Rng& rng) {
  if (!(d_max > d_min && d_min >= 0.0)) throw InputError("random_start needs 0 <= d_min < d_max");
  const Vec2 lo = domain.min_corner();
  const Vec2 hi = domain.max_corner();
  std::uniform_real_distribution<double> ux(lo.x(), hi.x());
  std::uniform_real_distribution<double> uy(lo.y(), hi.y());
  for (int attempt = 0; attempt < 1000000; ++attempt) {
    const Vec2 p(ux(rng), uy(rng));
    if (!geometry::contains(domain, p)) continue;
    const double d = geometry::nearest_boundary_point(domain, p).distance;
    if (d >= d_min && d <= d_max) return p;
  }
  throw InputError("no water point found in the requested distance band");
}

void write_trajectories(const std::string& path, const std::vector<NamedTrajectory>& trajs) {
  io::CsvTable table;
  table.header = {"id", "t", "x", "y", "vx", "vy", "on_land"};
  for (const auto& nt : trajs) {
    const Trajectory& tr = *nt.trajectory;
    for (std::size_t i = 0; i < tr.size(); ++i) {
      const bool land = std::binary_search(tr.land_hit_steps.begin(), tr.land_hit_steps.end(), i);
      const Vec4& s = tr.states[i];
      table.rows.push_back({nt.id, io::format_double(tr.times[i]), io::format_double(s[0]),
                            io::format_double(s[1]), io::format_double(s[2]), io::format_double(s[3]),
                            land ? "1" : "0"});
    }
  }
  io::write_csv(path, table);
}

}  // namespace ccvm::crcvm
