#pragma once

#include <cstdint>
#include <functional>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "ccvm/crcvm.hpp"
#include "ccvm/geometry.hpp"
#include "ccvm/inference.hpp"
#include "ccvm/smoothing.hpp"
#include "ccvm/track.hpp"

namespace ccvm::workflows {

// ---------------------------------------------------------------- ingest

struct IngestOptions {
  double drop_hours = 12.0;  // discarded after the first fix of each individual
  double max_speed = 20.0;   // km/h
};

struct IngestCounts {
  std::string id;
  std::size_t raw = 0;
  std::size_t dropped_initial = 0;
  std::size_t dropped_speed = 0;
  std::size_t pre = 0;
  std::size_t post = 0;
};

struct ExposureRow {
  std::string id;
  double t = 0.0;
  double d_ship = 0.0;  // km; NaN when no ship position is available
  double e_ship = 0.0;  // 1/km, 0 without line of sight
  bool line_of_sight = false;
};

struct IngestResult {
  Dataset pre;
  Dataset post;
  std::vector<IngestCounts> counts;
  std::vector<ExposureRow> exposure;  // cleaned observations, empty without ship data
  /// Earliest raw time; output times are hours since this epoch.
  double epoch = 0.0;
  bool has_ship = false;
};

/// Ship positions over time (planar km, decimal hours).
struct ShipTrack {
  std::vector<double> times;
  std::vector<Vec2> positions;
};

/// CSV `time,x,y`, times strictly increasing.
ShipTrack read_ship_track(const std::string& path);

/// Walks the track keeping a point only if the speed from the last kept point
/// is <= max_speed; the second point of an offending pair is the one dropped.
Track speed_filter(const Track& track, double max_speed, std::size_t* dropped = nullptr);

/// Drops the first hours, applies the speed filter and splits each track at
/// its first line-of-sight time with the ship. Ship positions come from the
/// track's ship_x/ship_y channels when present, else from `ship`. Without any
/// ship information everything is pre-exposure. Both parts carry the E_ship
/// channel; times are shifted to the dataset epoch.
IngestResult ingest(const Dataset& raw, const geometry::PolygonDomain* domain, const ShipTrack* ship,
                    const IngestOptions& opts = {});

// -------------------------------------------------------------- exposure

/// Ship position for time t: nearest fix in time, none outside the ship
/// track's time range.
std::optional<Vec2> ship_position(const ShipTrack& ship, double t);

/// Per observation exposure E = 1/D^ship when the ship is visible, else 0.
std::vector<ExposureRow> compute_exposure(const Track& track, const ShipTrack* ship,
                                          const geometry::PolygonDomain& domain);

/// Stores E^ship as the track's "E_ship" channel.
void attach_exposure(Track& track, const std::vector<ExposureRow>& rows);

/// CSV `id,t,d_ship,e_ship,line_of_sight`.
void write_exposure(const std::string& path, const std::vector<ExposureRow>& rows);

// ------------------------------------------------------------ covariates

enum class CovariateMode { truth, observed, smoothed };

std::string to_string(CovariateMode m);
CovariateMode covariate_mode_from_string(const std::string& s);

/// Builds the per-interval covariate grids of every track from its
/// observations (observed or smoothed positions).
void attach_grids(Dataset& data, const geometry::PolygonDomain& domain, double sub_step,
                  const geometry::SmoothingOptions& smoothing, CovariateMode mode);

/// Covariate grids from a simulated fine trajectory, one grid node per fine
/// step; the observation times must be fine-step times.
std::vector<IntervalGrid> true_grids(const crcvm::Trajectory& fine, const std::vector<double>& obs_times,
                                     const geometry::PolygonDomain& domain);

// -------------------------------------------------------------- simulate

enum class SimModel { crcvm, cvm, reflected };

std::string to_string(SimModel m);
SimModel sim_model_from_string(const std::string& s);

struct SimulateConfig {
  std::size_t batches = 1;
  std::size_t individuals = 6;
  SimModel model = SimModel::crcvm;
  double tau0 = 2.0;  // h
  double nu0 = 4.0;   // km/h
  double sigma_tau = 0.0;
  double sigma_nu = 0.0;
  crcvm::OmegaParams omega;
  double fine_step = 10.0 / 3600.0;  // h
  double duration = 72.0;            // h
  double obs_interval = 10.0 / 60.0;  // h, a multiple of fine_step
  double sigma_obs = 0.01;           // km
  double start_min = 0.1;            // km from shore
  double start_max = 1.0;
  crcvm::LandPolicy land_policy = crcvm::LandPolicy::record;
  bool discard_land_batches = false;
  std::uint64_t seed = 1;

  void validate() const;
  std::size_t stride() const;
};

struct SimulatedIndividual {
  std::string id;
  double tau = 0.0;
  double nu = 0.0;
  crcvm::Trajectory fine;
  crcvm::Trajectory sampled;
  Track observations;
};

struct SimulatedBatch {
  std::size_t index = 0;
  std::vector<SimulatedIndividual> individuals;
  bool hit_land = false;
};

/// Batch `index` drawn from its own random streams, so batches are
/// reproducible independently of each other. Starts are uniform over the
/// water at [start_min, start_max] km from shore, initial velocities zero.
SimulatedBatch simulate_batch(const geometry::PolygonDomain& domain, const SimulateConfig& cfg,
                              std::size_t index);

/// Simulates cfg.batches batches into out_dir: one trajectory CSV per
/// individual, one noisy track CSV per batch and manifest.json, which is
/// also returned. Land-hit batches are dropped when discard_land_batches is set.
nlohmann::json run_simulate(const geometry::PolygonDomain& domain, const SimulateConfig& cfg,
                            const std::string& out_dir, unsigned threads = 1);

// ----------------------------------------------------------------- study

struct StudyScenario {
  std::string name;
  bool crcvm = true;  // fitted model; false = CVM
  CovariateMode covariates = CovariateMode::truth;
};

struct StudyConfig {
  SimulateConfig sim;
  std::vector<StudyScenario> scenarios;
  double sub_step = 1.0 / 60.0;
  geometry::SmoothingOptions smoothing;
  inference::FitOptions fit;
  std::optional<inference::ThetaVector> init;  // default: the usual starting point
  std::size_t max_attempts = 0;  // simulated batches tried; 0 means 3 * batches
  unsigned threads = 1;
};

struct StudyFit {
  std::size_t batch = 0;
  std::string scenario;
  bool ok = false;
  std::string status;
  std::string error;
  double seconds = 0.0;
  std::vector<double> values;  // tau0, nu0, sigma_tau, sigma_nu
  std::vector<double> lo;
  std::vector<double> hi;
};

struct ScenarioSummary {
  std::string name;
  std::size_t fits = 0;
  std::size_t failures = 0;
  std::vector<double> mean;
  std::vector<double> q025;
  std::vector<double> q975;
  std::vector<double> coverage;  // share of CIs covering the truth
};

struct StudyResult {
  std::size_t batches_used = 0;
  std::size_t batches_discarded = 0;
  std::vector<StudyFit> fits;
  std::vector<ScenarioSummary> summaries;
};

/// Simulate -> fit for every scenario, batches with land hits discarded and
/// replaced until cfg.sim.batches clean batches are used or max_attempts is
/// reached. Failed fits are counted and excluded from the summaries.
StudyResult run_study(const geometry::PolygonDomain& domain, const StudyConfig& cfg,
                      const std::function<void(const StudyFit&)>& progress = {});

nlohmann::json to_json(const StudyResult& r, const StudyConfig& cfg);
/// CSV `scenario,parameter,truth,mean,q025,q975,coverage,fits,failures`.
void write_study_table(const std::string& path, const StudyResult& r, const StudyConfig& cfg);

// ----------------------------------------------------------------- check

struct CheckOptions {
  std::size_t replicates = 20;
  double step = 10.0 / 3600.0;  // h
  double sigma_obs = 0.01;
  std::size_t bins = 30;
  std::uint64_t seed = 1;
};

struct DensityRow {
  std::string variable;  // d_shore or abs_theta
  std::string source;    // observed or simulated
  double bin_left = 0.0;
  double bin_right = 0.0;
  double density = 0.0;
};

struct CheckResult {
  std::vector<DensityRow> rows;
  std::vector<double> observed_d, simulated_d;
  std::vector<double> observed_theta, simulated_theta;
  double ks_d = 0.0, ks_d_p = 0.0;
  double ks_theta = 0.0, ks_theta_p = 0.0;
  std::size_t land_redraws = 0;  // constrained fits: discarded draws that reached land
  std::size_t land_tracks = 0;   // unconstrained fits: simulated tracks that left the water
};

/// D^shore and |Theta| at the observation times of the tracks (velocity from
/// the displacement to the next observation).
void observation_metrics(const Track& track, const geometry::PolygonDomain& domain, std::vector<double>& d,
                         std::vector<double>& abs_theta);

/// Simulates the fitted model from each track's first position (zero initial
/// velocity) at the track's observation times (fine steps <= opts.step), adds noise and
/// compares D^shore and |Theta| densities with the observed ones. With an omega
/// surface, draws that reach land are redrawn (NumericalError after 100 in a
/// row); a CVM fit is simulated freely and its land-hitting tracks counted.
CheckResult run_check(const inference::FitResult& fit, const geometry::PolygonDomain& domain,
                      const Dataset& data, const CheckOptions& opts);

/// CSV `variable,source,bin_left,bin_right,density`.
void write_densities(const std::string& path, const std::vector<DensityRow>& rows);

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
double ks_statistic(std::vector<double> a, std::vector<double> b);
double ks_pvalue(double d, std::size_t n, std::size_t m);

// -------------------------------------------------------------- recovery

struct AlphaInterval {
  double estimate = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

struct RecoveryTableRow {
  std::string parameter;  // tau or nu
  inference::RecoveryRow row;
};

std::vector<RecoveryTableRow> recovery_table(const AlphaInterval& alpha_tau, const AlphaInterval& alpha_nu,
                                             const std::vector<double>& ps);

/// Alpha estimates from a response summary JSON (mean, q025, q975) or a
/// response FitResult JSON (estimates with Wald CIs).
void alphas_from_json(const nlohmann::json& j, AlphaInterval& alpha_tau, AlphaInterval& alpha_nu);

/// CSV `parameter,p,distance_km,lo_km,hi_km,sign_ok`.
void write_recovery_table(const std::string& path, const std::vector<RecoveryTableRow>& rows);

// ---------------------------------------------------------------- config

/// Everything a subcommand may read from the JSON config; flags override.
struct RunConfig {
  std::string domain;
  std::string tracks;
  std::string ship;
  std::string out_dir = ".";
  std::string baseline;  // response mode
  double sigma_obs = 0.01;
  double sub_step = 1.0 / 60.0;
  geometry::SmoothingOptions smoothing;
  CovariateMode covariates = CovariateMode::smoothed;
  bool crcvm = true;
  crcvm::OmegaParams omega;
  std::optional<inference::ThetaVector> init;  // tau0, nu0, sigma_tau, sigma_nu (natural scale in JSON)
  std::uint64_t seed = 1;
  unsigned threads = 1;
  IngestOptions ingest;
  SimulateConfig simulate;
  std::vector<StudyScenario> scenarios;
  std::size_t study_max_attempts = 0;
  std::size_t draws = 100;
  std::string exposure_channel = "E_ship";
  CheckOptions check;
  optim::BfgsOptions optimizer;
  double inner_fd_step = 1e-3;
};

RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config(const std::string& path);

/// Fit and study settings assembled from a RunConfig.
inference::ParameterModel baseline_model(const RunConfig& cfg);
inference::FitOptions fit_options(const RunConfig& cfg);
StudyConfig study_config(const RunConfig& cfg);

/// Human-readable table of estimates with CIs.
std::string summary_table(const inference::FitResult& fit);

nlohmann::json to_json(const inference::ResponseSummary& s, const inference::ParameterModel& model);

/// Writes a JSON document with 2-space indentation.
void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

}  // namespace ccvm::workflows
