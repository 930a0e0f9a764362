#include "ccvm/workflows.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>
#include <set>
#include <sstream>
#include <thread>

#include "ccvm/errors.hpp"
#include "ccvm/io.hpp"
#include "ccvm/kernel.hpp"

namespace ccvm::workflows {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr int kMaxLandRedraws = 100;

void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next++;
      if (i >= n) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t k = std::min<std::size_t>(threads, n);
  for (std::size_t t = 0; t < k; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

Track subset(const Track& track, const std::vector<std::size_t>& keep) {
  Track out;
  out.id = track.id;
  for (const auto& [name, values] : track.covariates) out.covariates[name];
  for (std::size_t j : keep) {
    out.times.push_back(track.times[j]);
    out.observations.push_back(track.observations[j]);
    for (const auto& [name, values] : track.covariates) out.covariates[name].push_back(values[j]);
  }
  return out;
}

std::vector<std::size_t> range(std::size_t lo, std::size_t hi) {
  std::vector<std::size_t> v;
  for (std::size_t j = lo; j < hi; ++j) v.push_back(j);
  return v;
}

// linear-interpolation quantile (type 7)
double quantile(std::vector<double> v, double p) {
  if (v.empty()) return kNaN;
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create directory " + dir + ": " + ec.message());
}

std::string padded(std::size_t v, int width) {
  std::string s = std::to_string(v);
  if (static_cast<int>(s.size()) < width) s.insert(0, static_cast<std::size_t>(width) - s.size(), '0');
  return s;
}

void reject_unknown(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw InputError(where + " must be a JSON object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!allowed.count(k)) throw InputError("unknown config key " + where + "." + k);
  }
}

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InputError(std::string("config key ") + key + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------- ingest

ShipTrack read_ship_track(const std::string& path) {
  const io::CsvTable t = io::read_csv(path);
  const std::size_t ct = t.require("time"), cx = t.require("x"), cy = t.require("y");
  ShipTrack ship;
  for (const auto& row : t.rows) {
    ship.times.push_back(io::parse_double(row[ct]));
    ship.positions.emplace_back(io::parse_double(row[cx]), io::parse_double(row[cy]));
  }
  if (ship.times.empty()) throw InputError("empty ship track: " + path);
  for (std::size_t i = 0; i < ship.times.size(); ++i) {
    if (!std::isfinite(ship.times[i]) || !ship.positions[i].allFinite()) {
      throw InputError(path + ": non-finite ship fix");
    }
    if (i > 0 && !(ship.times[i] > ship.times[i - 1])) {
      throw InputError(path + ": ship times must be strictly increasing");
    }
  }
  return ship;
}

Track speed_filter(const Track& track, double max_speed, std::size_t* dropped) {
  if (!(max_speed > 0.0)) throw InputError("max_speed must be > 0");
  std::vector<std::size_t> keep;
  for (std::size_t j = 0; j < track.size(); ++j) {
    if (!keep.empty()) {
      const std::size_t k = keep.back();
      const double speed = (track.observations[j] - track.observations[k]).norm() / (track.times[j] - track.times[k]);
      if (speed > max_speed) continue;
    }
    keep.push_back(j);
  }
  if (dropped) *dropped = track.size() - keep.size();
  return subset(track, keep);
}

std::optional<Vec2> ship_position(const ShipTrack& ship, double t) {
  if (ship.times.empty()) throw InputError("empty ship track");
  if (t < ship.times.front() || t > ship.times.back()) return std::nullopt;
  const auto it = std::lower_bound(ship.times.begin(), ship.times.end(), t);
  auto i = static_cast<std::size_t>(it - ship.times.begin());
  if (i > 0 && (i == ship.times.size() || t - ship.times[i - 1] <= ship.times[i] - t)) --i;
  return ship.positions[i];
}

std::vector<ExposureRow> compute_exposure(const Track& track, const ShipTrack* ship,
                                          const geometry::PolygonDomain& domain) {
  const auto sx = track.covariates.find("ship_x");
  const auto sy = track.covariates.find("ship_y");
  const bool columns = sx != track.covariates.end() && sy != track.covariates.end();
  if (ship && ship->times.empty()) throw InputError("empty ship track");
  std::vector<ExposureRow> rows;
  rows.reserve(track.size());
  for (std::size_t j = 0; j < track.size(); ++j) {
    ExposureRow r;
    r.id = track.id;
    r.t = track.times[j];
    r.d_ship = kNaN;
    std::optional<Vec2> p;
    if (columns) {
      const Vec2 q(sx->second[j], sy->second[j]);
      if (q.allFinite()) p = q;
    } else if (ship) {
      p = ship_position(*ship, r.t);
    }
    if (p) {
      const Vec2& y = track.observations[j];
      r.d_ship = (y - *p).norm();
      if (!(r.d_ship > 0.0)) throw InputError(track.id + ": whale and ship positions coincide at t = " +
                                              io::format_double(r.t));
      r.line_of_sight = geometry::line_of_sight(domain, y, *p);
      r.e_ship = r.line_of_sight ? 1.0 / r.d_ship : 0.0;
    }
    rows.push_back(r);
  }
  return rows;
}

void attach_exposure(Track& track, const std::vector<ExposureRow>& rows) {
  if (rows.size() != track.size()) throw InputError("exposure rows do not match track " + track.id);
  auto& e = track.covariates["E_ship"];
  e.resize(track.size());
  for (std::size_t j = 0; j < rows.size(); ++j) e[j] = rows[j].e_ship;
}

void write_exposure(const std::string& path, const std::vector<ExposureRow>& rows) {
  io::CsvTable t;
  t.header = {"id", "t", "d_ship", "e_ship", "line_of_sight"};
  for (const auto& r : rows) {
    t.rows.push_back({r.id, io::format_double(r.t), std::isfinite(r.d_ship) ? io::format_double(r.d_ship) : "NA",
                      io::format_double(r.e_ship), r.line_of_sight ? "1" : "0"});
  }
  io::write_csv(path, t);
}

IngestResult ingest(const Dataset& raw, const geometry::PolygonDomain* domain, const ShipTrack* ship,
                    const IngestOptions& opts) {
  if (!(opts.drop_hours >= 0.0)) throw InputError("drop_hours must be >= 0");
  IngestResult out;
  if (raw.empty()) throw InputError("no tracks to ingest");
  out.epoch = std::numeric_limits<double>::infinity();
  for (const auto& tr : raw) {
    tr.validate();
    if (!tr.times.empty()) out.epoch = std::min(out.epoch, tr.times.front());
    const bool columns = tr.covariates.count("ship_x") && tr.covariates.count("ship_y");
    out.has_ship = out.has_ship || columns || ship != nullptr;
  }
  if (!std::isfinite(out.epoch)) throw InputError("no observations to ingest");
  if (out.has_ship && !domain) throw InputError("ship exposure needs a domain for line of sight");

  for (const auto& tr : raw) {
    IngestCounts c;
    c.id = tr.id;
    c.raw = tr.size();
    std::vector<std::size_t> late;
    for (std::size_t j = 0; j < tr.size(); ++j) {
      if (tr.times[j] >= tr.times.front() + opts.drop_hours) late.push_back(j);
    }
    c.dropped_initial = tr.size() - late.size();
    Track clean = speed_filter(subset(tr, late), opts.max_speed, &c.dropped_speed);

    std::size_t split = clean.size();
    if (out.has_ship) {
      auto rows = compute_exposure(clean, ship, *domain);
      for (std::size_t j = 0; j < rows.size(); ++j) {
        if (rows[j].line_of_sight) {
          split = j;
          break;
        }
      }
      attach_exposure(clean, rows);
      for (auto& r : rows) r.t -= out.epoch;
      out.exposure.insert(out.exposure.end(), rows.begin(), rows.end());
    } else {
      clean.covariates["E_ship"].assign(clean.size(), 0.0);
    }
    for (double& t : clean.times) t -= out.epoch;
    Track pre = subset(clean, range(0, split));
    Track post = subset(clean, range(split, clean.size()));
    c.pre = pre.size();
    c.post = post.size();
    if (!pre.times.empty()) out.pre.push_back(std::move(pre));
    if (!post.times.empty()) out.post.push_back(std::move(post));
    out.counts.push_back(c);
  }
  return out;
}

// ------------------------------------------------------------ covariates

std::string to_string(CovariateMode m) {
  switch (m) {
    case CovariateMode::truth:
      return "true";
    case CovariateMode::observed:
      return "observed";
    case CovariateMode::smoothed:
      return "smoothed";
  }
  return "?";
}

CovariateMode covariate_mode_from_string(const std::string& s) {
  if (s == "true") return CovariateMode::truth;
  if (s == "observed") return CovariateMode::observed;
  if (s == "smoothed") return CovariateMode::smoothed;
  throw InputError("covariate source must be true, observed or smoothed, got '" + s + "'");
}

void attach_grids(Dataset& data, const geometry::PolygonDomain& domain, double sub_step,
                  const geometry::SmoothingOptions& smoothing, CovariateMode mode) {
  if (mode == CovariateMode::truth) throw InputError("true covariates need the simulated states");
  const auto source =
      mode == CovariateMode::observed ? geometry::CovariateSource::observed : geometry::CovariateSource::smoothed;
  for (auto& tr : data) tr.grids = geometry::interpolate_covariates(tr, domain, sub_step, smoothing, source);
}

std::vector<IntervalGrid> true_grids(const crcvm::Trajectory& fine, const std::vector<double>& obs_times,
                                     const geometry::PolygonDomain& domain) {
  // index of each observation time on the fine grid
  std::vector<std::size_t> idx;
  std::size_t i = 0;
  for (double t : obs_times) {
    while (i < fine.size() && fine.times[i] < t - 1e-9) ++i;
    if (i == fine.size() || std::abs(fine.times[i] - t) > 1e-9) {
      throw InputError("observation time " + io::format_double(t) + " is not on the simulation grid");
    }
    idx.push_back(i);
  }
  std::vector<IntervalGrid> grids;
  for (std::size_t j = 0; j + 1 < idx.size(); ++j) {
    IntervalGrid g;
    for (std::size_t k = idx[j]; k <= idx[j + 1]; ++k) {
      const auto& s = fine.states[k];
      const auto m = geometry::boundary_metrics(domain, s.head<2>(), s.tail<2>());
      g.times.push_back(fine.times[k]);
      g.d_shore.push_back(m.d_shore);
      g.theta.push_back(m.theta);
    }
    g.times.front() = obs_times[j];
    g.times.back() = obs_times[j + 1];
    grids.push_back(std::move(g));
  }
  return grids;
}

// -------------------------------------------------------------- simulate

std::string to_string(SimModel m) {
  switch (m) {
    case SimModel::crcvm:
      return "crcvm";
    case SimModel::cvm:
      return "cvm";
    case SimModel::reflected:
      return "reflected";
  }
  return "?";
}

SimModel sim_model_from_string(const std::string& s) {
  if (s == "crcvm") return SimModel::crcvm;
  if (s == "cvm") return SimModel::cvm;
  if (s == "reflected") return SimModel::reflected;
  throw InputError("simulation model must be crcvm, cvm or reflected, got '" + s + "'");
}

void SimulateConfig::validate() const {
  if (batches == 0 || individuals == 0) throw InputError("batches and individuals must be >= 1");
  if (!(tau0 > 0.0 && nu0 > 0.0 && std::isfinite(tau0) && std::isfinite(nu0))) {
    throw InputError("tau0 and nu0 must be positive");
  }
  if (!(sigma_tau >= 0.0 && sigma_nu >= 0.0)) throw InputError("sigma_tau and sigma_nu must be >= 0");
  if (!(fine_step > 0.0 && duration > 0.0 && obs_interval > 0.0)) {
    throw InputError("fine_step, duration and obs_interval must be positive");
  }
  const double r = obs_interval / fine_step;
  if (r < 1.0 - 1e-9 || std::abs(r - std::round(r)) > 1e-6 * r) {
    throw InputError("obs_interval must be a whole multiple of fine_step");
  }
  if (!(sigma_obs >= 0.0)) throw InputError("sigma_obs must be >= 0");
  if (!(start_min >= 0.0 && start_max > start_min)) throw InputError("need 0 <= start_min < start_max");
  omega.validate();
}

std::size_t SimulateConfig::stride() const {
  return static_cast<std::size_t>(std::llround(obs_interval / fine_step));
}

SimulatedBatch simulate_batch(const geometry::PolygonDomain& domain, const SimulateConfig& cfg,
                              std::size_t index) {
  cfg.validate();
  SimulatedBatch batch;
  batch.index = index;
  const auto n_steps = static_cast<std::size_t>(std::llround(cfg.duration / cfg.fine_step));
  for (std::size_t i = 0; i < cfg.individuals; ++i) {
    Rng rng = make_rng(cfg.seed, (static_cast<std::uint64_t>(index) << 20) + i);
    std::normal_distribution<double> n01;
    SimulatedIndividual ind;
    ind.id = "ind" + padded(i + 1, 2);
    const double z_tau = n01(rng);
    const double z_nu = n01(rng);
    ind.tau = cfg.tau0 * std::exp(cfg.sigma_tau * z_tau);
    ind.nu = cfg.nu0 * std::exp(cfg.sigma_nu * z_nu);

    crcvm::SimulationConfig sc;
    sc.dt = cfg.fine_step;
    sc.n_steps = n_steps;
    sc.initial_position = crcvm::random_start(domain, cfg.start_min, cfg.start_max, rng);
    sc.initial_velocity = Vec2::Zero();
    sc.land_policy = cfg.land_policy;
    switch (cfg.model) {
      case SimModel::crcvm:
        ind.fine = crcvm::simulate_crcvm(domain, ind.tau, ind.nu, cfg.omega, sc, rng);
        break;
      case SimModel::reflected:
        ind.fine = crcvm::simulate_reflected_cvm(domain, ind.tau, ind.nu, sc, rng);
        break;
      case SimModel::cvm:
        ind.fine = crcvm::simulate_rcvm(ind.tau, ind.nu, 0.0, sc, rng);
        for (std::size_t k = 0; k < ind.fine.size(); ++k) {
          if (!geometry::contains(domain, ind.fine.states[k].head<2>())) ind.fine.land_hit_steps.push_back(k);
        }
        break;
    }
    ind.sampled = crcvm::subsample(ind.fine, cfg.stride());
    ind.observations = crcvm::add_noise(ind.sampled, cfg.sigma_obs, rng, ind.id);
    batch.hit_land = batch.hit_land || ind.fine.hit_land();
    batch.individuals.push_back(std::move(ind));
  }
  return batch;
}

namespace {

json simulate_config_json(const SimulateConfig& c) {
  return json{{"batches", c.batches},
              {"individuals", c.individuals},
              {"model", to_string(c.model)},
              {"tau0", c.tau0},
              {"nu0", c.nu0},
              {"sigma_tau", c.sigma_tau},
              {"sigma_nu", c.sigma_nu},
              {"omega", inference::to_json(c.omega)},
              {"fine_step", c.fine_step},
              {"duration", c.duration},
              {"obs_interval", c.obs_interval},
              {"sigma_obs", c.sigma_obs},
              {"start_min", c.start_min},
              {"start_max", c.start_max},
              {"land_policy", c.land_policy == crcvm::LandPolicy::abort ? "abort" : "record"},
              {"discard_land_batches", c.discard_land_batches},
              {"seed", c.seed}};
}

}  // namespace

json run_simulate(const geometry::PolygonDomain& domain, const SimulateConfig& cfg, const std::string& out_dir,
                  unsigned threads) {
  cfg.validate();
  ensure_dir(out_dir);
  std::vector<json> entries(cfg.batches);
  parallel_for(cfg.batches, threads, [&](std::size_t b) {
    const SimulatedBatch batch = simulate_batch(domain, cfg, b);
    json e{{"index", b}, {"hit_land", batch.hit_land}};
    std::size_t land_tracks = 0;
    for (const auto& ind : batch.individuals) land_tracks += ind.fine.hit_land() ? 1 : 0;
    e["land_tracks"] = land_tracks;
    const bool discard = batch.hit_land && cfg.discard_land_batches;
    e["discarded"] = discard;
    if (!discard) {
      const std::string stem = "batch_" + padded(b + 1, 3);
      json files = json::array();
      Dataset obs;
      for (const auto& ind : batch.individuals) {
        const std::string name = stem + "_" + ind.id + ".csv";
        crcvm::write_trajectories((fs::path(out_dir) / name).string(), {{ind.id, &ind.fine}});
        files.push_back(name);
        obs.push_back(ind.observations);
      }
      const std::string tracks = stem + "_tracks.csv";
      io::write_tracks((fs::path(out_dir) / tracks).string(), obs);
      e["trajectories"] = files;
      e["tracks"] = tracks;
      json params = json::array();
      for (const auto& ind : batch.individuals) params.push_back({{"id", ind.id}, {"tau", ind.tau}, {"nu", ind.nu}});
      e["individuals"] = params;
    }
    entries[b] = std::move(e);
  });
  json manifest{{"time_unit", "hours"}, {"epoch", 0.0}, {"config", simulate_config_json(cfg)}};
  std::size_t land = 0, discarded = 0;
  for (const auto& e : entries) {
    land += e["hit_land"].get<bool>() ? 1 : 0;
    discarded += e["discarded"].get<bool>() ? 1 : 0;
  }
  manifest["batches"] = entries;
  manifest["land_batches"] = land;
  manifest["discarded_batches"] = discarded;
  write_json((fs::path(out_dir) / "manifest.json").string(), manifest);
  return manifest;
}

// ----------------------------------------------------------------- study

namespace {

Dataset batch_dataset(const SimulatedBatch& batch, const geometry::PolygonDomain& domain, const StudyConfig& cfg,
                      const StudyScenario& sc) {
  Dataset data;
  for (const auto& ind : batch.individuals) data.push_back(ind.observations);
  if (!sc.crcvm) return data;
  if (sc.covariates == CovariateMode::truth) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      data[i].grids = true_grids(batch.individuals[i].fine, data[i].times, domain);
    }
  } else {
    attach_grids(data, domain, cfg.sub_step, cfg.smoothing, sc.covariates);
  }
  return data;
}

std::vector<double> study_truth(const StudyConfig& cfg) {
  return {cfg.sim.tau0, cfg.sim.nu0, cfg.sim.sigma_tau, cfg.sim.sigma_nu};
}

}  // namespace

StudyResult run_study(const geometry::PolygonDomain& domain, const StudyConfig& cfg,
                      const std::function<void(const StudyFit&)>& progress) {
  cfg.sim.validate();
  if (cfg.scenarios.empty()) throw InputError("study needs at least one scenario");
  if (!(cfg.sim.sigma_obs > 0.0)) throw InputError("study needs sigma_obs > 0");
  StudyResult result;
  const std::size_t max_attempts = cfg.max_attempts ? cfg.max_attempts : 3 * cfg.sim.batches;

  // simulation is cheap: draw batches in index order until enough are land-free
  SimulateConfig sim = cfg.sim;
  sim.land_policy = crcvm::LandPolicy::abort;
  std::vector<SimulatedBatch> batches;
  for (std::size_t b = 0; b < max_attempts && batches.size() < sim.batches; ++b) {
    SimulatedBatch batch = simulate_batch(domain, sim, b);
    if (batch.hit_land) {
      ++result.batches_discarded;
    } else {
      batches.push_back(std::move(batch));
    }
  }
  result.batches_used = batches.size();

  const std::size_t ns = cfg.scenarios.size();
  result.fits.resize(batches.size() * ns);
  std::mutex mu;
  parallel_for(result.fits.size(), cfg.threads, [&](std::size_t k) {
    const SimulatedBatch& batch = batches[k / ns];
    const StudyScenario& sc = cfg.scenarios[k % ns];
    StudyFit f;
    f.batch = batch.index;
    f.scenario = sc.name;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      const Dataset data = batch_dataset(batch, domain, cfg, sc);
      inference::ParameterModel model;
      model.sigma_obs = cfg.sim.sigma_obs;
      if (sc.crcvm) model.omega = cfg.sim.omega;
      const auto init = cfg.init ? *cfg.init : inference::default_init(model);
      const auto r = inference::fit(data, model, init, cfg.fit);
      f.status = r.status;
      for (const auto& e : r.estimates) {
        f.values.push_back(e.value);
        f.lo.push_back(e.lo);
        f.hi.push_back(e.hi);
      }
      f.ok = std::all_of(f.values.begin(), f.values.end(), [](double v) { return std::isfinite(v); });
      if (!f.ok) f.error = "non-finite estimate";
    } catch (const NumericalError& e) {
      f.status = "failed";
      f.error = e.what();
    }
    f.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::lock_guard<std::mutex> lock(mu);
    result.fits[k] = f;
    if (progress) progress(f);
  });

  const auto truth = study_truth(cfg);
  for (const auto& sc : cfg.scenarios) {
    ScenarioSummary s;
    s.name = sc.name;
    std::vector<std::vector<double>> vals(4);
    std::vector<double> covered(4, 0.0);
    for (const auto& f : result.fits) {
      if (f.scenario != sc.name) continue;
      if (!f.ok) {
        ++s.failures;
        continue;
      }
      ++s.fits;
      for (std::size_t p = 0; p < 4; ++p) {
        vals[p].push_back(f.values[p]);
        if (f.lo[p] <= truth[p] && truth[p] <= f.hi[p]) covered[p] += 1.0;
      }
    }
    for (std::size_t p = 0; p < 4; ++p) {
      s.mean.push_back(mean(vals[p]));
      s.q025.push_back(quantile(vals[p], 0.025));
      s.q975.push_back(quantile(vals[p], 0.975));
      s.coverage.push_back(s.fits ? covered[p] / static_cast<double>(s.fits) : kNaN);
    }
    result.summaries.push_back(std::move(s));
  }
  return result;
}

namespace {

const std::vector<std::string> kStudyParams = {"tau0", "nu0", "sigma_tau", "sigma_nu"};

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json to_json(const StudyResult& r, const StudyConfig& cfg) {
  const auto truth = study_truth(cfg);
  json j{{"batches_used", r.batches_used}, {"batches_discarded", r.batches_discarded},
         {"simulation", simulate_config_json(cfg.sim)}};
  json scen = json::array();
  for (std::size_t s = 0; s < r.summaries.size(); ++s) {
    const auto& sm = r.summaries[s];
    const auto& sc = cfg.scenarios[s];
    json params = json::object();
    for (std::size_t p = 0; p < 4; ++p) {
      params[kStudyParams[p]] = {{"truth", truth[p]},
                                 {"mean", num(sm.mean[p])},
                                 {"q025", num(sm.q025[p])},
                                 {"q975", num(sm.q975[p])},
                                 {"coverage", num(sm.coverage[p])}};
    }
    scen.push_back({{"name", sm.name},
                    {"model", sc.crcvm ? "crcvm" : "cvm"},
                    {"covariates", to_string(sc.covariates)},
                    {"fits", sm.fits},
                    {"failures", sm.failures},
                    {"parameters", params}});
  }
  j["scenarios"] = scen;
  json fits = json::array();
  for (const auto& f : r.fits) {
    json e{{"batch", f.batch}, {"scenario", f.scenario}, {"ok", f.ok}, {"status", f.status},
           {"seconds", f.seconds}};
    if (!f.error.empty()) e["error"] = f.error;
    for (std::size_t p = 0; p < f.values.size(); ++p) {
      e[kStudyParams[p]] = {num(f.values[p]), num(f.lo[p]), num(f.hi[p])};
    }
    fits.push_back(e);
  }
  j["fits"] = fits;
  return j;
}

void write_study_table(const std::string& path, const StudyResult& r, const StudyConfig& cfg) {
  const auto truth = study_truth(cfg);
  io::CsvTable t;
  t.header = {"scenario", "parameter", "truth", "mean", "q025", "q975", "coverage", "fits", "failures"};
  auto f = [](double v) { return std::isfinite(v) ? io::format_double(v) : std::string("NA"); };
  for (const auto& s : r.summaries) {
    for (std::size_t p = 0; p < 4; ++p) {
      t.rows.push_back({s.name, kStudyParams[p], f(truth[p]), f(s.mean[p]), f(s.q025[p]), f(s.q975[p]),
                        f(s.coverage[p]), std::to_string(s.fits), std::to_string(s.failures)});
    }
  }
  io::write_csv(path, t);
}

// ----------------------------------------------------------------- check

void observation_metrics(const Track& track, const geometry::PolygonDomain& domain, std::vector<double>& d,
                         std::vector<double>& abs_theta) {
  const std::size_t n = track.size();
  if (n < 2) throw InputError("track " + track.id + " needs at least 2 observations");
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t a = j + 1 < n ? j : n - 2;
    const Vec2 v = (track.observations[a + 1] - track.observations[a]) / (track.times[a + 1] - track.times[a]);
    const auto m = geometry::boundary_metrics(domain, track.observations[j], v);
    d.push_back(m.d_shore);
    abs_theta.push_back(std::abs(m.theta));
  }
}

double ks_statistic(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw InputError("KS statistic needs two non-empty samples");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

double ks_pvalue(double d, std::size_t n, std::size_t m) {
  const double ne = static_cast<double>(n) * static_cast<double>(m) / static_cast<double>(n + m);
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  if (lambda < 1e-3) return 1.0;
  double q = 0.0, sign = 1.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = sign * std::exp(-2.0 * k * k * lambda * lambda);
    q += term;
    if (std::abs(term) < 1e-16) break;
    sign = -sign;
  }
  return std::clamp(2.0 * q, 0.0, 1.0);
}

namespace {

void histogram(const std::string& variable, const std::string& source, const std::vector<double>& x, double lo,
               double hi, std::size_t bins, std::vector<DensityRow>& out) {
  const double w = (hi - lo) / static_cast<double>(bins);
  std::vector<double> counts(bins, 0.0);
  for (double v : x) {
    if (v < lo || v > hi) continue;
    const auto b = std::min(bins - 1, static_cast<std::size_t>((v - lo) / w));
    counts[b] += 1.0;
  }
  // normalized by the full sample so mass outside [lo, hi] shows up as missing
  const double n = static_cast<double>(x.size());
  for (std::size_t b = 0; b < bins; ++b) {
    out.push_back({variable, source, lo + static_cast<double>(b) * w, lo + static_cast<double>(b + 1) * w,
                   n > 0 ? counts[b] / (n * w) : 0.0});
  }
}

Vec2 into_water(const geometry::PolygonDomain& domain, const Vec2& y) {
  if (geometry::contains(domain, y)) return y;
  const auto np = geometry::nearest_boundary_point(domain, y);
  const Vec2 dir = (np.point - y).normalized();
  for (double eps : {1e-3, 1e-2, 5e-2}) {
    const Vec2 p = np.point + eps * dir;
    if (geometry::contains(domain, p)) return p;
  }
  throw InputError("cannot place a start position in the water near (" + io::format_double(y.x()) + ", " +
                   io::format_double(y.y()) + ")");
}

}  // namespace

CheckResult run_check(const inference::FitResult& fit, const geometry::PolygonDomain& domain, const Dataset& data,
                      const CheckOptions& opts) {
  if (fit.model.kind != inference::ModelKind::baseline) throw InputError("model check needs a baseline fit");
  if (opts.replicates == 0 || opts.bins == 0) throw InputError("replicates and bins must be >= 1");
  if (!(opts.step > 0.0) || !(opts.sigma_obs >= 0.0)) throw InputError("check needs step > 0 and sigma_obs >= 0");
  if (data.empty()) throw InputError("model check needs observed tracks");
  const auto pop = inference::population(fit.theta_hat, fit.model);
  CheckResult res;
  for (const auto& tr : data) {
    tr.validate();
    observation_metrics(tr, domain, res.observed_d, res.observed_theta);
  }

  for (std::size_t r = 0; r < opts.replicates; ++r) {
    for (std::size_t k = 0; k < data.size(); ++k) {
      const Track& tr = data[k];
      inference::Vec2d b = inference::Vec2d::Zero();
      for (std::size_t i = 0; i < fit.individual_ids.size(); ++i) {
        if (fit.individual_ids[i] == tr.id && i < fit.random_effects.size()) b = fit.random_effects[i];
      }
      const double tau = std::exp(pop.log_tau0 + b[0]);
      const double nu = std::exp(pop.log_nu0 + b[1]);
      Rng rng = make_rng(opts.seed, (static_cast<std::uint64_t>(r) << 32) + k);
      std::normal_distribution<double> noise(0.0, opts.sigma_obs);
      const Vec2 x0 = into_water(domain, tr.observations[0]);
      Track sim;
      // constrained fits: trajectories reaching land are redrawn, as in the
      // simulation protocol. Unconstrained fits run free and are counted.
      const bool redraw = fit.model.omega.has_value();
      for (int attempt = 0;; ++attempt) {
        if (attempt == kMaxLandRedraws) {
          throw NumericalError("model check: track " + tr.id + " reached land in " +
                               std::to_string(kMaxLandRedraws) + " consecutive draws");
        }
        kernel::Vec4 s;
        s.head<2>() = x0;
        s.tail<2>() = Vec2::Zero();
        sim = Track{};
        sim.id = tr.id;
        bool land = false;
        for (std::size_t j = 0; j < tr.size() && !(land && redraw); ++j) {
          if (j > 0) {
            const double len = tr.times[j] - tr.times[j - 1];
            const auto steps = static_cast<std::size_t>(std::max(1.0, std::ceil(len / opts.step - 1e-9)));
            const double h = len / static_cast<double>(steps);
            for (std::size_t q = 0; q < steps && !(land && redraw); ++q) {
              double omega = 0.0;
              if (fit.model.omega) {
                const auto m = geometry::boundary_metrics(domain, s.head<2>(), s.tail<2>());
                omega = crcvm::omega_fn(*fit.model.omega, m.theta, m.d_shore);
              }
              const auto kern = kernel::transition_kernel(kernel::RcvmParams{tau, nu, omega}, h);
              s = kernel::sample_transition(kern, s, Vec2::Zero(), rng);
              land = land || !geometry::contains(domain, s.head<2>());
            }
          }
          const double nx = noise(rng);
          const double ny = noise(rng);
          sim.times.push_back(tr.times[j]);
          sim.observations.push_back(s.head<2>() + Vec2(nx, ny));
        }
        if (!land) break;
        if (!redraw) {
          ++res.land_tracks;
          break;
        }
        ++res.land_redraws;
      }
      observation_metrics(sim, domain, res.simulated_d, res.simulated_theta);
    }
  }

  const double d_hi = *std::max_element(res.observed_d.begin(), res.observed_d.end()) + 3.0;
  histogram("d_shore", "observed", res.observed_d, 0.0, d_hi, opts.bins, res.rows);
  histogram("d_shore", "simulated", res.simulated_d, 0.0, d_hi, opts.bins, res.rows);
  histogram("abs_theta", "observed", res.observed_theta, 0.0, std::numbers::pi, opts.bins, res.rows);
  histogram("abs_theta", "simulated", res.simulated_theta, 0.0, std::numbers::pi, opts.bins, res.rows);
  res.ks_d = ks_statistic(res.observed_d, res.simulated_d);
  res.ks_d_p = ks_pvalue(res.ks_d, res.observed_d.size(), res.simulated_d.size());
  res.ks_theta = ks_statistic(res.observed_theta, res.simulated_theta);
  res.ks_theta_p = ks_pvalue(res.ks_theta, res.observed_theta.size(), res.simulated_theta.size());
  return res;
}

void write_densities(const std::string& path, const std::vector<DensityRow>& rows) {
  io::CsvTable t;
  t.header = {"variable", "source", "bin_left", "bin_right", "density"};
  for (const auto& r : rows) {
    t.rows.push_back({r.variable, r.source, io::format_double(r.bin_left), io::format_double(r.bin_right),
                      io::format_double(r.density)});
  }
  io::write_csv(path, t);
}

// -------------------------------------------------------------- recovery

std::vector<RecoveryTableRow> recovery_table(const AlphaInterval& alpha_tau, const AlphaInterval& alpha_nu,
                                             const std::vector<double>& ps) {
  if (ps.empty()) throw InputError("recovery needs at least one p");
  std::vector<RecoveryTableRow> rows;
  for (double p : ps) {
    rows.push_back({"tau", inference::recovery_interval(alpha_tau.estimate, alpha_tau.lo, alpha_tau.hi, p,
                                                        inference::RecoveryKind::tau)});
  }
  for (double p : ps) {
    rows.push_back({"nu", inference::recovery_interval(alpha_nu.estimate, alpha_nu.lo, alpha_nu.hi, p,
                                                       inference::RecoveryKind::nu)});
  }
  return rows;
}

void alphas_from_json(const json& j, AlphaInterval& alpha_tau, AlphaInterval& alpha_nu) {
  try {
    if (j.contains("mean") && j.contains("q025") && j.contains("q975")) {
      alpha_tau = {j.at("mean").at(0).get<double>(), j.at("q025").at(0).get<double>(),
                   j.at("q975").at(0).get<double>()};
      alpha_nu = {j.at("mean").at(1).get<double>(), j.at("q025").at(1).get<double>(),
                  j.at("q975").at(1).get<double>()};
      return;
    }
    if (j.contains("estimates")) {
      bool have_tau = false, have_nu = false;
      for (const auto& e : j.at("estimates")) {
        const auto name = e.at("name").get<std::string>();
        const AlphaInterval a{e.at("value").get<double>(), e.at("lo").get<double>(), e.at("hi").get<double>()};
        if (name == "alpha_tau") {
          alpha_tau = a;
          have_tau = true;
        } else if (name == "alpha_nu") {
          alpha_nu = a;
          have_nu = true;
        }
      }
      if (have_tau && have_nu) return;
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed response fit JSON: ") + e.what());
  }
  throw InputError("JSON holds no response-model alpha estimates with intervals");
}

void write_recovery_table(const std::string& path, const std::vector<RecoveryTableRow>& rows) {
  io::CsvTable t;
  t.header = {"parameter", "p", "distance_km", "lo_km", "hi_km", "sign_ok"};
  for (const auto& r : rows) {
    t.rows.push_back({r.parameter, io::format_double(r.row.p), io::format_double(r.row.estimate),
                      io::format_double(r.row.lo), io::format_double(r.row.hi), r.row.sign_ok ? "1" : "0"});
  }
  io::write_csv(path, t);
}

// ---------------------------------------------------------------- config

namespace {

SimulateConfig simulate_from_json(const json& j, SimulateConfig c) {
  reject_unknown(j, "simulate",
                 {"batches", "individuals", "model", "tau0", "nu0", "sigma_tau", "sigma_nu", "omega", "fine_step",
                  "duration", "obs_interval", "sigma_obs", "start_min", "start_max", "land_policy",
                  "discard_land_batches", "seed"});
  read_opt(j, "batches", c.batches);
  read_opt(j, "individuals", c.individuals);
  if (j.contains("model")) c.model = sim_model_from_string(j.at("model").get<std::string>());
  read_opt(j, "tau0", c.tau0);
  read_opt(j, "nu0", c.nu0);
  read_opt(j, "sigma_tau", c.sigma_tau);
  read_opt(j, "sigma_nu", c.sigma_nu);
  if (j.contains("omega")) c.omega = inference::omega_from_json(j.at("omega"));
  read_opt(j, "fine_step", c.fine_step);
  read_opt(j, "duration", c.duration);
  read_opt(j, "obs_interval", c.obs_interval);
  read_opt(j, "sigma_obs", c.sigma_obs);
  read_opt(j, "start_min", c.start_min);
  read_opt(j, "start_max", c.start_max);
  if (j.contains("land_policy")) {
    const auto s = j.at("land_policy").get<std::string>();
    if (s == "record") {
      c.land_policy = crcvm::LandPolicy::record;
    } else if (s == "abort") {
      c.land_policy = crcvm::LandPolicy::abort;
    } else {
      throw InputError("land_policy must be record or abort");
    }
  }
  read_opt(j, "discard_land_batches", c.discard_land_batches);
  read_opt(j, "seed", c.seed);
  return c;
}

}  // namespace

RunConfig config_from_json(const json& j) {
  reject_unknown(j, "config",
                 {"domain", "tracks", "ship", "out_dir", "baseline", "sigma_obs", "sub_step", "smoothing",
                  "covariates", "model", "omega", "init", "seed", "threads", "ingest", "simulate", "study",
                  "response", "check", "optimizer", "inner"});
  RunConfig c;
  read_opt(j, "domain", c.domain);
  read_opt(j, "tracks", c.tracks);
  read_opt(j, "ship", c.ship);
  read_opt(j, "out_dir", c.out_dir);
  read_opt(j, "baseline", c.baseline);
  read_opt(j, "sigma_obs", c.sigma_obs);
  read_opt(j, "sub_step", c.sub_step);
  read_opt(j, "seed", c.seed);
  read_opt(j, "threads", c.threads);
  if (j.contains("smoothing")) {
    const auto& s = j.at("smoothing");
    reject_unknown(s, "smoothing", {"grid_step", "penalty"});
    read_opt(s, "grid_step", c.smoothing.grid_step);
    read_opt(s, "penalty", c.smoothing.penalty);
  }
  if (j.contains("covariates")) c.covariates = covariate_mode_from_string(j.at("covariates").get<std::string>());
  if (j.contains("model")) {
    const auto m = j.at("model").get<std::string>();
    if (m != "crcvm" && m != "cvm") throw InputError("model must be crcvm or cvm");
    c.crcvm = m == "crcvm";
  }
  if (j.contains("omega")) c.omega = inference::omega_from_json(j.at("omega"));
  if (j.contains("init")) {
    const auto& s = j.at("init");
    reject_unknown(s, "init", {"tau0", "nu0", "sigma_tau", "sigma_nu"});
    double v[4] = {1.0, 1.0, 0.5, 0.5};
    read_opt(s, "tau0", v[0]);
    read_opt(s, "nu0", v[1]);
    read_opt(s, "sigma_tau", v[2]);
    read_opt(s, "sigma_nu", v[3]);
    inference::ThetaVector th(4);
    for (int i = 0; i < 4; ++i) {
      if (!(v[i] > 0.0)) throw InputError("init values must be positive");
      th[i] = std::log(v[i]);
    }
    c.init = th;
  }
  if (j.contains("ingest")) {
    const auto& s = j.at("ingest");
    reject_unknown(s, "ingest", {"drop_hours", "max_speed"});
    read_opt(s, "drop_hours", c.ingest.drop_hours);
    read_opt(s, "max_speed", c.ingest.max_speed);
  }
  SimulateConfig sim;
  sim.sigma_obs = c.sigma_obs;
  sim.seed = c.seed;
  sim.omega = c.omega;
  c.simulate = j.contains("simulate") ? simulate_from_json(j.at("simulate"), sim) : sim;
  if (j.contains("study")) {
    const auto& s = j.at("study");
    reject_unknown(s, "study", {"scenarios", "max_attempts"});
    read_opt(s, "max_attempts", c.study_max_attempts);
    if (s.contains("scenarios")) {
      for (const auto& e : s.at("scenarios")) {
        reject_unknown(e, "study.scenarios[]", {"name", "model", "covariates"});
        StudyScenario sc;
        const auto m = e.value("model", std::string("crcvm"));
        if (m != "crcvm" && m != "cvm") throw InputError("scenario model must be crcvm or cvm");
        sc.crcvm = m == "crcvm";
        sc.covariates = covariate_mode_from_string(e.value("covariates", std::string("true")));
        sc.name = e.value("name", m + "_" + to_string(sc.covariates));
        c.scenarios.push_back(sc);
      }
    }
  }
  if (j.contains("response")) {
    const auto& s = j.at("response");
    reject_unknown(s, "response", {"draws", "exposure_channel"});
    read_opt(s, "draws", c.draws);
    read_opt(s, "exposure_channel", c.exposure_channel);
  }
  c.check.sigma_obs = c.sigma_obs;
  c.check.seed = c.seed;
  if (j.contains("check")) {
    const auto& s = j.at("check");
    reject_unknown(s, "check", {"replicates", "step", "bins"});
    read_opt(s, "replicates", c.check.replicates);
    read_opt(s, "step", c.check.step);
    read_opt(s, "bins", c.check.bins);
  }
  if (j.contains("optimizer")) {
    const auto& s = j.at("optimizer");
    reject_unknown(s, "optimizer", {"grad_tol", "max_iter", "rel_step", "stall_tol"});
    read_opt(s, "grad_tol", c.optimizer.grad_tol);
    read_opt(s, "max_iter", c.optimizer.max_iter);
    read_opt(s, "rel_step", c.optimizer.rel_step);
    read_opt(s, "stall_tol", c.optimizer.stall_tol);
  }
  if (j.contains("inner")) {
    const auto& s = j.at("inner");
    reject_unknown(s, "inner", {"fd_step"});
    read_opt(s, "fd_step", c.inner_fd_step);
  }
  if (!(c.sigma_obs > 0.0 && c.sub_step > 0.0 && c.smoothing.grid_step > 0.0 && c.smoothing.penalty > 0.0)) {
    throw InputError("sigma_obs, sub_step, smoothing.grid_step and smoothing.penalty must be positive");
  }
  return c;
}

RunConfig load_config(const std::string& path) { return config_from_json(read_json(path)); }

inference::ParameterModel baseline_model(const RunConfig& cfg) {
  inference::ParameterModel m;
  m.kind = inference::ModelKind::baseline;
  if (cfg.crcvm) m.omega = cfg.omega;
  m.sigma_obs = cfg.sigma_obs;
  return m;
}

inference::FitOptions fit_options(const RunConfig& cfg) {
  inference::FitOptions o;
  o.outer = cfg.optimizer;
  o.inner.fd_step = cfg.inner_fd_step;
  return o;
}

StudyConfig study_config(const RunConfig& cfg) {
  StudyConfig s;
  s.sim = cfg.simulate;
  s.scenarios = cfg.scenarios;
  if (s.scenarios.empty()) {
    s.scenarios = {{"crcvm_true", true, CovariateMode::truth}, {"cvm", false, CovariateMode::truth}};
  }
  s.sub_step = cfg.sub_step;
  s.smoothing = cfg.smoothing;
  s.fit = fit_options(cfg);
  s.init = cfg.init;
  s.max_attempts = cfg.study_max_attempts;
  s.threads = cfg.threads;
  return s;
}

std::string summary_table(const inference::FitResult& fit) {
  std::ostringstream os;
  char line[160];
  os << "model: " << inference::to_string(fit.model.kind) << (fit.model.omega ? " (CRCVM)" : " (CVM)") << "\n";
  std::snprintf(line, sizeof line, "status: %s, iterations %d, log-likelihood %.4f, Hessian %s\n",
                fit.status.c_str(), fit.iterations, fit.loglik, fit.hessian_pd ? "positive definite" : "NOT PD");
  os << line;
  std::snprintf(line, sizeof line, "%-10s %12s %12s %12s\n", "parameter", "estimate", "2.5%", "97.5%");
  os << line;
  for (const auto& e : fit.estimates) {
    std::snprintf(line, sizeof line, "%-10s %12.4f %12.4f %12.4f%s\n", e.name.c_str(), e.value, e.lo, e.hi,
                  e.at_boundary ? "  (boundary)" : "");
    os << line;
  }
  for (const auto& w : fit.warnings) os << "warning: " << w << "\n";
  return os.str();
}

json to_json(const inference::ResponseSummary& s, const inference::ParameterModel& model) {
  json draws = json::array();
  for (const auto& d : s.draws) {
    json e{{"draw", d.draw}, {"ok", d.ok}, {"status", d.status}};
    if (d.ok) {
      e["alpha_tau"] = d.alpha[0];
      e["alpha_nu"] = d.alpha[1];
    }
    if (!d.reason.empty()) e["reason"] = d.reason;
    draws.push_back(e);
  }
  return json{{"model", "response"},
              {"parameters", model.names()},
              {"crcvm", model.omega.has_value()},
              {"exposure_channel", model.exposure_channel},
              {"mean", {num(s.mean[0]), num(s.mean[1])}},
              {"q025", {num(s.q025[0]), num(s.q025[1])}},
              {"q975", {num(s.q975[0]), num(s.q975[1])}},
              {"draws_total", s.draws.size()},
              {"failures", s.failures},
              {"unidentifiable", s.unidentifiable},
              {"draws", draws}};
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path);
  out << j.dump(2) << "\n";
  if (!out) throw InputError("write failed: " + path);
}

json read_json(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw InputError(path + ": " + e.what());
  }
}

}  // namespace ccvm::workflows
