// ccvm: command-line front end for the constrained movement model workflows.

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "ccvm/errors.hpp"
#include "ccvm/io.hpp"
#include "ccvm/workflows.hpp"

namespace fs = std::filesystem;
using namespace ccvm;
using namespace ccvm::workflows;
using nlohmann::json;

namespace {

constexpr int kInputError = 2;
constexpr int kNumericalError = 3;
constexpr int kBatchFailure = 4;

struct Common {
  std::string config;
  std::uint64_t seed = 1;
  std::string out_dir;
  double sub_step = 0.0;
  double sigma_obs = 0.0;
  unsigned threads = 1;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
  CLI::Option* sub_opt = nullptr;
  CLI::Option* sigma_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "JSON config file (flags override it)");
  c.seed_opt = app->add_option("--seed", c.seed, "random seed");
  c.out_opt = app->add_option("--out-dir", c.out_dir, "output directory");
  c.sub_opt = app->add_option("--sub-step", c.sub_step, "covariate sub-step (h)");
  c.sigma_opt = app->add_option("--sigma-obs", c.sigma_obs, "observation noise SD (km)");
  c.threads_opt = app->add_option("--threads", c.threads, "worker threads for batch work");
}

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw InputError("missing " + what);
  if (!fs::is_regular_file(path)) throw InputError(what + " not found: " + path);
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? config_from_json(json::object()) : load_config(c.config);
  if (c.seed_opt->count()) {
    cfg.seed = cfg.simulate.seed = cfg.check.seed = c.seed;
  }
  if (c.out_opt->count()) cfg.out_dir = c.out_dir;
  if (c.sub_opt->count()) {
    if (!(c.sub_step > 0.0)) throw InputError("--sub-step must be > 0");
    cfg.sub_step = c.sub_step;
  }
  if (c.sigma_opt->count()) {
    if (!(c.sigma_obs > 0.0)) throw InputError("--sigma-obs must be > 0");
    cfg.sigma_obs = cfg.simulate.sigma_obs = cfg.check.sigma_obs = c.sigma_obs;
  }
  if (c.threads_opt->count()) cfg.threads = std::max(1u, c.threads);
  fs::create_directories(cfg.out_dir);
  return cfg;
}

std::string out_path(const RunConfig& cfg, const std::string& name) { return (fs::path(cfg.out_dir) / name).string(); }

void set_if(const CLI::Option* opt, std::string& target, const std::string& value) {
  if (opt->count()) target = value;
}

std::vector<double> parse_list(const std::string& s) {
  std::vector<double> v;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(io::parse_double(item));
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Constrained rotational velocity model: simulation, fitting and checking"};
  app.require_subcommand(1);

  // ingest
  Common ci;
  std::string in_tracks, in_domain, in_ship;
  auto* ingest_cmd = app.add_subcommand("ingest", "clean raw tracks and split them at the first ship sighting");
  add_common(ingest_cmd, ci);
  auto* it_opt = ingest_cmd->add_option("--tracks", in_tracks, "CSV id,time,x,y[,ship_x,ship_y]");
  auto* id_opt = ingest_cmd->add_option("--domain", in_domain, "GeoJSON water domain");
  auto* is_opt = ingest_cmd->add_option("--ship", in_ship, "ship CSV time,x,y");

  // metrics
  Common cm;
  std::string m_tracks, m_domain, m_ship, m_cov;
  auto* metrics_cmd = app.add_subcommand("metrics", "boundary covariates (and ship exposure) per observation");
  add_common(metrics_cmd, cm);
  auto* mt_opt = metrics_cmd->add_option("--tracks", m_tracks, "tracks CSV");
  auto* md_opt = metrics_cmd->add_option("--domain", m_domain, "GeoJSON water domain");
  auto* ms_opt = metrics_cmd->add_option("--ship", m_ship, "ship CSV time,x,y");
  auto* mc_opt = metrics_cmd->add_option("--covariates", m_cov, "observed | smoothed");

  // simulate
  Common cs;
  std::string s_domain;
  std::size_t s_batches = 0, s_individuals = 0;
  bool s_discard = false;
  auto* sim_cmd = app.add_subcommand("simulate", "simulate batches of trajectories");
  add_common(sim_cmd, cs);
  auto* sd_opt = sim_cmd->add_option("--domain", s_domain, "GeoJSON water domain");
  auto* sb_opt = sim_cmd->add_option("--batches", s_batches, "number of batches M");
  auto* sn_opt = sim_cmd->add_option("--individuals", s_individuals, "individuals per batch N");
  sim_cmd->add_flag("--discard-land-batches", s_discard, "drop batches with a land hit");

  // fit
  Common cf;
  std::string f_mode = "baseline", f_tracks, f_domain, f_ship, f_baseline, f_model, f_cov;
  std::size_t f_draws = 0;
  auto* fit_cmd = app.add_subcommand("fit", "fit the baseline or response model");
  add_common(fit_cmd, cf);
  fit_cmd->add_option("--mode", f_mode, "baseline | response")->check(CLI::IsMember({"baseline", "response"}));
  auto* ft_opt = fit_cmd->add_option("--tracks", f_tracks, "tracks CSV");
  auto* fd_opt = fit_cmd->add_option("--domain", f_domain, "GeoJSON water domain");
  auto* fs_opt = fit_cmd->add_option("--ship", f_ship, "ship CSV for exposure (response mode)");
  auto* fb_opt = fit_cmd->add_option("--baseline", f_baseline, "baseline fit JSON (response mode)");
  auto* fm_opt = fit_cmd->add_option("--model", f_model, "crcvm | cvm")->check(CLI::IsMember({"crcvm", "cvm"}));
  auto* fc_opt = fit_cmd->add_option("--covariates", f_cov, "observed | smoothed");
  auto* fn_opt = fit_cmd->add_option("--draws", f_draws, "baseline posterior draws (response mode)");

  // recovery
  Common cr;
  std::string r_fit, r_tau, r_nu, r_ps = "0.5,0.3,0.1";
  auto* rec_cmd = app.add_subcommand("recovery", "recovery distances from the response slopes");
  add_common(rec_cmd, cr);
  rec_cmd->add_option("--fit", r_fit, "response JSON (summary or fit)");
  rec_cmd->add_option("--alpha-tau", r_tau, "estimate,lo,hi instead of --fit");
  rec_cmd->add_option("--alpha-nu", r_nu, "estimate,lo,hi instead of --fit");
  rec_cmd->add_option("--p", r_ps, "comma-separated fractions in (0, 1)");

  // check
  Common cc;
  std::string c_fit, c_tracks, c_domain;
  std::size_t c_reps = 0;
  auto* check_cmd = app.add_subcommand("check", "compare observed and simulated D_shore / |Theta| densities");
  add_common(check_cmd, cc);
  check_cmd->add_option("--fit", c_fit, "baseline fit JSON");
  auto* ct_opt = check_cmd->add_option("--tracks", c_tracks, "observed tracks CSV");
  auto* cd_opt = check_cmd->add_option("--domain", c_domain, "GeoJSON water domain");
  auto* cn_opt = check_cmd->add_option("--replicates", c_reps, "replicate sets");

  // study
  Common cy;
  std::string y_domain;
  auto* study_cmd = app.add_subcommand("study", "simulation study: simulate -> fit over batches");
  add_common(study_cmd, cy);
  auto* yd_opt = study_cmd->add_option("--domain", y_domain, "GeoJSON water domain");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kInputError;
  }

  try {
    if (*ingest_cmd) {
      RunConfig cfg = resolve(ci);
      set_if(it_opt, cfg.tracks, in_tracks);
      set_if(id_opt, cfg.domain, in_domain);
      set_if(is_opt, cfg.ship, in_ship);
      require_file(cfg.tracks, "tracks file");
      if (!cfg.domain.empty()) require_file(cfg.domain, "domain file");
      if (!cfg.ship.empty()) require_file(cfg.ship, "ship file");
      const Dataset raw = io::read_tracks(cfg.tracks);
      std::optional<geometry::PolygonDomain> domain;
      if (!cfg.domain.empty()) domain.emplace(io::load_domain(cfg.domain));
      std::optional<ShipTrack> ship;
      if (!cfg.ship.empty()) ship = read_ship_track(cfg.ship);
      const auto res = ingest(raw, domain ? &*domain : nullptr, ship ? &*ship : nullptr, cfg.ingest);
      io::write_tracks(out_path(cfg, "pre.csv"), res.pre);
      io::write_tracks(out_path(cfg, "post.csv"), res.post);
      if (res.has_ship) write_exposure(out_path(cfg, "exposure.csv"), res.exposure);
      json counts = json::array();
      for (const auto& c : res.counts) {
        counts.push_back({{"id", c.id}, {"raw", c.raw}, {"dropped_initial", c.dropped_initial},
                          {"dropped_speed", c.dropped_speed}, {"pre", c.pre}, {"post", c.post}});
        std::printf("%-12s raw %5zu  first-hours %5zu  speed %4zu  pre %5zu  post %5zu\n", c.id.c_str(), c.raw,
                    c.dropped_initial, c.dropped_speed, c.pre, c.post);
      }
      write_json(out_path(cfg, "ingest.json"), {{"time_unit", "hours"},
                                                 {"epoch", res.epoch},
                                                 {"ship", res.has_ship},
                                                 {"drop_hours", cfg.ingest.drop_hours},
                                                 {"max_speed", cfg.ingest.max_speed},
                                                 {"individuals", counts}});
      return 0;
    }

    if (*metrics_cmd) {
      RunConfig cfg = resolve(cm);
      set_if(mt_opt, cfg.tracks, m_tracks);
      set_if(md_opt, cfg.domain, m_domain);
      set_if(ms_opt, cfg.ship, m_ship);
      if (mc_opt->count()) cfg.covariates = covariate_mode_from_string(m_cov);
      require_file(cfg.tracks, "tracks file");
      require_file(cfg.domain, "domain file");
      if (!cfg.ship.empty()) require_file(cfg.ship, "ship file");
      Dataset data = io::read_tracks(cfg.tracks);
      const auto domain = io::load_domain(cfg.domain);
      attach_grids(data, domain, cfg.sub_step, cfg.smoothing, cfg.covariates);
      std::vector<io::CovariateRow> rows;
      for (const auto& tr : data) {
        for (std::size_t j = 0; j < tr.size(); ++j) {
          const bool last = j + 1 == tr.size();
          const IntervalGrid& g = tr.grids[last ? j - 1 : j];
          const std::size_t node = last ? g.times.size() - 1 : 0;
          rows.push_back({tr.id, tr.times[j], tr.observations[j], g.d_shore[node], g.theta[node]});
        }
      }
      io::write_covariate_rows(out_path(cfg, "covariates.csv"), rows);
      std::optional<ShipTrack> ship;
      if (!cfg.ship.empty()) ship = read_ship_track(cfg.ship);
      bool columns = false;
      for (const auto& tr : data) columns = columns || (tr.covariates.count("ship_x") && tr.covariates.count("ship_y"));
      if (ship || columns) {
        std::vector<ExposureRow> all;
        for (const auto& tr : data) {
          const auto rows_e = compute_exposure(tr, ship ? &*ship : nullptr, domain);
          all.insert(all.end(), rows_e.begin(), rows_e.end());
        }
        write_exposure(out_path(cfg, "exposure.csv"), all);
      }
      std::printf("wrote covariates for %zu tracks to %s\n", data.size(), cfg.out_dir.c_str());
      return 0;
    }

    if (*sim_cmd) {
      RunConfig cfg = resolve(cs);
      set_if(sd_opt, cfg.domain, s_domain);
      if (sb_opt->count()) cfg.simulate.batches = s_batches;
      if (sn_opt->count()) cfg.simulate.individuals = s_individuals;
      if (s_discard) cfg.simulate.discard_land_batches = true;
      require_file(cfg.domain, "domain file");
      const auto domain = io::load_domain(cfg.domain);
      const json manifest = run_simulate(domain, cfg.simulate, cfg.out_dir, cfg.threads);
      std::printf("simulated %zu batches (%zu with land hits, %zu discarded) into %s\n", cfg.simulate.batches,
                  manifest["land_batches"].get<std::size_t>(), manifest["discarded_batches"].get<std::size_t>(),
                  cfg.out_dir.c_str());
      return 0;
    }

    if (*fit_cmd) {
      // the response mode checks its baseline before anything else
      if (f_mode == "response" && !fb_opt->count()) {
        RunConfig probe = cf.config.empty() ? RunConfig{} : load_config(cf.config);
        if (probe.baseline.empty()) throw InputError("response mode needs --baseline (a baseline fit JSON)");
      }
      RunConfig cfg = resolve(cf);
      set_if(ft_opt, cfg.tracks, f_tracks);
      set_if(fd_opt, cfg.domain, f_domain);
      set_if(fs_opt, cfg.ship, f_ship);
      set_if(fb_opt, cfg.baseline, f_baseline);
      if (fm_opt->count()) cfg.crcvm = f_model == "crcvm";
      if (fc_opt->count()) cfg.covariates = covariate_mode_from_string(f_cov);
      if (fn_opt->count()) cfg.draws = f_draws;
      if (f_mode == "response") require_file(cfg.baseline, "baseline fit");
      require_file(cfg.tracks, "tracks file");
      if (!cfg.domain.empty()) require_file(cfg.domain, "domain file");
      if (!cfg.ship.empty()) require_file(cfg.ship, "ship file");

      Dataset data = io::read_tracks(cfg.tracks);
      std::optional<geometry::PolygonDomain> domain;
      if (!cfg.domain.empty()) domain.emplace(io::load_domain(cfg.domain));

      if (f_mode == "baseline") {
        const auto model = baseline_model(cfg);
        if (model.omega) {
          if (!domain) throw InputError("the CRCVM needs --domain");
          attach_grids(data, *domain, cfg.sub_step, cfg.smoothing, cfg.covariates);
        }
        const auto init = cfg.init ? *cfg.init : inference::default_init(model);
        const auto res = inference::fit(data, model, init, fit_options(cfg));
        write_json(out_path(cfg, "fit.json"), inference::to_json(res));
        const std::string table = summary_table(res);
        std::ofstream(out_path(cfg, "summary.txt")) << table;
        std::cout << table;
        const bool failed = res.status == "max_iterations" || !res.hessian_pd;
        return failed ? kNumericalError : 0;
      }

      const auto base = inference::fit_from_json(read_json(cfg.baseline));
      if (base.model.kind != inference::ModelKind::baseline) throw InputError(cfg.baseline + " is not a baseline fit");
      if (base.model.omega && !domain) throw InputError("the CRCVM response model needs --domain");
      if (!cfg.ship.empty()) {
        if (!domain) throw InputError("ship exposure needs --domain for line of sight");
        const ShipTrack ship = read_ship_track(cfg.ship);
        for (auto& tr : data) attach_exposure(tr, compute_exposure(tr, &ship, *domain));
      }
      for (const auto& tr : data) {
        if (!tr.covariates.count(cfg.exposure_channel)) {
          throw InputError("track " + tr.id + " has no " + cfg.exposure_channel + " column (pass --ship)");
        }
      }
      if (base.model.omega) attach_grids(data, *domain, cfg.sub_step, cfg.smoothing, cfg.covariates);
      inference::ParameterModel model;
      model.kind = inference::ModelKind::response;
      model.omega = base.model.omega;
      model.sigma_obs = base.model.sigma_obs;
      model.exposure_channel = cfg.exposure_channel;
      Rng rng = make_rng(cfg.seed, 0);
      const auto draws = inference::posterior_samples(base, cfg.draws, rng);
      const auto summary = inference::fit_response(data, draws, model, fit_options(cfg), [](const auto& d) {
        std::fprintf(stderr, "draw %zu: %s\n", d.draw, d.ok ? d.status.c_str() : d.reason.c_str());
      });
      write_json(out_path(cfg, "response.json"), to_json(summary, model));
      char buf[256];
      std::string table = "response model over " + std::to_string(summary.draws.size()) + " baseline draws (" +
                          std::to_string(summary.failures) + " failed)\n";
      std::snprintf(buf, sizeof buf, "%-10s %12s %12s %12s\n", "parameter", "mean", "2.5%", "97.5%");
      table += buf;
      for (int i = 0; i < 2; ++i) {
        std::snprintf(buf, sizeof buf, "%-10s %12.4f %12.4f %12.4f\n", model.names()[i].c_str(), summary.mean[i],
                      summary.q025[i], summary.q975[i]);
        table += buf;
      }
      if (summary.unidentifiable) table += "warning: exposure identically zero, slopes not identifiable\n";
      std::ofstream(out_path(cfg, "summary.txt")) << table;
      std::cout << table;
      return 0;
    }

    if (*rec_cmd) {
      RunConfig cfg = resolve(cr);
      AlphaInterval at, an;
      if (!r_fit.empty()) {
        require_file(r_fit, "fit JSON");
        alphas_from_json(read_json(r_fit), at, an);
      } else {
        const auto t = parse_list(r_tau), n = parse_list(r_nu);
        if (t.size() != 3 || n.size() != 3) throw InputError("give --fit or both --alpha-tau and --alpha-nu as est,lo,hi");
        at = {t[0], t[1], t[2]};
        an = {n[0], n[1], n[2]};
      }
      const auto rows = recovery_table(at, an, parse_list(r_ps));
      write_recovery_table(out_path(cfg, "recovery.csv"), rows);
      for (const auto& r : rows) {
        std::printf("D_%-3s p = %.2f: %6.1f km [%6.1f, %6.1f]%s\n", r.parameter.c_str(), r.row.p, r.row.estimate,
                    r.row.lo, r.row.hi, r.row.sign_ok ? "" : "  (unexpected sign)");
      }
      return 0;
    }

    if (*check_cmd) {
      RunConfig cfg = resolve(cc);
      set_if(ct_opt, cfg.tracks, c_tracks);
      set_if(cd_opt, cfg.domain, c_domain);
      if (cn_opt->count()) cfg.check.replicates = c_reps;
      require_file(c_fit, "baseline fit JSON");
      require_file(cfg.tracks, "tracks file");
      require_file(cfg.domain, "domain file");
      const auto fit = inference::fit_from_json(read_json(c_fit));
      const auto domain = io::load_domain(cfg.domain);
      const Dataset data = io::read_tracks(cfg.tracks);
      CheckOptions opts = cfg.check;
      if (!cc.sigma_opt->count()) opts.sigma_obs = fit.model.sigma_obs;
      const auto res = run_check(fit, domain, data, opts);
      write_densities(out_path(cfg, "densities.csv"), res.rows);
      write_json(out_path(cfg, "check.json"), {{"replicates", opts.replicates},
                                                {"observed", res.observed_d.size()},
                                                {"simulated", res.simulated_d.size()},
                                                {"ks_d_shore", res.ks_d},
                                                {"ks_d_shore_p", res.ks_d_p},
                                                {"ks_abs_theta", res.ks_theta},
                                                {"ks_abs_theta_p", res.ks_theta_p},
                                                {"land_redraws", res.land_redraws},
                                                {"land_tracks", res.land_tracks}});
      std::printf("KS D_shore %.4f (p = %.3g), |Theta| %.4f (p = %.3g)\n", res.ks_d, res.ks_d_p, res.ks_theta,
                  res.ks_theta_p);
      return 0;
    }

    if (*study_cmd) {
      RunConfig cfg = resolve(cy);
      set_if(yd_opt, cfg.domain, y_domain);
      require_file(cfg.domain, "domain file");
      const auto domain = io::load_domain(cfg.domain);
      const StudyConfig sc = study_config(cfg);
      const auto res = run_study(domain, sc, [](const StudyFit& f) {
        std::fprintf(stderr, "batch %zu %-12s %s %.1fs\n", f.batch, f.scenario.c_str(),
                     f.ok ? f.status.c_str() : ("FAILED: " + f.error).c_str(), f.seconds);
      });
      write_json(out_path(cfg, "study.json"), to_json(res, sc));
      write_study_table(out_path(cfg, "study.csv"), res, sc);
      std::printf("batches used %zu, discarded for land hits %zu\n", res.batches_used, res.batches_discarded);
      std::printf("%-14s %-10s %8s %10s %10s %10s %6s\n", "scenario", "parameter", "truth", "mean", "q2.5", "q97.5",
                  "fits");
      const std::vector<std::string> names = {"tau0", "nu0", "sigma_tau", "sigma_nu"};
      const std::vector<double> truth = {sc.sim.tau0, sc.sim.nu0, sc.sim.sigma_tau, sc.sim.sigma_nu};
      for (const auto& s : res.summaries) {
        for (std::size_t p = 0; p < 4; ++p) {
          std::printf("%-14s %-10s %8.3f %10.3f %10.3f %10.3f %6zu\n", s.name.c_str(), names[p].c_str(), truth[p],
                      s.mean[p], s.q025[p], s.q975[p], s.fits);
        }
      }
      std::size_t failures = 0, total = 0;
      for (const auto& s : res.summaries) {
        failures += s.failures;
        total += s.fits + s.failures;
      }
      if (res.batches_used == 0 || (total > 0 && failures * 5 > total)) {
        throw BatchFailure("too many failed batches: " + std::to_string(failures) + " of " + std::to_string(total));
      }
      return 0;
    }
  } catch (const InputError& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kInputError;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return kNumericalError;
  } catch (const BatchFailure& e) {
    std::fprintf(stderr, "batch failure: %s\n", e.what());
    return kBatchFailure;
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "input error: %s\n", e.what());
    return kInputError;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
