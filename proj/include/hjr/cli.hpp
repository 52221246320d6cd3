#pragma once

#include <iostream>

#include <CLI11.hpp>

#include "hjr/analysis.hpp"
#include "hjr/config.hpp"

namespace hjr::cli {

namespace fs = std::filesystem;

inline std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setfill('0') << std::setw(16) << v;
  return out.str();
}

inline std::uint64_t hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (in.read(buf, sizeof(buf)) || in.gcount() > 0)
    h = fnv1a64(std::string_view(buf, static_cast<std::size_t>(in.gcount())), h);
  return h;
}

/// Hash of a CSV that ignores the final (wall-time) column of every row, so
/// identical runs produce identical checksums despite timing jitter.
inline std::uint64_t hash_csv_excluding_last_field(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ull;
  std::string line;
  while (std::getline(in, line)) {
    auto pos = line.rfind(',');
    if (pos != std::string::npos) line.erase(pos);
    line.push_back('\n');
    h = fnv1a64(line, h);
  }
  return h;
}

/// Run directory named by the resolved config hash and seed; contains the
/// fully materialized config so runs are reproducible from the directory
/// alone.
inline fs::path make_run_dir(const fs::path& base, const std::string& stem, const RunConfig& rc) {
  std::ostringstream name;
  name << stem << "-" << hex64(rc.resolved.hash()).substr(0, 8) << "-s" << rc.schedule.seed;
  fs::path dir = base / name.str();
  fs::create_directories(dir);
  std::ofstream out(dir / "resolved.cfg");
  out << rc.resolved.serialize();
  return dir;
}

inline void write_checksums(const fs::path& dir, const std::vector<fs::path>& files) {
  std::ofstream out(dir / "checksums.txt");
  for (const fs::path& f : files) {
    const std::uint64_t h =
        f.filename() == "loss_log.csv" ? hash_csv_excluding_last_field(f) : hash_file(f);
    out << hex64(h) << "  " << f.filename().string() << "\n";
  }
}

inline int command_train(const std::string& config_path, const std::string& out_base) {
  RunConfig rc = load_run_config(fs::path(config_path));
  const fs::path dir = make_run_dir(out_base, fs::path(config_path).stem().string(), rc);
  std::cerr << "run directory: " << dir.string() << "\n";

  ThreadPool pool(rc.schedule.workers);
  std::vector<fs::path> artifacts{dir / "resolved.cfg"};

  std::ofstream log(dir / "loss_log.csv");
  log << "iteration,h1,h2,lambda,wall_seconds\n" << std::setprecision(17);

  TrainHooks hooks;
  hooks.info = &std::cerr;
  hooks.on_checkpoint = [&](std::uint64_t iter, const NetworkParams& p, const NormalizationMap& m) {
    fs::path ck = dir / ("checkpoint_" + std::to_string(iter) + ".ck");
    save_checkpoint(ck, p, m, rc.system->name(), iter);
    artifacts.push_back(ck);
  };
  hooks.on_diverged = [&](std::uint64_t iter, const NetworkParams& p, const NormalizationMap& m) {
    fs::path ck = dir / "checkpoint_diverged.ck";
    save_checkpoint(ck, p, m, rc.system->name(), iter);
    std::cerr << "training diverged at iteration " << iter << "; last good parameters in "
              << ck.string() << "\n";
  };

  TrainResult result = train(*rc.system, rc.schedule, rc.net, &pool, hooks);
  for (const LossLogRow& r : result.log)
    log << r.iteration << ',' << r.h1 << ',' << r.h2 << ',' << r.lambda << ',' << r.wall_seconds << '\n';
  log.close();

  fs::path final_ck = dir / "checkpoint_final.ck";
  save_checkpoint(final_ck, result.params, result.map, rc.system->name(),
                  static_cast<std::uint64_t>(rc.schedule.pretrain_iters) +
                      static_cast<std::uint64_t>(rc.schedule.curriculum_iters));
  artifacts.push_back(final_ck);
  artifacts.push_back(dir / "loss_log.csv");
  write_checksums(dir, artifacts);
  std::cout << dir.string() << "\n";
  return 0;
}

inline int command_gridsolve(const std::string& config_path, const std::string& out_base) {
  RunConfig rc = load_run_config(fs::path(config_path));
  if (rc.grid_resolution.empty())
    throw ConfigError(rc.resolved.origin() + ": gridsolve needs a [grid] section with resolution");
  const fs::path dir = make_run_dir(out_base, fs::path(config_path).stem().string(), rc);
  ThreadPool pool(rc.schedule.workers);

  SolveOptions opt;
  opt.resolution = rc.grid_resolution;
  opt.snapshot_times = rc.grid_snapshots;
  opt.t_final = opt.snapshot_times.empty()
                    ? 0.0
                    : *std::min_element(opt.snapshot_times.begin(), opt.snapshot_times.end());
  opt.pool = &pool;
  std::vector<ValueGrid> grids = solve(*rc.system, opt);

  std::vector<fs::path> artifacts{dir / "resolved.cfg"};
  for (const ValueGrid& g : grids) {
    std::ostringstream name;
    name << "grid_t" << g.time() << ".vg";
    fs::path p = dir / name.str();
    g.save(p);
    artifacts.push_back(p);
    std::cerr << "wrote " << p.string() << "\n";
  }
  write_checksums(dir, artifacts);
  std::cout << dir.string() << "\n";
  return 0;
}

inline double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct EvalSliceRequest {
  std::vector<int> free_dims;
  std::vector<double> base;
  int resolution = 61;
  double t = 0.0;
  std::string out_path;
};

inline int command_eval(const std::vector<std::string>& checkpoints, const std::string& grid_path,
                        const std::string& out_dir, const std::vector<std::string>& activations,
                        int workers, const EvalSliceRequest* slice) {
  ValueGrid grid = ValueGrid::load(grid_path);
  ThreadPool pool(workers);
  fs::create_directories(out_dir);

  std::set<std::string> act_filter(activations.begin(), activations.end());
  nlohmann::json records = nlohmann::json::array();
  std::map<std::string, std::vector<double>> mse_by_act, vol_by_act;

  for (const std::string& path : checkpoints) {
    Checkpoint ck = load_checkpoint(path);
    require_same_system(ck.system_name, grid.system_name());
    const std::string act = to_string(ck.params.activation());
    if (!act_filter.empty() && !act_filter.count(act)) continue;
    const double m = mse(ck.params, ck.map, grid, &pool);
    const double v = brt_volume_error(ck.params, ck.map, grid, &pool);
    nlohmann::json rec;
    rec["checkpoint"] = path;
    rec["system"] = ck.system_name;
    rec["activation"] = act;
    rec["seed"] = ck.params.seed();
    rec["iteration"] = ck.iteration;
    rec["mse"] = m;
    rec["brt_volume_error_percent"] = v;
    records.push_back(rec);
    mse_by_act[act].push_back(m);
    vol_by_act[act].push_back(v);
    std::cerr << path << ": mse " << m << ", volume error " << v << "%\n";
  }
  if (records.empty()) throw ConfigError("eval: no checkpoints matched");

  nlohmann::json summary = nlohmann::json::object();
  for (const auto& [act, vals] : mse_by_act) {
    summary[act] = {{"count", vals.size()},
                    {"median_mse", median(vals)},
                    {"median_brt_volume_error_percent", median(vol_by_act[act])}};
  }
  nlohmann::json doc;
  doc["grid"] = grid_path;
  doc["grid_time"] = grid.time();
  doc["records"] = records;
  doc["summary"] = summary;
  {
    std::ofstream out(fs::path(out_dir) / "metrics.json");
    out << doc.dump(2) << "\n";
  }
  {
    std::ofstream out(fs::path(out_dir) / "metrics.txt");
    out << std::setprecision(17);
    for (const auto& rec : records) {
      out << "checkpoint = " << rec["checkpoint"].get<std::string>() << "\n";
      out << "activation = " << rec["activation"].get<std::string>() << "\n";
      out << "seed = " << rec["seed"].get<std::uint64_t>() << "\n";
      out << "mse = " << rec["mse"].get<double>() << "\n";
      out << "brt_volume_error_percent = " << rec["brt_volume_error_percent"].get<double>() << "\n\n";
    }
    for (const auto& [act, vals] : mse_by_act) {
      out << "median_mse[" << act << "] = " << median(vals) << "\n";
      out << "median_brt_volume_error_percent[" << act << "] = " << median(vol_by_act[act]) << "\n";
    }
  }

  if (slice && !slice->out_path.empty()) {
    Checkpoint ck = load_checkpoint(checkpoints.front());
    NetworkValueSource src(std::move(ck));
    std::vector<double> base = slice->base;
    if (base.empty()) base.assign(static_cast<std::size_t>(src.state_dim()), 0.0);
    std::ofstream out(slice->out_path);
    export_slice(src, base, slice->free_dims.at(0), slice->free_dims.at(1), slice->resolution,
                 slice->t, out);
    std::cerr << "wrote slice " << slice->out_path << "\n";
  }
  std::cout << (fs::path(out_dir) / "metrics.json").string() << "\n";
  return 0;
}

inline int command_rollout(const std::string& scenario_path, const std::string& checkpoint,
                           const std::vector<std::string>& grid_paths, bool filtered,
                           const std::string& out_dir) {
  Scenario sc = load_scenario(fs::path(scenario_path));
  std::unique_ptr<ValueSource> source;
  if (!checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(checkpoint);
    require_same_system(ck.system_name, sc.system->name());
    source = std::make_unique<NetworkValueSource>(std::move(ck));
  } else if (!grid_paths.empty()) {
    std::vector<ValueGrid> slices;
    for (const std::string& p : grid_paths) slices.push_back(ValueGrid::load(p));
    for (const ValueGrid& g : slices) require_same_system(g.system_name(), sc.system->name());
    source = std::make_unique<GridValueSource>(std::move(slices));
  } else {
    throw ConfigError("rollout needs --checkpoint or at least one --grid");
  }
  if (filtered && !sc.has_nominal)
    throw ConfigError(scenario_path + ": --filtered needs scenario.nominal or scenario.nominal_at");

  fs::create_directories(out_dir);
  std::ofstream summary(fs::path(out_dir) / "summary.txt");
  summary << std::setprecision(17);
  for (std::size_t i = 0; i < sc.starts.size(); ++i) {
    Trajectory traj = filtered
                          ? simulate_filtered(*sc.system, *source, sc.policy, sc.starts[i], sc.options)
                          : simulate_optimal(*sc.system, *source, sc.starts[i], sc.options);
    fs::path p = fs::path(out_dir) / ("traj_" + std::to_string(i) + ".csv");
    std::ofstream out(p);
    write_trajectory_csv(traj, out);
    summary << "start " << i << ": payoff = " << traj.payoff
            << ", start_value = " << traj.values.front() << ", steps = " << traj.sample_count() - 1
            << (traj.exited_domain ? ", exited_domain" : "") << "\n";
    std::cerr << "wrote " << p.string() << "\n";
  }
  std::cout << out_dir << "\n";
  return 0;
}

inline int run(int argc, const char* const* argv) {
  CLI::App app{"Hamilton-Jacobi reachability: self-supervised value networks with a grid-based checker"};
  app.require_subcommand(1);

  std::string config_path, out_base = "runs";
  auto* train_cmd = app.add_subcommand("train", "train a value network from a run config");
  train_cmd->add_option("config", config_path, "run config file")->required();
  train_cmd->add_option("--out", out_base, "base directory for run artifacts");

  std::string gs_config, gs_out = "runs";
  auto* grid_cmd = app.add_subcommand("gridsolve", "solve the game on a grid and export snapshots");
  grid_cmd->add_option("config", gs_config, "run config file with a [grid] section")->required();
  grid_cmd->add_option("--out", gs_out, "base directory for run artifacts");

  std::vector<std::string> eval_cks, eval_acts;
  std::string eval_grid, eval_out = "eval";
  int eval_workers = 1;
  std::vector<int> slice_dims;
  std::vector<double> slice_base;
  int slice_res = 61;
  double slice_t = 0.0;
  std::string slice_out;
  auto* eval_cmd = app.add_subcommand("eval", "compare checkpoints against a solved grid");
  eval_cmd->add_option("--checkpoint", eval_cks, "checkpoint file (repeatable)")->required();
  eval_cmd->add_option("--grid", eval_grid, "reference grid file")->required();
  eval_cmd->add_option("--out", eval_out, "output directory for metrics");
  eval_cmd->add_option("--activation", eval_acts, "restrict to these activations (repeatable)");
  eval_cmd->add_option("--workers", eval_workers, "worker threads");
  eval_cmd->add_option("--slice-dims", slice_dims, "two free dimensions for a CSV slice")->expected(2);
  eval_cmd->add_option("--slice-base", slice_base, "fixed coordinates for the slice");
  eval_cmd->add_option("--slice-res", slice_res, "slice resolution per axis");
  eval_cmd->add_option("--slice-t", slice_t, "slice time");
  eval_cmd->add_option("--slice-out", slice_out, "slice CSV path (enables the export)");

  std::string ro_scenario, ro_checkpoint, ro_out = "rollouts";
  std::vector<std::string> ro_grids;
  bool ro_filtered = false;
  auto* ro_cmd = app.add_subcommand("rollout", "simulate closed-loop trajectories for a scenario");
  ro_cmd->add_option("--scenario", ro_scenario, "scenario config file")->required();
  ro_cmd->add_option("--checkpoint", ro_checkpoint, "value network checkpoint");
  ro_cmd->add_option("--grid", ro_grids, "grid snapshot file (repeatable, forms a time stack)");
  ro_cmd->add_flag("--filtered", ro_filtered, "apply the nominal controller with the safety filter");
  ro_cmd->add_option("--out", ro_out, "output directory for trajectory CSVs");

  try {
    app.parse(argc, argv);
    if (*train_cmd) return command_train(config_path, out_base);
    if (*grid_cmd) return command_gridsolve(gs_config, gs_out);
    if (*eval_cmd) {
      EvalSliceRequest slice;
      EvalSliceRequest* slice_ptr = nullptr;
      if (!slice_out.empty()) {
        if (slice_dims.size() != 2) throw ConfigError("eval: --slice-out needs --slice-dims d0 d1");
        slice.free_dims = slice_dims;
        slice.base = slice_base;
        slice.resolution = slice_res;
        slice.t = slice_t;
        slice.out_path = slice_out;
        slice_ptr = &slice;
      }
      return command_eval(eval_cks, eval_grid, eval_out, eval_acts, eval_workers, slice_ptr);
    }
    if (*ro_cmd) return command_rollout(ro_scenario, ro_checkpoint, ro_grids, ro_filtered, ro_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const NumericalFault& e) {
    std::cerr << "numerical fault: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace hjr::cli
