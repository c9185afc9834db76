#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "planeinit/baselines.hpp"
#include "planeinit/eval.hpp"
#include "planeinit/gpo.hpp"
#include "planeinit/synth.hpp"

namespace planeinit {

enum class Method {
  kGpo,
  kGpoNoRansac,
  kPnpBa,
  kBa,
  kBaNoRansac,
  kPba,
  kFpba,
  kPnpChain,
  kDbscan,
};

inline const char* to_string(Method m) {
  switch (m) {
    case Method::kGpo: return "GPO";
    case Method::kGpoNoRansac: return "GPO_noRANSAC";
    case Method::kPnpBa: return "PNP_BA";
    case Method::kBa: return "BA";
    case Method::kBaNoRansac: return "BA_noRANSAC";
    case Method::kPba: return "PBA";
    case Method::kFpba: return "FPBA";
    case Method::kPnpChain: return "PNP_CHAIN";
    case Method::kDbscan: return "DBSCAN";
  }
  return "GPO";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : {Method::kGpo, Method::kGpoNoRansac, Method::kPnpBa, Method::kBa,
                   Method::kBaNoRansac, Method::kPba, Method::kFpba, Method::kPnpChain,
                   Method::kDbscan}) {
    if (s == to_string(m)) return m;
  }
  throw DegenerateConfiguration("unknown method: " + s);
}

// Sweep definition: methods x frame counts x seeds over one scene family.
struct ExperimentConfig {
  SceneConfig scene;
  std::vector<Method> methods = {Method::kGpo,   Method::kGpoNoRansac, Method::kPnpChain,
                                 Method::kDbscan, Method::kPnpBa,       Method::kBa,
                                 Method::kBaNoRansac, Method::kPba,     Method::kFpba};
  std::vector<int> frame_sweep = {5, 10, 15, 20, 25, 30, 35, 40, 45, 50, 55, 60};
  int seeds = 1;
  SolverConfig solver;
  RansacConfig ransac;
  AggregationConfig aggregation;
  std::optional<bool> ransac_override;  // forces the homography filter on/off
  double plane_fit_threshold = 0.01;    // metric-stage plane RANSAC, GT units
  std::string output_dir = "out";
  int jobs = 0;                         // 0 = hardware concurrency
  int repeat_timing = 5;                // 0 = skip timing (deterministic output)
  bool write_trajectories = true;

  void validate() const {
    if (methods.empty()) throw DegenerateConfiguration("ExperimentConfig: no methods");
    if (frame_sweep.empty()) throw DegenerateConfiguration("ExperimentConfig: empty sweep");
    if (seeds < 1) throw DegenerateConfiguration("ExperimentConfig: seeds < 1");
    if (repeat_timing < 0) throw DegenerateConfiguration("ExperimentConfig: repeat_timing < 0");
  }
};

// Dispatch one method on one window. RANSAC defaults follow the method name;
// PNP_BA mirrors the paper's VINS-style chain (no homography filter for the
// bundle stage).
inline InitializationResult run_method(Method method, const FrameWindow& window,
                                       const ExperimentConfig& cfg, std::uint64_t seed) {
  auto ransac_on = [&](bool dflt) { return cfg.ransac_override.value_or(dflt); };
  InitializationResult result;
  switch (method) {
    case Method::kGpo:
      result = run_gpo_pipeline(window, ransac_on(true), cfg.solver, cfg.ransac, seed);
      break;
    case Method::kGpoNoRansac:
      result = run_gpo_pipeline(window, ransac_on(false), cfg.solver, cfg.ransac, seed);
      break;
    case Method::kPnpChain:
      result = init_pnp_chain(window, ransac_on(true), cfg.aggregation, seed);
      break;
    case Method::kDbscan:
      result = init_dbscan(window, cfg.aggregation, seed);
      break;
    case Method::kPnpBa: {
      const InitializationResult init =
          init_pnp_chain(window, false, cfg.aggregation, seed);
      result = bundle_adjust(window, init, BaMode::kBa, ransac_on(false), cfg.solver,
                             cfg.ransac, seed);
      break;
    }
    case Method::kBa: {
      const InitializationResult init = init_dbscan(window, cfg.aggregation, seed);
      result = bundle_adjust(window, init, BaMode::kBa, ransac_on(true), cfg.solver,
                             cfg.ransac, seed);
      break;
    }
    case Method::kBaNoRansac: {
      const InitializationResult init = init_dbscan(window, cfg.aggregation, seed);
      result = bundle_adjust(window, init, BaMode::kBa, ransac_on(false), cfg.solver,
                             cfg.ransac, seed);
      break;
    }
    case Method::kPba: {
      const InitializationResult init = init_dbscan(window, cfg.aggregation, seed);
      result = bundle_adjust(window, init, BaMode::kPba, ransac_on(true), cfg.solver,
                             cfg.ransac, seed);
      break;
    }
    case Method::kFpba: {
      const InitializationResult init = init_dbscan(window, cfg.aggregation, seed);
      result = bundle_adjust(window, init, BaMode::kFpba, ransac_on(true), cfg.solver,
                             cfg.ransac, seed);
      break;
    }
  }
  result.method = to_string(method);
  return result;
}

namespace detail {

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

inline std::string sanitize_message(std::string msg) {
  for (char& c : msg) {
    if (c == ',' || c == '\n' || c == '\r') c = ';';
  }
  return msg;
}

}  // namespace detail

// One TUM-format line per pose: "index tx ty tz qx qy qz qw", camera-to-world.
inline void emit_trajectory(const InitializationResult& result, const std::string& path) {
  if (result.poses.empty()) {
    throw DegenerateConfiguration("emit_trajectory: no poses in " + path);
  }
  std::ofstream out(path);
  if (!out) throw Error("emit_trajectory: cannot open " + path);
  for (size_t i = 0; i < result.poses.size(); ++i) {
    const Quat q_wc = result.poses[i].rotation.conjugate();  // camera-to-world
    const Vec3& t = result.poses[i].translation;
    out << i << ' ' << detail::format_double(t.x()) << ' ' << detail::format_double(t.y())
        << ' ' << detail::format_double(t.z()) << ' ' << detail::format_double(q_wc.x()) << ' '
        << detail::format_double(q_wc.y()) << ' ' << detail::format_double(q_wc.z()) << ' '
        << detail::format_double(q_wc.w()) << '\n';
  }
  if (!out) throw Error("emit_trajectory: write failed for " + path);
}

inline std::vector<Pose> parse_trajectory(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("parse_trajectory: cannot open " + path);
  std::vector<Pose> poses;
  double idx, tx, ty, tz, qx, qy, qz, qw;
  while (in >> idx >> tx >> ty >> tz >> qx >> qy >> qz >> qw) {
    Pose p;
    p.translation = Vec3(tx, ty, tz);
    p.rotation = Quat(qw, qx, qy, qz).conjugate().normalized();
    poses.push_back(p);
  }
  return poses;
}

// csv schema: method,frames,seed,ate,pne_deg,pde,avg_time_ms,optim_time_ms,converged,error
inline std::string csv_header() {
  return "method,frames,seed,ate,pne_deg,pde,avg_time_ms,optim_time_ms,converged,error";
}

inline std::string csv_row(const MetricsReport& r) {
  std::ostringstream out;
  out << r.method << ',' << r.frames << ',' << r.seed << ',';
  if (r.error.empty()) {
    out << detail::format_double(r.ate) << ',' << detail::format_double(r.pne_deg) << ','
        << detail::format_double(r.pde) << ',';
  } else {
    out << ",,,";
  }
  out << detail::format_double(r.avg_time_ms) << ',' << detail::format_double(r.optim_time_ms)
      << ',' << (r.converged ? 1 : 0) << ',' << detail::sanitize_message(r.error);
  return out.str();
}

struct ExperimentOutcome {
  std::vector<MetricsReport> rows;  // sorted by (method order, frames, seed)
  int failed_runs = 0;
  std::string csv_path;
  std::string summary_path;
};

namespace detail {

struct CellStats {
  std::vector<double> ate, pne, pde, avg_time, optim_time;
  int runs = 0;
  int failures = 0;
};

inline nlohmann::ordered_json stats_json(const std::vector<double>& v) {
  nlohmann::ordered_json out;
  if (v.empty()) {
    out["mean"] = nullptr;
    out["median"] = nullptr;
    out["std"] = nullptr;
    return out;
  }
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  out["mean"] = mean;
  out["median"] = median_of(v);
  out["std"] = std::sqrt(var);
  return out;
}

}  // namespace detail

// Per-(method, frames) aggregate of the run rows: mean/median/std over the
// successful seeds plus run/failure counts.
inline nlohmann::ordered_json aggregate_summary(const std::vector<MetricsReport>& rows,
                                                const std::vector<Method>& method_order,
                                                const std::vector<int>& frame_sweep) {
  std::map<std::pair<std::string, int>, detail::CellStats> cells;
  for (const auto& r : rows) {
    auto& c = cells[{r.method, r.frames}];
    ++c.runs;
    if (!r.error.empty()) {
      ++c.failures;
      continue;
    }
    c.ate.push_back(r.ate);
    c.pne.push_back(r.pne_deg);
    c.pde.push_back(r.pde);
    c.avg_time.push_back(r.avg_time_ms);
    c.optim_time.push_back(r.optim_time_ms);
  }

  nlohmann::ordered_json summary;
  for (Method m : method_order) {
    nlohmann::ordered_json per_method;
    for (int frames : frame_sweep) {
      auto it = cells.find({to_string(m), frames});
      if (it == cells.end()) continue;
      const auto& c = it->second;
      nlohmann::ordered_json cell;
      cell["runs"] = c.runs;
      cell["failures"] = c.failures;
      cell["ate"] = detail::stats_json(c.ate);
      cell["pne_deg"] = detail::stats_json(c.pne);
      cell["pde"] = detail::stats_json(c.pde);
      cell["avg_time_ms"] = detail::stats_json(c.avg_time);
      cell["optim_time_ms"] = detail::stats_json(c.optim_time);
      per_method[std::to_string(frames)] = cell;
    }
    summary[to_string(m)] = per_method;
  }
  return summary;
}

// Evaluate one (method, frames, seed) cell: generate the scene, run the
// method (repeated for timing medians), score against the ground truth.
inline MetricsReport run_cell(const ExperimentConfig& cfg, Method method, int frames,
                              std::uint64_t seed, InitializationResult* out_result = nullptr) {
  MetricsReport report;
  report.method = to_string(method);
  report.frames = frames;
  report.seed = seed;
  try {
    SceneConfig sc = cfg.scene;
    sc.frames = frames;
    sc.seed = seed;
    const auto [window, gt] = generate_scene(sc);

    InitializationResult result = run_method(method, window, cfg, seed);
    if (cfg.repeat_timing == 0) {
      result.total_time_ms = 0.0;
      result.optim_time_ms = 0.0;
    } else if (cfg.repeat_timing > 1) {
      std::vector<double> totals = {result.total_time_ms};
      std::vector<double> optims = {result.optim_time_ms};
      for (int rep = 1; rep < cfg.repeat_timing; ++rep) {
        const InitializationResult again = run_method(method, window, cfg, seed);
        totals.push_back(again.total_time_ms);
        optims.push_back(again.optim_time_ms);
      }
      result.total_time_ms = detail::median_of(totals);
      result.optim_time_ms = detail::median_of(optims);
    }

    report = compute_metrics(result, gt.poses, gt.plane, cfg.plane_fit_threshold,
                             derive_seed(seed, 2024));
    report.seed = seed;
    if (out_result) *out_result = result;
  } catch (const std::exception& e) {
    report.error = e.what();
    report.converged = false;
  }
  return report;
}

// Full sweep on a bounded worker pool; output order is by cell key, never by
// completion order. Returns the rows plus the paths written.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, bool quiet = false) {
  cfg.validate();
  namespace fs = std::filesystem;
  fs::create_directories(cfg.output_dir);
  if (cfg.write_trajectories) fs::create_directories(fs::path(cfg.output_dir) / "traj");

  struct Cell {
    size_t method_idx;
    int frames;
    std::uint64_t seed;
  };
  std::vector<Cell> cells;
  for (size_t mi = 0; mi < cfg.methods.size(); ++mi) {
    for (int frames : cfg.frame_sweep) {
      for (int s = 0; s < cfg.seeds; ++s) {
        cells.push_back({mi, frames, cfg.scene.seed + static_cast<std::uint64_t>(s)});
      }
    }
  }

  std::vector<MetricsReport> rows(cells.size());
  std::vector<InitializationResult> results(cfg.write_trajectories ? cells.size() : 0);
  std::atomic<size_t> next{0};
  std::atomic<int> done{0};
  std::mutex log_mutex;

  const unsigned pool = cfg.jobs > 0 ? static_cast<unsigned>(cfg.jobs)
                                     : std::max(1u, std::thread::hardware_concurrency());
  auto worker = [&]() {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= cells.size()) break;
      const Cell& c = cells[i];
      rows[i] = run_cell(cfg, cfg.methods[c.method_idx], c.frames, c.seed,
                         cfg.write_trajectories ? &results[i] : nullptr);
      const int k = ++done;
      if (!quiet) {
        std::lock_guard<std::mutex> lock(log_mutex);
        std::fprintf(stderr, "[%d/%zu] %s f=%d seed=%llu %s\n", k, cells.size(),
                     rows[i].method.c_str(), rows[i].frames,
                     static_cast<unsigned long long>(rows[i].seed),
                     rows[i].error.empty() ? "ok" : rows[i].error.c_str());
      }
    }
  };
  std::vector<std::thread> threads;
  for (unsigned t = 0; t < std::min<size_t>(pool, cells.size()); ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();

  ExperimentOutcome outcome;
  outcome.rows = rows;
  for (const auto& r : rows) {
    if (!r.error.empty()) ++outcome.failed_runs;
  }

  const fs::path csv_path = fs::path(cfg.output_dir) / "runs.csv";
  std::ofstream csv(csv_path);
  csv << csv_header() << '\n';
  for (const auto& r : rows) csv << csv_row(r) << '\n';
  csv.close();
  outcome.csv_path = csv_path.string();

  const fs::path summary_path = fs::path(cfg.output_dir) / "summary.json";
  std::ofstream summary(summary_path);
  summary << aggregate_summary(rows, cfg.methods, cfg.frame_sweep).dump(2) << '\n';
  summary.close();
  outcome.summary_path = summary_path.string();

  if (cfg.write_trajectories) {
    for (size_t i = 0; i < cells.size(); ++i) {
      if (!rows[i].error.empty()) continue;
      std::ostringstream name;
      name << rows[i].method << "_f" << rows[i].frames << "_s" << rows[i].seed << ".tum";
      emit_trajectory(results[i], (fs::path(cfg.output_dir) / "traj" / name.str()).string());
    }
  }
  return outcome;
}

}  // namespace planeinit
