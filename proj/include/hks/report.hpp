#pragma once

// Run directories and their files: rounds.csv, summary.json,
// config.resolved.json (plus optional checkpoints and cache snapshot),
// method sweeps and the comparison table re-rendered from stored CSVs.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "hks/config.hpp"
#include "hks/federation.hpp"
#include "hks/metrics.hpp"

namespace hks {

namespace fs = std::filesystem;

inline constexpr const char* kRoundsCsvVersion = "# hks-rounds v1";
inline constexpr const char* kRoundsCsvHeader =
    "round,mean_local_acc,min_local_acc,max_local_acc,mean_global_acc,mean_ce,mean_kd,hierarchy_built";

inline std::string format_double(double v, const char* fmt = "%.10f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

inline std::string rounds_csv(std::span<const RoundReport> reports) {
  std::string out = std::string(kRoundsCsvVersion) + "\n" + kRoundsCsvHeader + "\n";
  for (const auto& r : reports) {
    const auto [lo, hi] = std::minmax_element(r.per_client_local_acc.begin(), r.per_client_local_acc.end());
    out += std::to_string(r.round) + ',' + format_double(r.mean_local_acc()) + ',' + format_double(*lo) + ',' +
           format_double(*hi) + ',' + format_double(r.mean_global_acc()) + ',' + format_double(r.mean_ce) + ',' +
           format_double(r.mean_kd) + ',' + (r.hierarchy_built ? "1" : "0") + '\n';
  }
  return out;
}

struct RoundRow {
  int round = 0;
  double mean_local_acc = 0, min_local_acc = 0, max_local_acc = 0, mean_global_acc = 0, mean_ce = 0, mean_kd = 0;
  bool hierarchy_built = false;
};

inline std::vector<RoundRow> parse_rounds_csv(std::istream& in) {
  std::vector<RoundRow> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kRoundsCsvHeader) fail(ErrorKind::Format, "unexpected rounds.csv header '" + line + "'");
      header_seen = true;
      continue;
    }
    const auto f = detail::split(line, ',');
    if (f.size() != 8) fail(ErrorKind::Format, "rounds.csv row has " + std::to_string(f.size()) + " fields");
    try {
      rows.push_back({std::stoi(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3]), std::stod(f[4]),
                      std::stod(f[5]), std::stod(f[6]), f[7] == "1"});
    } catch (const std::exception&) {
      fail(ErrorKind::Format, "malformed rounds.csv row '" + line + "'");
    }
  }
  if (!header_seen) fail(ErrorKind::Format, "rounds.csv has no header");
  return rows;
}

inline ExperimentSummary summarize(std::span<const RoundRow> rows) {
  ExperimentSummary s;
  s.rounds_run = static_cast<int>(rows.size());
  if (rows.empty()) return s;
  double maua = -1.0, best = -1.0;
  for (const auto& r : rows) {
    maua = std::max(maua, r.mean_local_acc);
    best = std::max(best, r.mean_global_acc);
  }
  s.maua = maua;
  s.best_global_acc = best;
  s.final_global_acc = rows.back().mean_global_acc;
  return s;
}

// Table label for the method's swept hyperparameter.
inline std::string hyperparameter_label(const FederationConfig& f) {
  switch (f.method) {
    case Method::FedAvg: return std::string(to_string(f.fedavg_tier));
    case Method::FedCache: return "R=" + std::to_string(f.R);
    case Method::HKS: return "granularity=" + std::string(to_string(f.granularity));
    case Method::FedDistill:
    case Method::LocalOnly: return "-";
  }
  return "-";
}

inline Json summary_json(const ExperimentSummary& s, const FederationConfig& f, double wall_seconds) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  Json j;
  j["maua"] = opt(s.maua);
  j["best_global_acc"] = opt(s.best_global_acc);
  j["final_global_acc"] = opt(s.final_global_acc);
  j["method"] = std::string(to_string(f.method));
  j["granularity"] = std::string(to_string(f.granularity));
  j["R"] = f.R;
  j["alpha_dir"] = f.alpha_dir;
  j["seed"] = f.seed;
  j["rounds_run"] = s.rounds_run;
  j["wall_seconds"] = wall_seconds;
  return j;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write '" + path.string() + "'");
  out << text;
  if (!out) fail(ErrorKind::Io, "failed writing '" + path.string() + "'");
}

struct RunOutput {
  ExperimentResult result;
  double wall_seconds = 0.0;
};

// Runs one experiment and writes its directory.
inline RunOutput execute_run(const RunConfig& rc, const FederatedData* preloaded = nullptr) {
  const auto t0 = std::chrono::steady_clock::now();
  FederatedData loaded;
  if (!preloaded) loaded = load_data(rc.dataset, rc.fed.seed);
  const FederatedData& data = preloaded ? *preloaded : loaded;

  RunOutput out;
  auto state = init_federation(rc.fed, data);
  while (state.round < rc.fed.rounds) out.result.reports.push_back(run_round(state));
  out.result.summary = summarize(std::span<const RoundReport>(out.result.reports));
  out.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const fs::path dir(rc.out_dir);
  fs::create_directories(dir);
  write_text(dir / "rounds.csv", rounds_csv(out.result.reports));
  write_text(dir / "summary.json", summary_json(out.result.summary, rc.fed, out.wall_seconds).dump(2) + "\n");
  write_text(dir / "config.resolved.json", to_json(rc).dump(2) + "\n");
  if (rc.dump_checkpoints) {
    for (const auto& c : state.clients) {
      char name[64];
      std::snprintf(name, sizeof name, "client_%03d.hksmodel", c.client_id);
      write_text(dir / name, checkpoint_bytes(c.model));
    }
  }
  if (rc.dump_cache) {
    std::ostringstream os;
    state.cache.export_snapshot(os);
    write_text(dir / "cache.txt", os.str());
  }
  for (auto& c : state.clients) out.result.final_models.push_back(std::move(c.model));
  return out;
}

struct SweepSpec {
  std::vector<Method> methods;
  std::vector<Granularity> granularities{Granularity::Top, Granularity::Middle, Granularity::Bottom, Granularity::All};
  std::vector<std::size_t> Rs{1, 4, 16, 64, 256};
  std::vector<CapacityTier> fedavg_tiers{CapacityTier::Small, CapacityTier::Medium, CapacityTier::Large};
  std::vector<std::uint64_t> seeds{0};
};

inline std::string run_name(const FederationConfig& f) {
  std::string name(to_string(f.method));
  switch (f.method) {
    case Method::FedAvg: name += "-" + std::string(to_string(f.fedavg_tier)); break;
    case Method::FedCache: name += "-R" + std::to_string(f.R); break;
    case Method::HKS: name += "-" + std::string(to_string(f.granularity)); break;
    default: break;
  }
  return name + "-seed" + std::to_string(f.seed);
}

// One config per (method, its hyperparameter, seed); each writes into
// base.out_dir/<run name>.
inline std::vector<RunConfig> expand_sweep(const RunConfig& base, const SweepSpec& spec) {
  std::vector<RunConfig> out;
  auto push = [&](RunConfig rc) {
    rc.out_dir = (fs::path(base.out_dir) / run_name(rc.fed)).string();
    out.push_back(std::move(rc));
  };
  const auto methods = spec.methods.empty() ? std::vector<Method>{base.fed.method} : spec.methods;
  for (auto seed : spec.seeds)
    for (auto m : methods) {
      RunConfig rc = base;
      rc.fed.seed = seed;
      rc.fed.method = m;
      switch (m) {
        case Method::HKS:
          for (auto g : spec.granularities) {
            rc.fed.granularity = g;
            push(rc);
          }
          break;
        case Method::FedCache:
          for (auto r : spec.Rs) {
            rc.fed.R = r;
            push(rc);
          }
          break;
        case Method::FedAvg:
          for (auto t : spec.fedavg_tiers) {
            rc.fed.fedavg_tier = t;
            push(rc);
          }
          break;
        default: push(rc);
      }
    }
  return out;
}

inline std::string opt_cell(const std::optional<double>& v) { return v ? format_double(*v, "%.6f") : ""; }

inline std::string comparison_csv_header() {
  return "run,method,hyperparameters,seed,maua,best_global_acc,final_global_acc\n";
}

inline std::string comparison_csv_row(const RunConfig& rc, const ExperimentSummary& s) {
  return fs::path(rc.out_dir).filename().string() + ',' + std::string(to_string(rc.fed.method)) + ',' +
         hyperparameter_label(rc.fed) + ',' + std::to_string(rc.fed.seed) + ',' + opt_cell(s.maua) + ',' +
         opt_cell(s.best_global_acc) + ',' + opt_cell(s.final_global_acc) + '\n';
}

// Runs every expanded config and writes comparison.csv in base.out_dir.
// Runs that share a seed share the loaded dataset.
inline std::vector<RunConfig> run_sweep(const RunConfig& base, const SweepSpec& spec) {
  const auto runs = expand_sweep(base, spec);
  std::map<std::uint64_t, FederatedData> data_by_seed;
  std::string csv = comparison_csv_header();
  for (const auto& rc : runs) {
    auto it = data_by_seed.find(rc.fed.seed);
    if (it == data_by_seed.end()) it = data_by_seed.emplace(rc.fed.seed, load_data(rc.dataset, rc.fed.seed)).first;
    const auto out = execute_run(rc, &it->second);
    csv += comparison_csv_row(rc, out.result.summary);
  }
  fs::create_directories(base.out_dir);
  write_text(fs::path(base.out_dir) / "comparison.csv", csv);
  return runs;
}

// ---------------------------------------------------------------------------
// Report

struct ReportRow {
  std::string method;
  std::string hyperparameters;
  int runs = 0;
  double maua = 0.0;              // mean over seeds
  double final_global_acc = 0.0;  // mean over seeds
  double best_global_acc = 0.0;
};

inline int method_rank(const std::string& m) {
  static const std::vector<std::string> order{"fedavg", "feddistill", "fedcache", "hks", "localonly"};
  auto it = std::find(order.begin(), order.end(), m);
  return static_cast<int>(it - order.begin());
}

// Collects every run directory under `root` (or `root` itself), recomputes
// each summary from rounds.csv and averages over seeds per
// (method, hyperparameters).
inline std::vector<ReportRow> build_report(const fs::path& root) {
  std::vector<fs::path> dirs;
  if (fs::exists(root / "rounds.csv")) dirs.push_back(root);
  if (fs::is_directory(root))
    for (const auto& e : fs::directory_iterator(root))
      if (e.is_directory() && fs::exists(e.path() / "rounds.csv")) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) fail(ErrorKind::Io, "no run directories under '" + root.string() + "'");

  struct Acc {
    int n = 0;
    double maua = 0, fin = 0, best = 0;
  };
  std::map<std::pair<std::string, std::string>, Acc> groups;
  for (const auto& d : dirs) {
    const auto rc = parse_config(read_json_file((d / "config.resolved.json").string()));
    std::ifstream in(d / "rounds.csv");
    if (!in) fail(ErrorKind::Io, "cannot read '" + (d / "rounds.csv").string() + "'");
    const auto rows = parse_rounds_csv(in);
    const auto s = summarize(std::span<const RoundRow>(rows));
    if (!s.maua) continue;
    auto& a = groups[{std::string(to_string(rc.fed.method)), hyperparameter_label(rc.fed)}];
    ++a.n;
    a.maua += *s.maua;
    a.fin += *s.final_global_acc;
    a.best += *s.best_global_acc;
  }
  std::vector<ReportRow> rows;
  for (const auto& [key, a] : groups)
    rows.push_back({key.first, key.second, a.n, a.maua / a.n, a.fin / a.n, a.best / a.n});
  std::stable_sort(rows.begin(), rows.end(),
                   [](const auto& x, const auto& y) { return method_rank(x.method) < method_rank(y.method); });
  return rows;
}

inline std::string display_method(const std::string& m) {
  if (m == "fedavg") return "FedAvg";
  if (m == "feddistill") return "FedDistill";
  if (m == "fedcache") return "FedCache";
  if (m == "hks") return "HKS";
  if (m == "localonly") return "LocalOnly";
  return m;
}

// Method | Hyperparameters | Personalized (MAUA) | Generalized (Global Test
// Accuracy), accuracies in percent.
inline std::string render_report_table(const std::vector<ReportRow>& rows) {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-12s %-20s %-22s %-36s %s\n", "Method", "Hyperparameters", "Personalized (MAUA)",
                "Generalized (Global Test Accuracy)", "Runs");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%-12s %-20s %-22.2f %-36.2f %d\n", display_method(r.method).c_str(),
                  r.hyperparameters.c_str(), 100.0 * r.maua, 100.0 * r.final_global_acc, r.runs);
    os << buf;
  }
  return os.str();
}

inline std::string render_report_csv(const std::vector<ReportRow>& rows) {
  std::string out = "method,hyperparameters,maua,global_test_acc,best_global_acc,runs\n";
  for (const auto& r : rows)
    out += display_method(r.method) + ',' + r.hyperparameters + ',' + format_double(r.maua, "%.6f") + ',' +
           format_double(r.final_global_acc, "%.6f") + ',' + format_double(r.best_global_acc, "%.6f") + ',' +
           std::to_string(r.runs) + '\n';
  return out;
}

}  // namespace hks
