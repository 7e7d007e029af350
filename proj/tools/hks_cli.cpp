// Experiment runner: `hks run`, `hks sweep`, `hks report`.

#include <cstdio>
#include <exception>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "hks/config.hpp"
#include "hks/report.hpp"

namespace {

struct CommonFlags {
  std::string config;
  hks::FlagOverrides o;
  std::string method, granularity, out, idx_images, idx_labels, idx_test_images, idx_test_labels, synthetic;
  std::size_t R = 0;
  double alpha_dir = 0.0;
  int rounds = 0;
  std::uint64_t seed = 0;
};

void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "JSON config file");
  app->add_option("--method", f.method, "localonly|fedavg|feddistill|fedcache|hks");
  app->add_option("--granularity", f.granularity, "top|middle|bottom|all");
  app->add_option("--R", f.R, "FedCache neighbour count");
  app->add_option("--alpha-dir", f.alpha_dir, "Dirichlet partition coefficient");
  app->add_option("--rounds", f.rounds, "communication rounds");
  app->add_option("--seed", f.seed, "experiment seed");
  app->add_option("--out", f.out, "output directory");
  app->add_option("--idx-images", f.idx_images, "IDX training images (.gz accepted)");
  app->add_option("--idx-labels", f.idx_labels, "IDX training labels (.gz accepted)");
  app->add_option("--idx-test-images", f.idx_test_images, "IDX global test images");
  app->add_option("--idx-test-labels", f.idx_test_labels, "IDX global test labels");
  app->add_option("--synthetic", f.synthetic, "synthetic blobs: C,per_class,dim,spread");
}

hks::RunConfig resolve(CLI::App* app, const CommonFlags& f) {
  hks::FlagOverrides o;
  auto given = [&](const char* name) { return app->count(name) > 0; };
  if (given("--method")) o.method = f.method;
  if (given("--granularity")) o.granularity = f.granularity;
  if (given("--R")) o.R = f.R;
  if (given("--alpha-dir")) o.alpha_dir = f.alpha_dir;
  if (given("--rounds")) o.rounds = f.rounds;
  if (given("--seed")) o.seed = f.seed;
  if (given("--out")) o.out = f.out;
  if (given("--idx-images")) o.idx_images = f.idx_images;
  if (given("--idx-labels")) o.idx_labels = f.idx_labels;
  if (given("--idx-test-images")) o.idx_test_images = f.idx_test_images;
  if (given("--idx-test-labels")) o.idx_test_labels = f.idx_test_labels;
  if (given("--synthetic")) o.synthetic = f.synthetic;
  std::optional<std::string> path;
  if (given("--config")) path = f.config;
  return hks::load_run_config(path, o);
}

template <typename T, typename Parse>
std::vector<T> parse_list(const std::string& csv, Parse parse) {
  std::vector<T> out;
  for (const auto& tok : hks::detail::split(csv, ',')) out.push_back(parse(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated learning simulator with hierarchical knowledge structuring"};
  app.require_subcommand(1);

  CommonFlags run_flags;
  auto* run = app.add_subcommand("run", "run one experiment");
  add_common(run, run_flags);
  bool checkpoints = false, cache_dump = false;
  run->add_flag("--dump-checkpoints", checkpoints, "write client_NNN.hksmodel checkpoints");
  run->add_flag("--dump-cache", cache_dump, "write the knowledge cache snapshot to cache.txt");

  CommonFlags sweep_flags;
  auto* sweep = app.add_subcommand("sweep", "run a cross-product of methods, hyperparameters and seeds");
  add_common(sweep, sweep_flags);
  std::string methods = "fedavg,feddistill,fedcache,hks", granularities = "top,middle,bottom,all",
              rs = "1,4,16,64,256", tiers = "small,medium,large", seeds = "0";
  sweep->add_option("--methods", methods, "comma-separated methods")->capture_default_str();
  sweep->add_option("--granularities", granularities, "HKS granularities")->capture_default_str();
  sweep->add_option("--Rs", rs, "FedCache R values")->capture_default_str();
  sweep->add_option("--fedavg-tiers", tiers, "FedAvg model tiers")->capture_default_str();
  sweep->add_option("--seeds", seeds, "comma-separated seeds")->capture_default_str();

  std::string report_dir;
  auto* report = app.add_subcommand("report", "re-render summaries from stored run directories");
  report->add_option("dir", report_dir, "sweep or run directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto rc = resolve(run, run_flags);
      rc.dump_checkpoints = rc.dump_checkpoints || checkpoints;
      rc.dump_cache = rc.dump_cache || cache_dump;
      const auto out = hks::execute_run(rc);
      const auto& s = out.result.summary;
      std::printf("%s: maua=%s final_global_acc=%s (%d rounds, %.2fs) -> %s\n",
                  hks::run_name(rc.fed).c_str(), hks::opt_cell(s.maua).c_str(),
                  hks::opt_cell(s.final_global_acc).c_str(), s.rounds_run, out.wall_seconds, rc.out_dir.c_str());
    } else if (*sweep) {
      auto base = resolve(sweep, sweep_flags);
      hks::SweepSpec spec;
      spec.methods = parse_list<hks::Method>(methods, [](const std::string& s) { return hks::parse_method(s); });
      spec.granularities =
          parse_list<hks::Granularity>(granularities, [](const std::string& s) { return hks::parse_granularity(s); });
      spec.Rs = parse_list<std::size_t>(rs, [](const std::string& s) { return std::stoul(s); });
      spec.fedavg_tiers =
          parse_list<hks::CapacityTier>(tiers, [](const std::string& s) { return hks::parse_tier(s); });
      spec.seeds = parse_list<std::uint64_t>(seeds, [](const std::string& s) { return std::stoull(s); });
      const auto runs = hks::run_sweep(base, spec);
      std::printf("%zu runs written under %s\n", runs.size(), base.out_dir.c_str());
      std::fputs(hks::render_report_table(hks::build_report(base.out_dir)).c_str(), stdout);
    } else if (*report) {
      const auto rows = hks::build_report(report_dir);
      hks::write_text(hks::fs::path(report_dir) / "report.csv", hks::render_report_csv(rows));
      std::fputs(hks::render_report_table(rows).c_str(), stdout);
    }
  } catch (const hks::Error& e) {
    std::fprintf(stderr, "hks: %s\n", e.what());
    return hks::exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "hks: %s\n", e.what());
    return 1;
  }
  return 0;
}
