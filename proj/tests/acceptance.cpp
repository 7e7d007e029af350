// Acceptance suite: one PASS/FAIL/WARN/SKIP line per criterion. Exits nonzero
// if any criterion fails. Set HKS_FMNIST_DIR to a directory holding the
// FashionMNIST IDX files to enable criterion 9.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "hks/report.hpp"
#include "oracles.hpp"

using namespace hks;
namespace fs = std::filesystem;

namespace {

enum class Status { Pass, Fail, Warn, Skip };

struct Outcome {
  Status status;
  std::string detail;
};

const char* label(Status s) {
  switch (s) {
    case Status::Pass: return "PASS";
    case Status::Fail: return "FAIL";
    case Status::Warn: return "WARN";
    case Status::Skip: return "SKIP";
  }
  return "FAIL";
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Logits random_logits(Rng& rng, std::size_t c) {
  Logits z(c);
  for (auto& v : z) v = 3.0 * rng.normal();
  return z;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / "hks_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// ---------------------------------------------------------------------------

Outcome gradient_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(1001);
  double worst_ce = 0.0, worst_kd = 0.0, worst_train = 0.0;
  for (int i = 0; i < 100; ++i) {
    const std::size_t c = 2 + rng.below(9);
    const auto z = random_logits(rng, c);
    const int y = static_cast<int>(rng.below(c));
    const auto num = finite_diff([&](std::span<const double> p) { return cross_entropy(p, y); }, z);
    worst_ce = std::max(worst_ce, relative_error(ce_grad(z, y), num));
  }
  for (int i = 0; i < 100; ++i) {
    const std::size_t c = 2 + rng.below(9);
    const auto zs = random_logits(rng, c), zt = random_logits(rng, c);
    const KdConfig cfg{0.5 + 4.5 * rng.uniform(), 1.5, i % 2 == 0};
    const auto num = finite_diff([&](std::span<const double> p) { return kd_loss(p, zt, cfg); }, zs);
    worst_kd = std::max(worst_kd, relative_error(kd_grad(zs, zt, cfg), num));
  }
  for (int i = 0; i < 100; ++i) {
    const int dim = 2 + static_cast<int>(rng.below(5));
    const auto m = build_model(CapacityTier::Small, dim, 3, rng.next_u64());
    std::vector<Sample> batch(1 + rng.below(4));
    std::vector<TeacherSet> teachers;
    for (auto& s : batch) {
      s.x.resize(static_cast<std::size_t>(dim));
      for (auto& v : s.x) v = rng.normal();
      s.label = static_cast<int>(rng.below(3));
      TeacherSet t;
      for (std::size_t k = rng.below(3); k > 0; --k) t.push_back(random_logits(rng, 3));
      teachers.push_back(std::move(t));
    }
    const KdConfig cfg{3.0, 1.5, true};
    const auto analytic = batch_gradient(m, batch, teachers, cfg).grad;
    Model probe = m;
    const auto num = finite_diff(
        [&](std::span<const double> p) {
          probe.params.assign(p.begin(), p.end());
          return batch_loss(probe, batch, teachers, cfg);
        },
        m.params, 1e-6);
    worst_train = std::max(worst_train, relative_error(analytic, num));
  }
  const double secs = seconds_since(t0);
  const bool ok = worst_ce < 1e-4 && worst_kd < 1e-4 && worst_train < 1e-4 && secs < 10.0;
  return {ok ? Status::Pass : Status::Fail, "worst rel err ce " + fmt("%.2e", worst_ce) + ", kd " +
                                                fmt("%.2e", worst_kd) + ", train_batch " + fmt("%.2e", worst_train) +
                                                " (limit 1e-4); " + fmt("%.2f", secs) + " s (limit 10 s)"};
}

Outcome clustering_oracle() {
  Rng rng(2002);
  int mismatches = 0;
  double worst_height = 0.0;
  for (int i = 0; i < 50; ++i) {
    const std::size_t n = 4 + rng.below(29);
    const std::size_t d = i % 2 == 0 ? 2 : 10;
    std::vector<std::vector<double>> pts(n, std::vector<double>(d));
    for (auto& p : pts)
      for (auto& v : p) v = rng.normal();
    const auto fast = agglomerate(pts, 1).merges();
    const auto slow = testing::naive_average(pts);
    bool same = fast.size() == slow.size();
    for (std::size_t k = 0; same && k < fast.size(); ++k) {
      same = fast[k].left == slow[k].left && fast[k].right == slow[k].right && fast[k].size == slow[k].size;
      worst_height = std::max(worst_height, std::abs(fast[k].height - slow[k].height));
    }
    mismatches += !same;
  }
  const std::vector<std::vector<double>> line{{0.0}, {0.1}, {10.0}, {10.1}};
  auto cut = agglomerate(line, 2).cut(2);
  std::sort(cut.begin(), cut.end());
  const bool example = cut == std::vector<std::vector<std::size_t>>{{0, 1}, {2, 3}};
  const bool ok = mismatches == 0 && worst_height <= 1e-9 && example;
  return {ok ? Status::Pass : Status::Fail, std::to_string(50 - mismatches) + "/50 merge sequences identical, max " +
                                                "height diff " + fmt("%.1e", worst_height) + " (limit 1e-9); " +
                                                "4-point cut_2 " + (example ? "{{0,0.1},{10,10.1}}" : "WRONG")};
}

Outcome ann_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(3003);
  auto point = [&] {
    std::vector<double> p(32);
    for (auto& v : p) v = rng.normal();
    return p;
  };
  std::vector<std::vector<double>> pts;
  std::vector<int> keys;
  HnswIndex<int> index(32, {16, 200, 64, 3003});
  for (int i = 0; i < 1000; ++i) {
    pts.push_back(point());
    keys.push_back(i);
    index.insert(i, pts.back());
  }
  std::size_t hits = 0;
  for (int q = 0; q < 100; ++q) {
    const auto v = point();
    const auto truth = exact_knn<int>(keys, pts, v, 10);
    const std::set<int> t(truth.begin(), truth.end());
    for (int k : index.query(v, 10)) hits += t.contains(k);
  }
  const double recall = static_cast<double>(hits) / 1000.0;
  const double secs = seconds_since(t0);
  const bool ok = recall >= 0.95 && secs < 5.0;
  return {ok ? Status::Pass : Status::Fail,
          "recall@10 " + fmt("%.3f", recall) + " (min 0.95); " + fmt("%.2f", secs) + " s (limit 5 s)"};
}

Outcome partition_properties() {
  Dataset ds{{}, 10, 1};
  for (int c = 0; c < 10; ++c)
    for (int i = 0; i < 60; ++i) ds.samples.push_back({{0.0}, c});
  Rng rng(4004);
  int bad = 0;
  for (int t = 0; t < 50; ++t) {
    const int n = 1 + static_cast<int>(rng.below(30));
    const double alpha = std::exp(rng.uniform(std::log(0.01), std::log(1e4)));
    const auto shards = dirichlet_partition(ds, {n, alpha, rng.next_u64(), 0});
    std::vector<int> hits(ds.size(), 0);
    for (const auto& s : shards)
      for (auto i : s) ++hits[i];
    bad += shards.size() != static_cast<std::size_t>(n) ||
           std::any_of(hits.begin(), hits.end(), [](int h) { return h != 1; });
  }
  auto mean_entropy = [&](double alpha) {
    double sum = 0.0;
    int count = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed)
      for (const auto& s : dirichlet_partition(ds, {10, alpha, seed, 0})) {
        sum += label_entropy(ds, s);
        ++count;
      }
    return sum / count;
  };
  const double h_low = mean_entropy(0.5), h_high = mean_entropy(1000.0);
  const bool ok = bad == 0 && h_low < h_high;
  return {ok ? Status::Pass : Status::Fail, std::to_string(50 - bad) + "/50 partitions disjoint and complete; " +
                                                "mean label entropy alpha=0.5 " + fmt("%.3f", h_low) +
                                                " < alpha=1000 " + fmt("%.3f", h_high)};
}

Outcome metric_arithmetic() {
  const bool maua_ok = maua({{0.5, 0.7}, {0.8, 0.6}}) == 0.7;
  const auto zero = make_mlp({1, 2});
  Dataset zeros{{{{0.0}, 0}, {{1.0}, 0}}, 2, 1}, ones{{{{0.0}, 1}, {{1.0}, 1}}, 2, 1};
  auto threshold = make_mlp({1, 2});
  threshold.params = {0.0, 1.0, 0.0, -0.5};
  Dataset crafted{{{{0.0}, 0}, {{1.0}, 1}, {{0.4}, 0}, {{0.6}, 0}}, 2, 1};
  const bool eval_ok =
      evaluate(zero, zeros) == 1.0 && evaluate(zero, ones) == 0.0 && evaluate(threshold, crafted) == 0.75;
  return {maua_ok && eval_ok ? Status::Pass : Status::Fail,
          std::string("maua([[0.5,0.7],[0.8,0.6]]) ") + (maua_ok ? "= 0.7" : "!= 0.7") + "; evaluate golden cases " +
              (eval_ok ? "exact" : "WRONG")};
}

FederatedData blobs(int classes, int per_class, int dim, double spread, std::uint64_t seed) {
  DatasetSpec d;
  d.num_classes = classes;
  d.per_class = per_class;
  d.input_dim = dim;
  d.spread = spread;
  return load_data(d, seed);
}

Outcome warmup_and_ablation() {
  const auto data = blobs(4, 60, 16, 0.3, 6);
  FederationConfig base;
  base.n_clients = 6;
  base.rounds = 7;
  base.warmup_rounds = 4;
  base.alpha_dir = 1.0;
  base.R = 4;
  base.seed = 6;
  int violations = 0;
  for (auto m : {Method::LocalOnly, Method::FedAvg, Method::FedDistill, Method::FedCache, Method::HKS}) {
    auto cfg = base;
    cfg.method = m;
    const auto r = run_experiment(cfg, data);
    for (const auto& rep : r.reports)
      if (rep.round < cfg.warmup_rounds && (rep.mean_kd != 0.0 || rep.teacher_fetches != 0)) ++violations;
  }
  int differing = 0, compared = 0;
  for (auto g : {Granularity::Top, Granularity::Middle, Granularity::Bottom, Granularity::All}) {
    auto hks = base;
    hks.method = Method::HKS;
    hks.granularity = g;
    hks.kd.alpha_kd = 0.0;
    auto local = base;
    local.method = Method::LocalOnly;
    const auto a = run_experiment(hks, data).final_models;
    const auto b = run_experiment(local, data).final_models;
    for (std::size_t k = 0; k < a.size(); ++k, ++compared) differing += checkpoint_bytes(a[k]) != checkpoint_bytes(b[k]);
  }
  const bool ok = violations == 0 && differing == 0;
  return {ok ? Status::Pass : Status::Fail,
          std::to_string(violations) + " warm-up rounds with KD across 5 methods; " +
              std::to_string(compared - differing) + "/" + std::to_string(compared) +
              " HKS(alpha_kd=0) checkpoints bit-identical to LocalOnly"};
}

struct NamedConfig {
  std::string name;
  FederationConfig cfg;
};

std::vector<NamedConfig> logit_methods(const FederationConfig& base) {
  std::vector<NamedConfig> out;
  auto add = [&](std::string name, Method m, Granularity g = Granularity::Middle) {
    auto c = base;
    c.method = m;
    c.granularity = g;
    out.push_back({std::move(name), c});
  };
  add("FedDistill", Method::FedDistill);
  add("FedCache(R=" + std::to_string(base.R) + ")", Method::FedCache);
  add("HKS(top)", Method::HKS, Granularity::Top);
  add("HKS(middle)", Method::HKS, Granularity::Middle);
  add("HKS(bottom)", Method::HKS, Granularity::Bottom);
  add("HKS(all)", Method::HKS, Granularity::All);
  return out;
}

Outcome easy_end_to_end() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto data = blobs(4, 200, 16, 0.3, 0);
  FederationConfig base;
  base.n_clients = 6;
  base.alpha_dir = 1000.0;
  base.rounds = 15;
  base.warmup_rounds = 5;
  base.R = 4;
  std::string detail;
  bool ok = true;
  for (const auto& nc : logit_methods(base)) {
    const auto r = run_experiment(nc.cfg, data);
    const double acc = *r.summary.final_global_acc;
    ok = ok && acc >= 0.90;
    detail += nc.name + " " + fmt("%.3f", acc) + ", ";
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < 120.0;
  return {ok ? Status::Pass : Status::Fail,
          "final global acc " + detail + "min 0.90; " + fmt("%.1f", secs) + " s (limit 120 s)"};
}

Outcome directional_heterogeneity() {
  FederationConfig base;
  // Criterion 7's task with alpha_dir, client count and rounds changed; W = 5 carries over.
  base.n_clients = 10;
  base.alpha_dir = 0.5;
  base.rounds = 18;
  base.warmup_rounds = 5;
  base.R = 4;
  auto configs = logit_methods(base);
  configs.erase(configs.begin() + 1);  // FedCache is not part of this comparison
  {
    auto c = base;
    c.method = Method::LocalOnly;
    configs.push_back({"LocalOnly", c});
  }
  std::vector<std::vector<double>> maua_by(configs.size());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto data = blobs(4, 200, 16, 0.3, seed);
    for (std::size_t i = 0; i < configs.size(); ++i) {
      auto cfg = configs[i].cfg;
      cfg.seed = seed;
      maua_by[i].push_back(*run_experiment(cfg, data).summary.maua);
    }
  }
  std::printf("       %-12s", "seed");
  for (const auto& c : configs) std::printf(" %12s", c.name.c_str());
  std::printf("\n");
  for (std::size_t s = 0; s < 5; ++s) {
    std::printf("       %-12zu", s);
    for (const auto& col : maua_by) std::printf(" %12.4f", col[s]);
    std::printf("\n");
  }
  std::vector<double> means;
  std::printf("       %-12s", "mean");
  for (const auto& col : maua_by) {
    means.push_back(mean(col));
    std::printf(" %12.4f", means.back());
  }
  std::printf("\n");
  // configs: FedDistill, HKS top/middle/bottom/all, LocalOnly
  const double distill = means[0], middle = means[2], local = means.back();
  bool ok = middle >= distill - 0.01;
  for (std::size_t i = 1; i <= 4; ++i) ok = ok && means[i] >= local;
  return {ok ? Status::Pass : Status::Warn, "mean MAUA HKS(middle) " + fmt("%.4f", middle) + " vs FedDistill " +
                                                fmt("%.4f", distill) + " - 0.01; every HKS granularity vs LocalOnly " +
                                                fmt("%.4f", local)};
}

std::optional<std::string> find_idx(const fs::path& dir, const std::string& stem) {
  for (const auto& name : {stem, stem + ".gz"})
    if (fs::exists(dir / name)) return (dir / name).string();
  return std::nullopt;
}

Outcome fashion_mnist_smoke() {
  const char* env = std::getenv("HKS_FMNIST_DIR");
  if (!env) return {Status::Skip, "HKS_FMNIST_DIR not set; FashionMNIST IDX files unavailable"};
  const fs::path dir(env);
  const auto img = find_idx(dir, "train-images-idx3-ubyte"), lbl = find_idx(dir, "train-labels-idx1-ubyte");
  const auto timg = find_idx(dir, "t10k-images-idx3-ubyte"), tlbl = find_idx(dir, "t10k-labels-idx1-ubyte");
  if (!img || !lbl) return {Status::Skip, "no train-*-idx files in " + dir.string()};
  const auto t0 = std::chrono::steady_clock::now();
  DatasetSpec d;
  d.kind = DatasetSpec::Kind::Idx;
  d.images = *img;
  d.labels = *lbl;
  if (timg && tlbl) {
    d.test_images = *timg;
    d.test_labels = *tlbl;
  }
  d.max_train = 2000;
  d.max_test = 2000;
  const auto data = load_data(d, 0);
  FederationConfig base;
  base.n_clients = 10;
  base.alpha_dir = 1.0;
  base.rounds = 18;
  auto hks = base;
  hks.method = Method::HKS;
  hks.granularity = Granularity::All;
  auto fedavg = base;
  fedavg.method = Method::FedAvg;
  fedavg.fedavg_tier = CapacityTier::Small;
  const double m_hks = *run_experiment(hks, data).summary.maua;
  const double m_avg = *run_experiment(fedavg, data).summary.maua;
  const double secs = seconds_since(t0);
  const bool ok = m_hks - m_avg >= 0.10 && secs < 600.0;
  return {ok ? Status::Pass : Status::Fail, "MAUA HKS(all) " + fmt("%.4f", m_hks) + " vs FedAvg(small) " +
                                                fmt("%.4f", m_avg) + " (gap >= 0.10 required); " +
                                                fmt("%.1f", secs) + " s (limit 600 s)"};
}

Outcome determinism() {
  int differing = 0, runs = 0;
  for (auto m : {Method::LocalOnly, Method::FedAvg, Method::FedDistill, Method::FedCache, Method::HKS}) {
    RunConfig rc;
    rc.fed.method = m;
    rc.fed.n_clients = 5;
    rc.fed.rounds = 6;
    rc.fed.warmup_rounds = 3;
    rc.fed.R = 4;
    rc.fed.seed = 11;
    rc.dataset.num_classes = 4;
    rc.dataset.per_class = 50;
    rc.dataset.input_dim = 8;
    rc.dataset.spread = 0.4;
    std::string outputs[2];
    for (int rep = 0; rep < 2; ++rep) {
      rc.out_dir = scratch(std::string(to_string(m)) + "-" + std::to_string(rep)).string();
      execute_run(rc);
      auto summary = read_json_file((fs::path(rc.out_dir) / "summary.json").string());
      summary.erase("wall_seconds");
      std::ifstream in(fs::path(rc.out_dir) / "rounds.csv", std::ios::binary);
      outputs[rep] = std::string(std::istreambuf_iterator<char>(in), {}) + summary.dump();
    }
    ++runs;
    differing += outputs[0] != outputs[1];
  }
  return {differing == 0 ? Status::Pass : Status::Fail,
          std::to_string(runs - differing) + "/" + std::to_string(runs) +
              " methods byte-identical rounds.csv and summary.json (wall_seconds excluded)"};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient oracle", gradient_oracle},
      {"clustering oracle", clustering_oracle},
      {"ANN oracle", ann_oracle},
      {"partition properties", partition_properties},
      {"metric arithmetic", metric_arithmetic},
      {"warm-up and ablation identities", warmup_and_ablation},
      {"end-to-end easy case", easy_end_to_end},
      {"directional heterogeneity check", directional_heterogeneity},
      {"scaled FashionMNIST smoke", fashion_mnist_smoke},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {Status::Fail, std::string("exception: ") + e.what()};
    }
    failures += o.status == Status::Fail;
    std::printf("%s [%zu] %s: %s [%.2f s]\n", label(o.status), i + 1, criteria[i].first.c_str(), o.detail.c_str(),
                seconds_since(t0));
    std::fflush(stdout);
  }
  std::printf("%d criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
