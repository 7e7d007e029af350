#pragma once

// The round engine. Every round: clients train locally (pure cross-entropy
// during warm-up, cross-entropy plus distillation from method-specific
// teachers afterwards), upload per-sample logits or parameters, the server
// applies uploads in client order at the barrier and rebuilds whatever its
// method needs (hierarchy, class table, averaged model), then every client
// is evaluated.

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hks/data.hpp"
#include "hks/error.hpp"
#include "hks/knowledge.hpp"
#include "hks/metrics.hpp"
#include "hks/models.hpp"
#include "hks/numerics.hpp"
#include "hks/random.hpp"

namespace hks {

enum class Method { LocalOnly, FedAvg, FedDistill, FedCache, HKS };

inline std::string_view to_string(Method m) {
  switch (m) {
    case Method::LocalOnly: return "localonly";
    case Method::FedAvg: return "fedavg";
    case Method::FedDistill: return "feddistill";
    case Method::FedCache: return "fedcache";
    case Method::HKS: return "hks";
  }
  return "hks";
}

inline Method parse_method(std::string_view s) {
  if (s == "localonly" || s == "local") return Method::LocalOnly;
  if (s == "fedavg") return Method::FedAvg;
  if (s == "feddistill") return Method::FedDistill;
  if (s == "fedcache") return Method::FedCache;
  if (s == "hks") return Method::HKS;
  fail(ErrorKind::InvalidInput, "unknown method '" + std::string(s) + "'");
}

inline bool shares_logits(Method m) {
  return m == Method::FedDistill || m == Method::FedCache || m == Method::HKS;
}

inline bool uses_labels(Method m) { return m == Method::FedDistill || m == Method::FedCache; }

// Where each client's local test data comes from: a stratified split of its
// own shard, or a Dirichlet partition of the global test set drawn with the
// same per-class proportions as the training partition.
enum class LocalTestSource { Shard, GlobalPartition };

inline std::string_view to_string(LocalTestSource s) {
  return s == LocalTestSource::Shard ? "shard" : "global_partition";
}

inline LocalTestSource parse_local_test_source(std::string_view s) {
  if (s == "shard") return LocalTestSource::Shard;
  if (s == "global_partition") return LocalTestSource::GlobalPartition;
  fail(ErrorKind::InvalidInput, "unknown local test source '" + std::string(s) + "'");
}

struct FederationConfig {
  Method method = Method::HKS;
  int n_clients = 20;
  int rounds = 18;
  int local_epochs = 1;
  int warmup_rounds = 10;
  double lr = 0.01;
  std::size_t batch_size = 8;
  KdConfig kd;
  Granularity granularity = Granularity::Middle;
  std::size_t R = 16;
  double alpha_dir = 1.0;
  std::uint64_t seed = 0;
  bool exclude_self = true;
  std::optional<std::size_t> min_per_client;  // defaults to 2 * batch_size
  double test_fraction = 0.2;
  LocalTestSource local_test_source = LocalTestSource::Shard;
  CapacityTier fedavg_tier = CapacityTier::Small;
  std::size_t d_hash = 32;
  HnswParams hnsw;
  HierarchyOptions hierarchy;

  std::size_t effective_min_per_client() const { return min_per_client.value_or(2 * batch_size); }

  void validate() const {
    auto bad = [](const char* key, const std::string& why) {
      fail(ErrorKind::Config, "'" + std::string(key) + "': " + why);
    };
    if (n_clients < 1) bad("n_clients", "must be >= 1");
    if (rounds < 0) bad("rounds", "must be >= 0");
    if (local_epochs < 1) bad("local_epochs", "must be >= 1");
    if (warmup_rounds < 0) bad("warmup_rounds", "must be >= 0");
    if (warmup_rounds > rounds) bad("warmup_rounds", "must not exceed rounds");
    if (!(lr > 0.0)) bad("lr", "must be > 0");
    if (batch_size < 1) bad("batch_size", "must be >= 1");
    if (!(kd.temperature > 0.0)) bad("temperature", "must be > 0");
    if (!(kd.alpha_kd >= 0.0)) bad("alpha_kd", "must be >= 0");
    if (R < 1) bad("R", "must be >= 1");
    if (!(alpha_dir > 0.0)) bad("alpha_dir", "must be > 0");
    if (!(test_fraction > 0.0 && test_fraction < 1.0)) bad("test_fraction", "must be in (0, 1)");
    if (d_hash < 1) bad("d_hash", "must be >= 1");
    if (hnsw.M < 2) bad("hnsw_M", "must be >= 2");
    if (hnsw.ef_construction < 1) bad("hnsw_ef_construction", "must be >= 1");
    if (hnsw.ef_search < 1) bad("hnsw_ef_search", "must be >= 1");
  }
};

struct FederatedData {
  Dataset train;
  Dataset global_test;
};

struct ClientState {
  int client_id = 0;
  CapacityTier tier = CapacityTier::Small;
  Model model;
  ClientShard shard;
};

struct FederationState {
  FederationConfig config;
  std::vector<ClientState> clients;
  KnowledgeCache cache;
  std::shared_ptr<const ClusterTree> tree;
  Dataset global_test;
  int round = 0;

  int num_classes() const { return cache.num_classes(); }
};

inline FederationState init_federation(const FederationConfig& cfg, const FederatedData& data) {
  cfg.validate();
  const Dataset& train = data.train;
  train.validate();
  data.global_test.validate();
  if (train.empty()) fail(ErrorKind::EmptyDataset, "training set is empty");
  if (data.global_test.empty()) fail(ErrorKind::EmptyDataset, "global test set is empty");
  if (data.global_test.num_classes != train.num_classes || data.global_test.input_dim != train.input_dim)
    fail(ErrorKind::Shape, "global test set does not match the training set's shape");

  const PartitionSpec spec{cfg.n_clients, cfg.alpha_dir, cfg.seed, cfg.effective_min_per_client()};
  const auto parts = dirichlet_partition(train, spec);
  std::vector<std::vector<std::size_t>> test_parts;
  if (cfg.local_test_source == LocalTestSource::GlobalPartition)
    test_parts = dirichlet_partition(data.global_test, {cfg.n_clients, cfg.alpha_dir, cfg.seed, 1});

  CacheConfig cache_cfg;
  cache_cfg.d_hash = cfg.d_hash;
  cache_cfg.hnsw = cfg.hnsw;
  cache_cfg.hnsw.seed = derive_seed(cfg.seed, {stream::kHnsw});
  cache_cfg.encoder_seed = derive_seed(cfg.seed, {stream::kEncoder});
  cache_cfg.store_labels = uses_labels(cfg.method);

  FederationState state{cfg, {}, KnowledgeCache(train.num_classes, static_cast<std::size_t>(train.input_dim), cache_cfg),
                        nullptr, data.global_test, 0};
  state.clients.reserve(parts.size());
  for (int k = 0; k < cfg.n_clients; ++k) {
    const auto& part = parts[static_cast<std::size_t>(k)];
    ClientState c;
    c.client_id = k;
    if (cfg.local_test_source == LocalTestSource::Shard) {
      c.shard = split_local_test(part, train, cfg.test_fraction, cfg.seed, k);
    } else {
      if (part.empty()) fail(ErrorKind::EmptyShard, "client " + std::to_string(k) + " has no samples");
      c.shard.client_id = k;
      c.shard.train_source = part;
      c.shard.train = subset(train, part);
      c.shard.test_source = test_parts[static_cast<std::size_t>(k)];
      c.shard.local_test = subset(data.global_test, c.shard.test_source);
    }
    if (c.shard.train.empty()) fail(ErrorKind::EmptyShard, "client " + std::to_string(k) + " has no training samples");
    if (c.shard.local_test.empty())
      fail(ErrorKind::EmptyShard, "client " + std::to_string(k) +
                                      " has no local test samples; raise min_per_client or test_fraction");

    const bool homogeneous = cfg.method == Method::FedAvg;
    c.tier = homogeneous ? cfg.fedavg_tier : tier_for_client(k);
    const auto model_seed =
        derive_seed(cfg.seed, {stream::kModelInit, homogeneous ? 0u : static_cast<std::uint64_t>(k) + 1});
    c.model = build_model(c.tier, train.input_dim, train.num_classes, model_seed);
    state.clients.push_back(std::move(c));
  }

  for (const auto& c : state.clients)
    for (std::size_t i = 0; i < c.shard.train.size(); ++i)
      state.cache.register_sample(SampleId{c.client_id, static_cast<int>(i)}, c.shard.train.samples[i].x,
                                  c.shard.train.samples[i].label);
  if (cfg.method == Method::FedCache) state.cache.precompute_neighbors(cfg.R);
  return state;
}

struct ClientTrainResult {
  Model model;
  LossBreakdown loss;          // sample-weighted mean over the round
  std::vector<Logits> logits;  // last forward output of every training sample
  std::size_t teacher_fetches = 0;
};

// Teachers for one training sample, or an empty set when none is available.
inline TeacherSet teachers_for(const ClientState& client, const FederationState& state, std::size_t local_index) {
  const auto& cfg = state.config;
  const SampleId id{client.client_id, static_cast<int>(local_index)};
  switch (cfg.method) {
    case Method::HKS:
      return fetch_teacher(state.cache, *state.tree, id, cfg.granularity, cfg.exclude_self);
    case Method::FedDistill:
      if (auto t = state.cache.feddistill_teacher(client.shard.train.samples[local_index].label, client.client_id))
        return {std::move(*t)};
      return {};
    case Method::FedCache:
      if (auto t = state.cache.fedcache_teacher(id, cfg.R)) return {std::move(*t)};
      return {};
    case Method::LocalOnly:
    case Method::FedAvg:
      return {};
  }
  return {};
}

inline ClientTrainResult client_train(const ClientState& client, const FederationState& state, int round) {
  const auto& cfg = state.config;
  const auto& train = client.shard.train;

  bool distill = round >= cfg.warmup_rounds && shares_logits(cfg.method);
  if (distill && cfg.method == Method::HKS && !state.tree) {
    // The first hierarchy is built at the end of round W.
    if (round > cfg.warmup_rounds) fail(ErrorKind::StaleHierarchy, "no hierarchy after warm-up");
    distill = false;
  }

  ClientTrainResult out;
  out.model = client.model;
  out.logits.assign(train.size(), {});
  double ce = 0.0, kd = 0.0, seen = 0.0;

  std::vector<Sample> batch;
  std::vector<TeacherSet> teachers;
  for (int e = 0; e < cfg.local_epochs; ++e) {
    const auto epoch = static_cast<std::uint64_t>(round) * static_cast<std::uint64_t>(cfg.local_epochs) +
                       static_cast<std::uint64_t>(e);
    for (const auto& positions : batches(client.shard, cfg.batch_size, cfg.seed, epoch)) {
      batch.clear();
      teachers.clear();
      for (auto p : positions) {
        batch.push_back(train.samples[p]);
        if (distill) {
          teachers.push_back(teachers_for(client, state, p));
          ++out.teacher_fetches;
        }
      }
      auto step = train_batch(std::move(out.model), batch, teachers, cfg.kd, cfg.lr);
      out.model = std::move(step.model);
      const double n = static_cast<double>(positions.size());
      ce += step.loss.ce * n;
      kd += step.loss.kd * n;
      seen += n;
      for (std::size_t i = 0; i < positions.size(); ++i) out.logits[positions[i]] = std::move(step.logits[i]);
    }
  }
  out.loss.ce = ce / seen;
  out.loss.kd = kd / seen;
  out.loss.total = out.loss.ce + cfg.kd.alpha_kd * out.loss.kd;
  return out;
}

inline RoundReport run_round(FederationState& state) {
  const auto& cfg = state.config;
  if (state.round >= cfg.rounds) fail(ErrorKind::InvalidInput, "all rounds have already run");
  const int round = state.round;

  RoundReport report;
  report.round = round;
  report.teacher_tree_round = state.tree ? state.tree->built_round : -1;

  // Client phase: every client reads the same snapshot of server state.
  std::vector<ClientTrainResult> results;
  results.reserve(state.clients.size());
  for (const auto& c : state.clients) results.push_back(client_train(c, state, round));

  // Barrier: apply uploads in client order.
  double ce = 0.0, kd = 0.0;
  for (std::size_t k = 0; k < state.clients.size(); ++k) {
    auto& c = state.clients[k];
    auto& r = results[k];
    ce += r.loss.ce;
    kd += r.loss.kd;
    report.teacher_fetches += r.teacher_fetches;
    c.model = std::move(r.model);
    if (shares_logits(cfg.method))
      for (std::size_t i = 0; i < r.logits.size(); ++i)
        state.cache.update(SampleId{c.client_id, static_cast<int>(i)}, std::move(r.logits[i]), round);
  }
  const double n = static_cast<double>(state.clients.size());
  report.mean_ce = ce / n;
  report.mean_kd = kd / n;

  // Server phase.
  switch (cfg.method) {
    case Method::HKS:
      if (round >= cfg.warmup_rounds) {
        state.tree = std::make_shared<const ClusterTree>(
            build_hierarchy(state.cache, static_cast<std::size_t>(state.num_classes()), cfg.hierarchy, round));
        report.hierarchy_built = true;
      }
      break;
    case Method::FedDistill: state.cache.refresh_class_table(); break;
    case Method::FedAvg: {
      std::vector<Model> models;
      std::vector<std::size_t> sizes;
      for (const auto& c : state.clients) {
        models.push_back(c.model);
        sizes.push_back(c.shard.train.size());
      }
      const auto global = fedavg_aggregate(models, weights_from_sizes(sizes));
      for (auto& c : state.clients) c.model = global;
      break;
    }
    case Method::FedCache:
    case Method::LocalOnly: break;
  }

  for (const auto& c : state.clients) {
    report.per_client_local_acc.push_back(evaluate(c.model, c.shard.local_test));
    report.global_acc_per_client.push_back(evaluate(c.model, state.global_test));
  }
  ++state.round;
  return report;
}

struct ExperimentResult {
  std::vector<RoundReport> reports;
  ExperimentSummary summary;
  std::vector<Model> final_models;
};

inline ExperimentResult run_experiment(const FederationConfig& cfg, const FederatedData& data) {
  auto state = init_federation(cfg, data);
  ExperimentResult out;
  out.reports.reserve(static_cast<std::size_t>(cfg.rounds));
  while (state.round < cfg.rounds) out.reports.push_back(run_round(state));
  out.summary = summarize(out.reports);
  for (auto& c : state.clients) out.final_models.push_back(std::move(c.model));
  return out;
}

}  // namespace hks
