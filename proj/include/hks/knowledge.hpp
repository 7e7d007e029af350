#pragma once

// Server-side knowledge cache: the latest logits of every training sample,
// a fixed random-projection hash per sample with an HNSW index over the
// hashes, and the cluster hierarchy built over cached logits from which
// clients fetch teacher knowledge at a chosen granularity. Also hosts the
// label-based teacher rules of the FedDistill and FedCache baselines.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdio>
#include <map>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hks/dendrogram.hpp"
#include "hks/error.hpp"
#include "hks/hnsw.hpp"
#include "hks/numerics.hpp"
#include "hks/random.hpp"

namespace hks {

struct SampleId {
  int client_id = 0;
  int local_index = 0;

  friend auto operator<=>(const SampleId&, const SampleId&) = default;
};

inline std::string to_string(const SampleId& id) {
  return "(" + std::to_string(id.client_id) + "," + std::to_string(id.local_index) + ")";
}

struct LogitRecord {
  SampleId id;
  std::optional<Logits> logits;  // absent until the first upload
  std::optional<int> label;      // only stored for label-based baselines
  int round_updated = -1;
};

struct HashVector {
  SampleId id;
  std::vector<double> h;
};

// h = normalize(P x) with P a seeded d_hash x input_dim Gaussian matrix.
class HashEncoder {
 public:
  HashEncoder(std::size_t input_dim, std::size_t d_hash, std::uint64_t seed)
      : input_dim_(input_dim), d_hash_(d_hash), projection_(input_dim * d_hash) {
    if (input_dim == 0 || d_hash == 0) fail(ErrorKind::Shape, "encoder dimensions must be positive");
    Rng rng(derive_seed(seed, {stream::kEncoder}));
    for (auto& v : projection_) v = rng.normal();
  }

  std::size_t input_dim() const { return input_dim_; }
  std::size_t d_hash() const { return d_hash_; }

  std::vector<double> project(std::span<const double> x) const {
    if (x.size() != input_dim_) fail(ErrorKind::Shape, "encoder input has wrong dimension");
    std::vector<double> h(d_hash_, 0.0);
    double norm = 0.0;
    for (std::size_t r = 0; r < d_hash_; ++r) {
      const double* row = projection_.data() + r * input_dim_;
      double s = 0.0;
      for (std::size_t i = 0; i < input_dim_; ++i) {
        if (!std::isfinite(x[i])) fail(ErrorKind::InvalidInput, "non-finite feature");
        s += row[i] * x[i];
      }
      h[r] = s;
      norm += s * s;
    }
    norm = std::sqrt(norm);
    if (!(norm > 0.0)) fail(ErrorKind::DegenerateInput, "feature vector projects to zero");
    for (auto& v : h) v /= norm;
    return h;
  }

  HashVector encode(const SampleId& id, std::span<const double> x) const { return {id, project(x)}; }

 private:
  std::size_t input_dim_;
  std::size_t d_hash_;
  std::vector<double> projection_;  // row-major d_hash x input_dim
};

inline HashVector encode_hash(std::span<const double> x, std::size_t d_hash, std::uint64_t encoder_seed,
                              SampleId id = {}) {
  return HashEncoder(x.size(), d_hash, encoder_seed).encode(id, x);
}

struct CacheConfig {
  std::size_t d_hash = 32;
  HnswParams hnsw;
  std::uint64_t encoder_seed = 0;
  bool store_labels = false;
};

class KnowledgeCache {
 public:
  KnowledgeCache(int num_classes, std::size_t input_dim, CacheConfig cfg)
      : num_classes_(num_classes),
        cfg_(cfg),
        encoder_(input_dim, cfg.d_hash, cfg.encoder_seed),
        index_(cfg.d_hash, cfg.hnsw) {}

  KnowledgeCache(const KnowledgeCache&) = delete;
  KnowledgeCache& operator=(const KnowledgeCache&) = delete;
  KnowledgeCache(KnowledgeCache&& o) noexcept
      : num_classes_(o.num_classes_),
        cfg_(o.cfg_),
        encoder_(std::move(o.encoder_)),
        index_(std::move(o.index_)),
        slots_(std::move(o.slots_)),
        records_(std::move(o.records_)),
        hashes_(std::move(o.hashes_)),
        version_(o.version_),
        class_table_(std::move(o.class_table_)),
        class_table_version_(o.class_table_version_),
        neighbor_memo_(std::move(o.neighbor_memo_)),
        neighbor_memo_r_(o.neighbor_memo_r_),
        label_reads_(o.label_reads_.load()) {}

  int num_classes() const { return num_classes_; }
  std::size_t size() const { return records_.size(); }
  bool stores_labels() const { return cfg_.store_labels; }
  const CacheConfig& config() const { return cfg_; }
  const HashEncoder& encoder() const { return encoder_; }
  const HnswIndex<SampleId>& index() const { return index_; }
  const std::vector<LogitRecord>& records() const { return records_; }
  const std::vector<std::vector<double>>& hashes() const { return hashes_; }
  // Bumped by every logit update; hierarchies remember the version they saw.
  std::uint64_t version() const { return version_; }
  // Number of server-side label lookups performed by teacher rules.
  std::uint64_t label_reads() const { return label_reads_.load(); }

  // Hashes the sample, indexes the hash and creates an empty logit record.
  // The label is kept only when the cache is configured to store labels.
  void register_sample(const SampleId& id, std::span<const double> x, std::optional<int> label = std::nullopt) {
    if (slots_.contains(id)) fail(ErrorKind::InvalidInput, "sample " + to_string(id) + " registered twice");
    auto h = encoder_.project(x);
    index_.insert(id, h);
    slots_.emplace(id, records_.size());
    records_.push_back({id, std::nullopt, cfg_.store_labels ? label : std::nullopt, -1});
    hashes_.push_back(std::move(h));
    neighbor_memo_.clear();
  }

  std::size_t slot(const SampleId& id) const {
    auto it = slots_.find(id);
    if (it == slots_.end()) fail(ErrorKind::MissingSample, "sample " + to_string(id) + " is not in the cache");
    return it->second;
  }

  bool contains(const SampleId& id) const { return slots_.contains(id); }

  const LogitRecord& record(const SampleId& id) const { return records_[slot(id)]; }

  // Overwrites the sample's logits with the latest upload.
  void update(const SampleId& id, Logits z, int round) {
    auto& rec = records_[slot(id)];
    if (z.size() != static_cast<std::size_t>(num_classes_)) fail(ErrorKind::Shape, "logit length != class count");
    detail::require_finite(z);
    rec.logits = std::move(z);
    rec.round_updated = round;
    ++version_;
  }

  // Mean of all cached logits labelled y that belong to other clients.
  std::optional<Logits> feddistill_teacher(int y, int requesting_client) const {
    require_labels();
    if (y < 0 || y >= num_classes_) fail(ErrorKind::Index, "class index out of range");
    const auto C = static_cast<std::size_t>(num_classes_);
    Logits sum(C, 0.0);
    double count = 0.0;
    if (class_table_version_ == version_ && !class_table_.empty()) {
      label_reads_.fetch_add(1);
      const auto& all = class_table_[static_cast<std::size_t>(y)];
      count = all.count;
      for (std::size_t i = 0; i < C; ++i) sum[i] = all.sum[i];
      if (auto it = all.by_client.find(requesting_client); it != all.by_client.end()) {
        count -= it->second.count;
        for (std::size_t i = 0; i < C; ++i) sum[i] -= it->second.sum[i];
      }
    } else {
      for (const auto& rec : records_) {
        label_reads_.fetch_add(1);
        if (!rec.logits || rec.label != y || rec.id.client_id == requesting_client) continue;
        for (std::size_t i = 0; i < C; ++i) sum[i] += (*rec.logits)[i];
        count += 1.0;
      }
    }
    if (count < 0.5) return std::nullopt;
    for (auto& v : sum) v /= count;
    return sum;
  }

  // Precomputes per-class logit sums so feddistill_teacher is O(C).
  void refresh_class_table() {
    require_labels();
    class_table_.assign(static_cast<std::size_t>(num_classes_), {});
    const auto C = static_cast<std::size_t>(num_classes_);
    for (auto& e : class_table_) e.sum.assign(C, 0.0);
    for (const auto& rec : records_) {
      label_reads_.fetch_add(1);
      if (!rec.logits || !rec.label) continue;
      auto& e = class_table_[static_cast<std::size_t>(*rec.label)];
      auto& mine = e.by_client[rec.id.client_id];
      if (mine.sum.empty()) mine.sum.assign(C, 0.0);
      for (std::size_t i = 0; i < C; ++i) {
        e.sum[i] += (*rec.logits)[i];
        mine.sum[i] += (*rec.logits)[i];
      }
      e.count += 1.0;
      mine.count += 1.0;
    }
    class_table_version_ = version_;
  }

  // Ids of the R nearest same-class samples of other clients, by hash distance.
  std::vector<SampleId> fedcache_neighbors(const SampleId& id, std::size_t R) const {
    require_labels();
    const auto s = slot(id);
    if (R == neighbor_memo_r_ && !neighbor_memo_.empty()) return neighbor_memo_[s];
    return query_neighbors(s, R);
  }

  // Hash relations are fixed once every sample is registered, so the
  // neighbour lists for one R can be computed once and reused every round.
  void precompute_neighbors(std::size_t R) {
    require_labels();
    neighbor_memo_.clear();
    neighbor_memo_.reserve(records_.size());
    for (std::size_t s = 0; s < records_.size(); ++s) neighbor_memo_.push_back(query_neighbors(s, R));
    neighbor_memo_r_ = R;
  }

  // Mean logits of the R nearest same-class neighbours from other clients.
  std::optional<Logits> fedcache_teacher(const SampleId& id, std::size_t R) const {
    if (R < 1) fail(ErrorKind::InvalidInput, "R must be >= 1");
    const auto neighbors = fedcache_neighbors(id, R);
    Logits sum(static_cast<std::size_t>(num_classes_), 0.0);
    double count = 0.0;
    for (const auto& nb : neighbors) {
      const auto& rec = records_[slot(nb)];
      if (!rec.logits) continue;
      for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += (*rec.logits)[i];
      count += 1.0;
    }
    if (count < 0.5) return std::nullopt;
    for (auto& v : sum) v /= count;
    return sum;
  }

  // One line per record: "sample_id client_id round logits..." where
  // sample_id is the client-local index and logits are printed round-trip.
  void export_snapshot(std::ostream& os) const {
    char buf[32];
    for (const auto& rec : records_) {
      os << rec.id.local_index << ' ' << rec.id.client_id << ' ' << rec.round_updated;
      if (rec.logits)
        for (double v : *rec.logits) {
          std::snprintf(buf, sizeof buf, "%.17g", v);
          os << ' ' << buf;
        }
      os << '\n';
    }
  }

 private:
  struct ClassSums {
    std::vector<double> sum;
    double count = 0.0;
  };
  struct ClassEntry {
    std::vector<double> sum;
    double count = 0.0;
    std::map<int, ClassSums> by_client;
  };

  void require_labels() const {
    if (!cfg_.store_labels) fail(ErrorKind::Mode, "this cache holds no labels");
  }

  std::vector<SampleId> query_neighbors(std::size_t s, std::size_t R) const {
    const auto& self = records_[s];
    const int y = *self.label;
    const int owner = self.id.client_id;
    return index_.query(hashes_[s], R, [&](const SampleId& cand) {
      label_reads_.fetch_add(1, std::memory_order_relaxed);
      const auto& rec = records_[slots_.at(cand)];
      return cand.client_id != owner && rec.label == y;
    });
  }

  int num_classes_;
  CacheConfig cfg_;
  HashEncoder encoder_;
  HnswIndex<SampleId> index_;
  std::map<SampleId, std::size_t> slots_;
  std::vector<LogitRecord> records_;
  std::vector<std::vector<double>> hashes_;
  std::uint64_t version_ = 0;
  std::vector<ClassEntry> class_table_;
  std::uint64_t class_table_version_ = ~std::uint64_t{0};
  std::vector<std::vector<SampleId>> neighbor_memo_;
  std::size_t neighbor_memo_r_ = 0;
  mutable std::atomic<std::uint64_t> label_reads_{0};
};

// ---------------------------------------------------------------------------
// Hierarchy

enum class Granularity { Top, Middle, Bottom, All };

inline std::string_view to_string(Granularity g) {
  switch (g) {
    case Granularity::Top: return "top";
    case Granularity::Middle: return "middle";
    case Granularity::Bottom: return "bottom";
    case Granularity::All: return "all";
  }
  return "top";
}

inline Granularity parse_granularity(std::string_view s) {
  if (s == "top") return Granularity::Top;
  if (s == "middle") return Granularity::Middle;
  if (s == "bottom") return Granularity::Bottom;
  if (s == "all") return Granularity::All;
  fail(ErrorKind::InvalidInput, "unknown granularity '" + std::string(s) + "'");
}

struct HierarchyOptions {
  Linkage linkage = Linkage::Average;
  // Cluster on softmax(z / T) instead of raw logits. Teachers are always
  // averaged in raw-logit space.
  bool softened = false;
  double temperature = 3.0;
};

// Immutable snapshot of the merge hierarchy over every cached sample that has
// logits. Leaves are ordered by SampleId.
struct ClusterTree {
  std::vector<SampleId> leaves;
  Dendrogram dendrogram;
  std::vector<std::vector<double>> node_sums;  // per node: sum of member logits
  std::uint64_t cache_version = 0;
  int built_round = -1;

  std::size_t num_clusters() const { return dendrogram.target_clusters(); }

  std::optional<std::size_t> leaf_of(const SampleId& id) const {
    auto it = std::lower_bound(leaves.begin(), leaves.end(), id);
    if (it == leaves.end() || *it != id) return std::nullopt;
    return static_cast<std::size_t>(it - leaves.begin());
  }

  std::vector<SampleId> member_ids(std::size_t node) const {
    std::vector<SampleId> out;
    for (auto leaf : dendrogram.members(node)) out.push_back(leaves[leaf]);
    return out;
  }

  // The partition with exactly num_clusters() clusters.
  std::vector<std::vector<SampleId>> cut() const {
    std::vector<std::vector<SampleId>> out;
    for (auto node : dendrogram.cut_nodes(num_clusters())) out.push_back(member_ids(node));
    return out;
  }
};

inline ClusterTree build_hierarchy(const KnowledgeCache& cache, std::size_t num_clusters,
                                   const HierarchyOptions& opts = {}, int round = -1) {
  std::vector<const LogitRecord*> recs;
  for (const auto& rec : cache.records())
    if (rec.logits) recs.push_back(&rec);
  if (recs.size() < num_clusters)
    fail(ErrorKind::InsufficientData, std::to_string(recs.size()) + " records with logits, need at least " +
                                          std::to_string(num_clusters));
  std::sort(recs.begin(), recs.end(), [](auto* a, auto* b) { return a->id < b->id; });

  ClusterTree tree;
  tree.cache_version = cache.version();
  tree.built_round = round;
  std::vector<std::vector<double>> points;
  points.reserve(recs.size());
  for (auto* r : recs) {
    tree.leaves.push_back(r->id);
    points.push_back(opts.softened ? softmax_t(*r->logits, opts.temperature) : *r->logits);
  }
  tree.dendrogram = agglomerate(points, num_clusters, opts.linkage);

  const auto& d = tree.dendrogram;
  tree.node_sums.resize(d.num_nodes());
  for (std::size_t i = 0; i < recs.size(); ++i) tree.node_sums[i] = *recs[i]->logits;
  for (std::size_t k = 0; k < d.merges().size(); ++k) {
    const auto& m = d.merges()[k];
    auto sum = tree.node_sums[m.left];
    const auto& rhs = tree.node_sums[m.right];
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += rhs[i];
    tree.node_sums[d.num_leaves() + k] = std::move(sum);
  }
  return tree;
}

struct ClusterPath {
  std::vector<std::size_t> nodes;                // dendrogram nodes, singleton first
  std::vector<std::vector<SampleId>> clusters;   // member ids of each node
};

inline std::vector<std::size_t> path_nodes(const ClusterTree& tree, const SampleId& id) {
  const auto leaf = tree.leaf_of(id);
  if (!leaf) fail(ErrorKind::MissingSample, "sample " + to_string(id) + " is not a leaf of the hierarchy");
  return tree.dendrogram.path(*leaf);
}

inline ClusterPath cluster_path(const ClusterTree& tree, const SampleId& id) {
  ClusterPath p;
  p.nodes = path_nodes(tree, id);
  for (auto node : p.nodes) p.clusters.push_back(tree.member_ids(node));
  return p;
}

// 1-based positions on a path of length L used by each granularity; an empty
// result means no teacher.
inline std::vector<std::size_t> granularity_positions(Granularity g, std::size_t L) {
  switch (g) {
    case Granularity::Bottom:
      if (L < 2) return {};
      return {2};
    case Granularity::Middle:
      if (L < 2) return {};
      return {(L + 2) / 2};  // ceil((1 + L) / 2)
    case Granularity::Top: return {L};
    case Granularity::All: {
      std::vector<std::size_t> out;
      for (std::size_t i = 2; i <= L; ++i) out.push_back(i);
      return out;
    }
  }
  return {};
}

// Teacher logits for `id`: the mean member logits of the path cluster(s)
// selected by the granularity. With exclude_self the sample's own logits are
// left out of any cluster that has other members.
inline std::vector<Logits> fetch_teacher(const KnowledgeCache& cache, const ClusterTree& tree, const SampleId& id,
                                         Granularity g, bool exclude_self) {
  (void)cache.slot(id);
  const auto leaf = tree.leaf_of(id);
  if (!leaf) fail(ErrorKind::StaleHierarchy, "hierarchy predates sample " + to_string(id));
  const auto nodes = tree.dendrogram.path(*leaf);
  const auto& own = tree.node_sums[*leaf];

  std::vector<Logits> out;
  for (auto pos : granularity_positions(g, nodes.size())) {
    const auto node = nodes[pos - 1];
    Logits mean = tree.node_sums[node];
    double count = static_cast<double>(tree.dendrogram.node_size(node));
    if (exclude_self && count > 1.0) {
      for (std::size_t i = 0; i < mean.size(); ++i) mean[i] -= own[i];
      count -= 1.0;
    }
    for (auto& v : mean) v /= count;
    out.push_back(std::move(mean));
  }
  return out;
}

}  // namespace hks
