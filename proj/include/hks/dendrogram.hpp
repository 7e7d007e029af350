#pragma once

// Bottom-up agglomerative clustering over points in Euclidean space.
//
// Leaves are numbered 0..n-1 in input order; merge k creates node n + k.
// Among equally dissimilar pairs the one whose (smaller, larger) cluster
// representatives is lexicographically smallest merges first, where a
// cluster's representative is its lowest leaf index. Each merge lists the
// cluster with the lower representative as `left`.
//
// The search keeps, per active cluster, its nearest other cluster and only
// rescans rows whose nearest neighbour took part in a merge. That is exact
// for linkages where a merged cluster is never closer to a third cluster
// than the nearer of its two parts (single, complete, average).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hks/error.hpp"
#include "hks/hnsw.hpp"

namespace hks {

enum class Linkage { Average, Single, Complete };

inline std::string_view to_string(Linkage l) {
  switch (l) {
    case Linkage::Average: return "average";
    case Linkage::Single: return "single";
    case Linkage::Complete: return "complete";
  }
  return "average";
}

inline Linkage parse_linkage(std::string_view s) {
  if (s == "average") return Linkage::Average;
  if (s == "single") return Linkage::Single;
  if (s == "complete") return Linkage::Complete;
  fail(ErrorKind::InvalidInput, "unknown linkage '" + std::string(s) + "'");
}

struct Merge {
  std::size_t left = 0;
  std::size_t right = 0;
  double height = 0.0;
  std::size_t size = 0;

  friend bool operator==(const Merge&, const Merge&) = default;
};

class Dendrogram {
 public:
  Dendrogram() = default;
  Dendrogram(std::size_t n_leaves, std::vector<Merge> merges, std::size_t target_clusters)
      : n_(n_leaves), merges_(std::move(merges)), target_(target_clusters) {
    parent_.assign(n_ + merges_.size(), kNone);
    for (std::size_t k = 0; k < merges_.size(); ++k) {
      parent_[merges_[k].left] = n_ + k;
      parent_[merges_[k].right] = n_ + k;
    }
  }

  static constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

  std::size_t num_leaves() const { return n_; }
  std::size_t num_nodes() const { return n_ + merges_.size(); }
  std::size_t target_clusters() const { return target_; }
  const std::vector<Merge>& merges() const { return merges_; }
  std::size_t parent(std::size_t node) const { return parent_.at(node); }
  bool is_leaf(std::size_t node) const { return node < n_; }

  std::size_t node_size(std::size_t node) const { return is_leaf(node) ? 1 : merges_.at(node - n_).size; }

  // Nodes that are roots after the first n - k merges, i.e. the k-cluster cut.
  std::vector<std::size_t> cut_nodes(std::size_t k) const {
    if (k < 1 || k > n_) fail(ErrorKind::InvalidInput, "cut size out of range");
    const std::size_t limit = n_ + (n_ - k);
    std::vector<std::size_t> roots;
    for (std::size_t node = 0; node < limit; ++node)
      if (parent_[node] == kNone || parent_[node] >= limit) roots.push_back(node);
    return roots;
  }

  std::vector<std::vector<std::size_t>> cut(std::size_t k) const {
    std::vector<std::vector<std::size_t>> out;
    for (auto node : cut_nodes(k)) out.push_back(members(node));
    return out;
  }

  // Leaves under `node`, ascending.
  std::vector<std::size_t> members(std::size_t node) const {
    std::vector<std::size_t> out, stack{node};
    while (!stack.empty()) {
      const auto cur = stack.back();
      stack.pop_back();
      if (is_leaf(cur)) {
        out.push_back(cur);
      } else {
        stack.push_back(merges_[cur - n_].left);
        stack.push_back(merges_[cur - n_].right);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  // The leaf followed by each ancestor up to and including its cluster in the
  // target cut.
  std::vector<std::size_t> path(std::size_t leaf) const {
    if (leaf >= n_) fail(ErrorKind::MissingSample, "leaf " + std::to_string(leaf) + " not in dendrogram");
    const std::size_t limit = n_ + (n_ - target_);
    std::vector<std::size_t> out{leaf};
    for (auto p = parent_[leaf]; p != kNone && p < limit; p = parent_[p]) out.push_back(p);
    return out;
  }

 private:
  std::size_t n_ = 0;
  std::vector<Merge> merges_;
  std::size_t target_ = 1;
  std::vector<std::size_t> parent_;
};

namespace detail {

class CondensedMatrix {
 public:
  explicit CondensedMatrix(std::size_t n) : n_(n), d_(n * (n - 1) / 2) {}
  double& operator()(std::size_t i, std::size_t j) {
    if (i > j) std::swap(i, j);
    return d_[i * n_ - i * (i + 1) / 2 + (j - i - 1)];
  }

 private:
  std::size_t n_;
  std::vector<double> d_;
};

}  // namespace detail

// Clusters all points down to a single root, recording the target cut.
inline Dendrogram agglomerate(std::span<const std::vector<double>> points, std::size_t target_clusters,
                              Linkage linkage = Linkage::Average) {
  const std::size_t n = points.size();
  if (target_clusters < 1) fail(ErrorKind::InvalidInput, "target cluster count must be >= 1");
  if (n < target_clusters)
    fail(ErrorKind::InsufficientData,
         std::to_string(n) + " points cannot form " + std::to_string(target_clusters) + " clusters");
  if (n == 1) return Dendrogram(1, {}, 1);

  detail::CondensedMatrix dist(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) dist(i, j) = std::sqrt(squared_l2(points[i], points[j]));

  // Slot i holds the cluster whose representative was leaf i when created.
  std::vector<std::size_t> node(n), size(n, 1), rep(n);
  std::vector<char> active(n, 1);
  for (std::size_t i = 0; i < n; ++i) node[i] = rep[i] = i;

  auto better = [&](double d1, std::size_t a1, std::size_t b1, double d2, std::size_t a2, std::size_t b2) {
    if (d1 != d2) return d1 < d2;
    const auto k1 = std::minmax(rep[a1], rep[b1]);
    const auto k2 = std::minmax(rep[a2], rep[b2]);
    return k1 < k2;
  };

  std::vector<std::size_t> nn(n, Dendrogram::kNone);
  std::vector<double> nn_dist(n, std::numeric_limits<double>::infinity());
  auto rescan = [&](std::size_t i) {
    nn[i] = Dendrogram::kNone;
    nn_dist[i] = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !active[j]) continue;
      const double d = dist(i, j);
      if (nn[i] == Dendrogram::kNone || better(d, i, j, nn_dist[i], i, nn[i])) {
        nn[i] = j;
        nn_dist[i] = d;
      }
    }
  };
  for (std::size_t i = 0; i < n; ++i) rescan(i);

  std::vector<Merge> merges;
  merges.reserve(n - 1);
  for (std::size_t step = 0; step + 1 < n; ++step) {
    std::size_t a = Dendrogram::kNone;
    for (std::size_t i = 0; i < n; ++i) {
      if (!active[i]) continue;
      if (a == Dendrogram::kNone || better(nn_dist[i], i, nn[i], nn_dist[a], a, nn[a])) a = i;
    }
    std::size_t b = nn[a];
    const double h = nn_dist[a];
    if (rep[b] < rep[a]) std::swap(a, b);  // survivor slot keeps the lower representative

    merges.push_back({node[a], node[b], h, size[a] + size[b]});
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == a || k == b) continue;
      const double da = dist(k, a), db = dist(k, b);
      switch (linkage) {
        case Linkage::Average:
          dist(k, a) = (static_cast<double>(size[a]) * da + static_cast<double>(size[b]) * db) /
                       static_cast<double>(size[a] + size[b]);
          break;
        case Linkage::Single: dist(k, a) = std::min(da, db); break;
        case Linkage::Complete: dist(k, a) = std::max(da, db); break;
      }
    }
    active[b] = 0;
    size[a] += size[b];
    node[a] = n + step;
    // rep[a] is already the lower of the two.

    rescan(a);
    for (std::size_t k = 0; k < n; ++k) {
      if (!active[k] || k == a) continue;
      if (nn[k] == a || nn[k] == b) {
        rescan(k);
      } else {
        const double d = dist(k, a);
        if (better(d, k, a, nn_dist[k], k, nn[k])) {
          nn[k] = a;
          nn_dist[k] = d;
        }
      }
    }
  }
  return Dendrogram(n, std::move(merges), target_clusters);
}

}  // namespace hks
