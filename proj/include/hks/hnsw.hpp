#pragma once

// Hierarchical navigable small-world graph for approximate nearest-neighbour
// search under Euclidean distance, plus the exhaustive scan used to check it.
//
// Layer 0 holds every node with up to 2M links; higher layers are sparser
// with up to M links. A node's top layer is floor(-ln(U) / ln(M)) for a
// seeded uniform U. Search descends greedily through the upper layers and
// runs a best-first beam of width ef on layer 0. Neighbour lists are chosen
// with the diversity heuristic: a candidate is kept only if it is closer to
// the base node than to every neighbour already kept.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <queue>
#include <span>
#include <utility>
#include <vector>

#include "hks/error.hpp"
#include "hks/random.hpp"

namespace hks {

struct HnswParams {
  std::size_t M = 16;
  std::size_t ef_construction = 200;
  std::size_t ef_search = 64;
  std::uint64_t seed = 0;
};

inline double squared_l2(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct AcceptAll {
  template <typename Key>
  bool operator()(const Key&) const {
    return true;
  }
};

template <typename Key>
class HnswIndex {
 public:
  using Node = std::uint32_t;

  HnswIndex(std::size_t dim, HnswParams params)
      : dim_(dim), params_(params), rng_(derive_seed(params.seed, {stream::kHnsw})) {
    if (dim_ == 0) fail(ErrorKind::Shape, "HNSW dimension must be positive");
    if (params_.M < 2) fail(ErrorKind::InvalidInput, "HNSW M must be >= 2");
    level_mult_ = 1.0 / std::log(static_cast<double>(params_.M));
  }

  std::size_t size() const { return keys_.size(); }
  std::size_t dim() const { return dim_; }
  const HnswParams& params() const { return params_; }
  int max_level() const { return max_level_; }
  Node entry_point() const { return entry_; }
  const Key& key(Node n) const { return keys_[n]; }
  int level(Node n) const { return static_cast<int>(links_[n].size()) - 1; }
  const std::vector<Node>& neighbors(Node n, int layer) const { return links_[n][static_cast<std::size_t>(layer)]; }
  std::span<const double> vector(Node n) const { return {data_.data() + n * dim_, dim_}; }

  std::size_t max_degree(int layer) const { return layer == 0 ? 2 * params_.M : params_.M; }

  void insert(const Key& key, std::span<const double> v) {
    if (v.size() != dim_) fail(ErrorKind::Shape, "HNSW vector has wrong dimension");
    const auto node = static_cast<Node>(keys_.size());
    const int lvl = static_cast<int>(std::floor(-std::log(rng_.uniform_open0()) * level_mult_));
    keys_.push_back(key);
    data_.insert(data_.end(), v.begin(), v.end());
    links_.emplace_back(static_cast<std::size_t>(lvl) + 1);

    if (node == 0) {
      entry_ = 0;
      max_level_ = lvl;
      return;
    }

    const auto q = vector(node);
    Node cur = entry_;
    for (int layer = max_level_; layer > lvl; --layer) cur = greedy_closest(q, cur, layer);

    for (int layer = std::min(lvl, max_level_); layer >= 0; --layer) {
      auto found = search_layer(q, {cur}, params_.ef_construction, layer, AcceptAll{});
      auto chosen = select_neighbors(found, params_.M);
      auto& mine = links_[node][static_cast<std::size_t>(layer)];
      for (const auto& [d, nb] : chosen) mine.push_back(nb);
      for (const auto& [d, nb] : chosen) connect(nb, node, layer);
      cur = found.front().second;
    }
    if (lvl > max_level_) {
      max_level_ = lvl;
      entry_ = node;
    }
  }

  // Up to k keys passing `pass`, nearest first; ties broken by key order.
  // If the beam search cannot fill k results the remainder is found by an
  // exhaustive scan, so k >= population always returns every passing key.
  template <typename Filter = AcceptAll>
  std::vector<Key> query(std::span<const double> q, std::size_t k, Filter pass = {}) const {
    if (q.size() != dim_) fail(ErrorKind::Shape, "HNSW query has wrong dimension");
    if (keys_.empty() || k == 0) return {};
    Node cur = entry_;
    for (int layer = max_level_; layer > 0; --layer) cur = greedy_closest(q, cur, layer);
    auto found = search_layer(q, {cur}, std::max(params_.ef_search, k), 0, pass);
    if (found.size() < k) found = scan(q, pass);
    std::vector<std::pair<double, Node>> ranked(found.begin(), found.end());
    std::sort(ranked.begin(), ranked.end(), [this](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first < b.first;
      return keys_[a.second] < keys_[b.second];
    });
    if (ranked.size() > k) ranked.resize(k);
    std::vector<Key> out;
    out.reserve(ranked.size());
    for (const auto& r : ranked) out.push_back(keys_[r.second]);
    return out;
  }

  // Nodes reachable from the entry point over layer-0 links.
  std::size_t reachable_count() const {
    if (keys_.empty()) return 0;
    std::vector<char> seen(keys_.size(), 0);
    std::vector<Node> stack{entry_};
    seen[entry_] = 1;
    std::size_t count = 0;
    while (!stack.empty()) {
      const Node n = stack.back();
      stack.pop_back();
      ++count;
      for (Node nb : links_[n][0])
        if (!seen[nb]) {
          seen[nb] = 1;
          stack.push_back(nb);
        }
    }
    return count;
  }

 private:
  using Scored = std::pair<double, Node>;

  double dist(std::span<const double> q, Node n) const { return squared_l2(q, vector(n)); }

  Node greedy_closest(std::span<const double> q, Node cur, int layer) const {
    double best = dist(q, cur);
    for (bool changed = true; changed;) {
      changed = false;
      for (Node nb : links_[cur][static_cast<std::size_t>(layer)]) {
        const double d = dist(q, nb);
        if (d < best) {
          best = d;
          cur = nb;
          changed = true;
        }
      }
    }
    return cur;
  }

  // Best-first search on one layer. Every visited node steers the beam; only
  // nodes passing the filter enter the result set. Returns results ascending.
  template <typename Filter>
  std::vector<Scored> search_layer(std::span<const double> q, std::vector<Node> entries, std::size_t ef, int layer,
                                   const Filter& pass) const {
    std::vector<char> visited(keys_.size(), 0);
    std::priority_queue<Scored, std::vector<Scored>, std::greater<>> candidates;
    std::priority_queue<Scored> results;
    double bound = std::numeric_limits<double>::infinity();
    for (Node e : entries) {
      visited[e] = 1;
      const double d = dist(q, e);
      candidates.emplace(d, e);
      if (pass(keys_[e])) {
        results.emplace(d, e);
        bound = results.top().first;
      }
    }
    while (!candidates.empty()) {
      const auto [d, n] = candidates.top();
      if (results.size() >= ef && d > bound) break;
      candidates.pop();
      for (Node nb : links_[n][static_cast<std::size_t>(layer)]) {
        if (visited[nb]) continue;
        visited[nb] = 1;
        const double dn = dist(q, nb);
        if (results.size() < ef || dn < bound) {
          candidates.emplace(dn, nb);
          if (pass(keys_[nb])) {
            results.emplace(dn, nb);
            if (results.size() > ef) results.pop();
            bound = results.top().first;
          }
        }
      }
    }
    std::vector<Scored> out;
    out.reserve(results.size());
    for (; !results.empty(); results.pop()) out.push_back(results.top());
    std::reverse(out.begin(), out.end());
    return out;
  }

  template <typename Filter>
  std::vector<Scored> scan(std::span<const double> q, const Filter& pass) const {
    std::vector<Scored> out;
    for (Node n = 0; n < keys_.size(); ++n)
      if (pass(keys_[n])) out.emplace_back(dist(q, n), n);
    return out;
  }

  // `candidates` ascending by distance to the base node.
  std::vector<Scored> select_neighbors(const std::vector<Scored>& candidates, std::size_t m) const {
    std::vector<Scored> kept;
    for (const auto& c : candidates) {
      if (kept.size() >= m) break;
      const auto vc = vector(c.second);
      bool good = true;
      for (const auto& k : kept)
        if (squared_l2(vc, vector(k.second)) < c.first) {
          good = false;
          break;
        }
      if (good) kept.push_back(c);
    }
    return kept;
  }

  void connect(Node from, Node to, int layer) {
    auto& list = links_[from][static_cast<std::size_t>(layer)];
    list.push_back(to);
    const std::size_t cap = max_degree(layer);
    if (list.size() <= cap) return;
    const auto base = vector(from);
    std::vector<Scored> scored;
    scored.reserve(list.size());
    for (Node n : list) scored.emplace_back(squared_l2(base, vector(n)), n);
    std::sort(scored.begin(), scored.end());
    auto kept = select_neighbors(scored, cap);
    list.clear();
    for (const auto& k : kept) list.push_back(k.second);
  }

  std::size_t dim_;
  HnswParams params_;
  Rng rng_;
  double level_mult_ = 1.0;
  std::vector<Key> keys_;
  std::vector<double> data_;
  std::vector<std::vector<std::vector<Node>>> links_;  // node -> layer -> neighbours
  Node entry_ = 0;
  int max_level_ = -1;
};

// Exhaustive k-nearest search; ascending Euclidean distance, ties by key.
template <typename Key, typename Filter = AcceptAll>
std::vector<Key> exact_knn(std::span<const Key> keys, std::span<const std::vector<double>> vectors,
                           std::span<const double> q, std::size_t k, Filter pass = {}) {
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < keys.size(); ++i)
    if (pass(keys[i])) scored.emplace_back(squared_l2(q, vectors[i]), i);
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    return keys[a.second] < keys[b.second];
  });
  if (scored.size() > k) scored.resize(k);
  std::vector<Key> out;
  for (const auto& s : scored) out.push_back(keys[s.second]);
  return out;
}

}  // namespace hks
