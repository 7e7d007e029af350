#pragma once

// Datasets: IDX ingestion (optionally gzip-compressed), synthetic Gaussian
// blobs, per-class Dirichlet partitioning across clients, per-client
// stratified local test splits and seeded mini-batch ordering.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "hks/error.hpp"
#include "hks/random.hpp"
#include "hks/types.hpp"

namespace hks {

struct Dataset {
  std::vector<Sample> samples;
  int num_classes = 0;
  int input_dim = 0;

  std::size_t size() const { return samples.size(); }
  bool empty() const { return samples.empty(); }

  void validate() const {
    for (const auto& s : samples) {
      if (s.label < 0 || s.label >= num_classes) fail(ErrorKind::InvalidInput, "label out of range");
      if (s.x.size() != static_cast<std::size_t>(input_dim)) fail(ErrorKind::Shape, "feature length mismatch");
    }
  }
};

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> indices) {
  Dataset out{{}, ds.num_classes, ds.input_dim};
  out.samples.reserve(indices.size());
  for (auto i : indices) out.samples.push_back(ds.samples.at(i));
  return out;
}

// ---------------------------------------------------------------------------
// IDX

namespace idx {

inline constexpr std::uint32_t kImageMagic = 0x00000803;
inline constexpr std::uint32_t kLabelMagic = 0x00000801;

inline std::vector<unsigned char> read_file(const std::string& path) {
  std::vector<unsigned char> bytes;
  if (path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) fail(ErrorKind::Io, "cannot open '" + path + "'");
    unsigned char buf[1 << 15];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) bytes.insert(bytes.end(), buf, buf + n);
    const bool bad = n < 0;
    gzclose(f);
    if (bad) fail(ErrorKind::Io, "corrupt gzip stream in '" + path + "'");
    return bytes;
  }
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open '" + path + "'");
  bytes.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
  return bytes;
}

inline std::uint32_t read_be32(std::span<const unsigned char> b, std::size_t off, const char* what) {
  if (off + 4 > b.size()) fail(ErrorKind::Io, std::string("truncated IDX header in ") + what);
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) | (std::uint32_t{b[off + 2]} << 8) |
         std::uint32_t{b[off + 3]};
}

inline void write_be32(std::vector<unsigned char>& out, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) out.push_back(static_cast<unsigned char>((v >> s) & 0xffu));
}

// Pixel values are scaled by 1/255; the class count is max(label) + 1 unless
// num_classes is given.
inline Dataset parse(std::span<const unsigned char> images, std::span<const unsigned char> labels,
                     int num_classes = 0) {
  if (read_be32(images, 0, "images") != kImageMagic) fail(ErrorKind::Format, "image file magic is not 0x00000803");
  if (read_be32(labels, 0, "labels") != kLabelMagic) fail(ErrorKind::Format, "label file magic is not 0x00000801");
  const std::size_t n = read_be32(images, 4, "images");
  const std::size_t rows = read_be32(images, 8, "images");
  const std::size_t cols = read_be32(images, 12, "images");
  const std::size_t n_labels = read_be32(labels, 4, "labels");
  if (n != n_labels)
    fail(ErrorKind::Consistency, std::to_string(n) + " images but " + std::to_string(n_labels) + " labels");
  const std::size_t dim = rows * cols;
  if (images.size() < 16 + n * dim) fail(ErrorKind::Io, "truncated image data");
  if (labels.size() < 8 + n) fail(ErrorKind::Io, "truncated label data");

  Dataset ds;
  ds.input_dim = static_cast<int>(dim);
  ds.samples.resize(n);
  int max_label = -1;
  for (std::size_t i = 0; i < n; ++i) {
    auto& s = ds.samples[i];
    s.x.resize(dim);
    const unsigned char* px = images.data() + 16 + i * dim;
    for (std::size_t j = 0; j < dim; ++j) s.x[j] = static_cast<double>(px[j]) / 255.0;
    s.label = labels[8 + i];
    max_label = std::max(max_label, s.label);
  }
  ds.num_classes = num_classes > 0 ? num_classes : max_label + 1;
  ds.validate();
  return ds;
}

// Encodes features as round(255 x) bytes in an [n, 1, input_dim] tensor.
inline std::pair<std::vector<unsigned char>, std::vector<unsigned char>> encode(const Dataset& ds) {
  std::vector<unsigned char> images, labels;
  write_be32(images, kImageMagic);
  write_be32(images, static_cast<std::uint32_t>(ds.size()));
  write_be32(images, 1);
  write_be32(images, static_cast<std::uint32_t>(ds.input_dim));
  write_be32(labels, kLabelMagic);
  write_be32(labels, static_cast<std::uint32_t>(ds.size()));
  for (const auto& s : ds.samples) {
    for (double v : s.x)
      images.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
    labels.push_back(static_cast<unsigned char>(s.label));
  }
  return {std::move(images), std::move(labels)};
}

}  // namespace idx

inline Dataset load_idx(const std::string& images_path, const std::string& labels_path, int num_classes = 0) {
  const auto images = idx::read_file(images_path);
  const auto labels = idx::read_file(labels_path);
  return idx::parse(images, labels, num_classes);
}

// ---------------------------------------------------------------------------
// Synthetic blobs

// Class c is centred at a seeded unit direction scaled by 4; samples add
// isotropic Gaussian noise of standard deviation `spread`. Centres depend only
// on `seed`, so draws with different `sample_stream` values come from the same
// distribution (used to build a matching global test set).
inline Dataset synth_blobs(int num_classes, int per_class, int input_dim, double spread, std::uint64_t seed,
                           std::uint64_t sample_stream = 0) {
  if (num_classes < 1 || per_class < 1 || input_dim < 1 || !(spread >= 0.0))
    fail(ErrorKind::InvalidInput, "synthetic blobs need positive sizes and a nonnegative spread");
  Rng center_rng(derive_seed(seed, {stream::kSynthCenters}));
  std::vector<std::vector<double>> centers(static_cast<std::size_t>(num_classes));
  for (auto& c : centers) {
    c.resize(static_cast<std::size_t>(input_dim));
    double norm = 0.0;
    do {
      norm = 0.0;
      for (auto& v : c) {
        v = center_rng.normal();
        norm += v * v;
      }
    } while (norm == 0.0);
    norm = std::sqrt(norm);
    for (auto& v : c) v = 4.0 * v / norm;
  }
  Rng noise(derive_seed(seed, {stream::kSynthNoise, sample_stream}));
  Dataset ds{{}, num_classes, input_dim};
  ds.samples.reserve(static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(per_class));
  for (int c = 0; c < num_classes; ++c) {
    for (int i = 0; i < per_class; ++i) {
      Sample s{centers[static_cast<std::size_t>(c)], c};
      for (auto& v : s.x) {
        v += spread * noise.normal();
        if (!std::isfinite(v)) v = 0.0;
      }
      ds.samples.push_back(std::move(s));
    }
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Partitioning

struct PartitionSpec {
  int n_clients = 20;
  double alpha_dir = 1.0;
  std::uint64_t seed = 0;
  std::size_t min_per_client = 0;
};

inline std::vector<std::vector<std::size_t>> indices_by_class(const Dataset& ds) {
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(std::max(ds.num_classes, 0)));
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(static_cast<std::size_t>(ds.samples[i].label)).push_back(i);
  return by_class;
}

// Proportions for class c are drawn from Dirichlet(alpha_dir * 1_N) keyed by
// (seed, c), so partitioning two datasets with the same PartitionSpec gives
// each client the same per-class shares.
inline std::vector<std::vector<std::size_t>> dirichlet_partition(const Dataset& ds, const PartitionSpec& spec) {
  if (ds.empty()) fail(ErrorKind::EmptyDataset, "cannot partition an empty dataset");
  if (spec.n_clients < 1) fail(ErrorKind::InvalidInput, "n_clients must be >= 1");
  if (!(spec.alpha_dir > 0.0)) fail(ErrorKind::InvalidInput, "alpha_dir must be > 0");
  const auto n = static_cast<std::size_t>(spec.n_clients);
  if (spec.min_per_client * n > ds.size())
    fail(ErrorKind::Infeasible, std::to_string(spec.n_clients) + " clients x " + std::to_string(spec.min_per_client) +
                                    " samples exceeds dataset size " + std::to_string(ds.size()));

  std::vector<std::vector<std::size_t>> shards(n);
  auto by_class = indices_by_class(ds);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    Rng shuffle_rng(derive_seed(spec.seed, {stream::kPartition, c, 0}));
    shuffle_rng.shuffle(std::span(members));

    Rng gamma_rng(derive_seed(spec.seed, {stream::kPartition, c, 1}));
    std::vector<double> p(n);
    double total = 0.0;
    for (auto& v : p) total += (v = gamma_rng.gamma(spec.alpha_dir));
    if (!(total > 0.0)) {
      // Every draw underflowed; give the class to one client.
      std::fill(p.begin(), p.end(), 0.0);
      p[gamma_rng.below(n)] = 1.0;
      total = 1.0;
    }
    const double m = static_cast<double>(members.size());
    double cum = 0.0;
    std::size_t begin = 0;
    for (std::size_t k = 0; k < n; ++k) {
      cum += p[k] / total;
      std::size_t end = (k + 1 == n) ? members.size()
                                     : std::min(members.size(), static_cast<std::size_t>(std::floor(cum * m)));
      end = std::max(end, begin);
      shards[k].insert(shards[k].end(), members.begin() + static_cast<std::ptrdiff_t>(begin),
                       members.begin() + static_cast<std::ptrdiff_t>(end));
      begin = end;
    }
  }
  for (auto& s : shards) std::sort(s.begin(), s.end());

  // Top up clients below the minimum, one sample per deficient client per
  // pass, taking the highest index of the currently largest shard.
  for (;;) {
    bool moved = false;
    for (std::size_t d = 0; d < n; ++d) {
      if (shards[d].size() >= spec.min_per_client) continue;
      std::size_t donor = 0;
      for (std::size_t k = 1; k < n; ++k)
        if (shards[k].size() > shards[donor].size()) donor = k;
      const auto idx = shards[donor].back();
      shards[donor].pop_back();
      shards[d].insert(std::upper_bound(shards[d].begin(), shards[d].end(), idx), idx);
      moved = true;
    }
    if (!moved) break;
  }
  return shards;
}

// Shannon entropy (nats) of the label histogram of `indices`.
inline double label_entropy(const Dataset& ds, std::span<const std::size_t> indices) {
  if (indices.empty()) return 0.0;
  std::vector<double> counts(static_cast<std::size_t>(ds.num_classes), 0.0);
  for (auto i : indices) counts[static_cast<std::size_t>(ds.samples[i].label)] += 1.0;
  double h = 0.0;
  const double n = static_cast<double>(indices.size());
  for (double c : counts)
    if (c > 0.0) h -= (c / n) * std::log(c / n);
  return h;
}

// ---------------------------------------------------------------------------
// Client shards

struct ClientShard {
  int client_id = 0;
  Dataset train;
  Dataset local_test;
  std::vector<std::size_t> train_source;  // parent-dataset index of each train sample
  std::vector<std::size_t> test_source;
};

// Per class: a class with >= 2 samples sends clamp(round(f * count), 1,
// count - 1) of them (after a seeded shuffle) to the test side; a singleton
// class stays in train. Both sides keep parent-dataset order.
inline ClientShard split_local_test(std::span<const std::size_t> shard, const Dataset& ds, double test_fraction,
                                    std::uint64_t seed, int client_id = 0) {
  if (shard.empty()) fail(ErrorKind::EmptyShard, "client " + std::to_string(client_id) + " has no samples");
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) fail(ErrorKind::InvalidInput, "test_fraction must be in (0, 1)");
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
  for (auto i : shard) by_class.at(static_cast<std::size_t>(ds.samples.at(i).label)).push_back(i);

  ClientShard out;
  out.client_id = client_id;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    std::size_t n_test = 0;
    if (members.size() >= 2) {
      Rng rng(derive_seed(seed, {stream::kLocalSplit, static_cast<std::uint64_t>(client_id), c}));
      rng.shuffle(std::span(members));
      const auto want = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(members.size())));
      n_test = std::clamp<std::size_t>(want, 1, members.size() - 1);
    }
    out.test_source.insert(out.test_source.end(), members.begin(),
                           members.begin() + static_cast<std::ptrdiff_t>(n_test));
    out.train_source.insert(out.train_source.end(), members.begin() + static_cast<std::ptrdiff_t>(n_test),
                            members.end());
  }
  std::sort(out.train_source.begin(), out.train_source.end());
  std::sort(out.test_source.begin(), out.test_source.end());
  out.train = subset(ds, out.train_source);
  out.local_test = subset(ds, out.test_source);
  return out;
}

// Mini-batches of train-sample positions; the order is a reshuffle keyed by
// (seed, client_id, epoch) and the last batch may be short.
inline std::vector<std::vector<std::size_t>> batches(const ClientShard& shard, std::size_t batch_size,
                                                     std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 1) fail(ErrorKind::InvalidInput, "batch_size must be >= 1");
  std::vector<std::size_t> order(shard.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {stream::kBatches, static_cast<std::uint64_t>(shard.client_id), epoch}));
  rng.shuffle(std::span(order));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < order.size(); b += batch_size)
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                     order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), b + batch_size)));
  return out;
}

// Seeded random subset of at most n samples, kept in parent order.
inline Dataset sample_subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
  if (n >= ds.size()) return ds;
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {stream::kSubsample}));
  rng.shuffle(std::span(order));
  order.resize(n);
  std::sort(order.begin(), order.end());
  return subset(ds, order);
}

// Splits off a class-stratified holdout of roughly `fraction` of the data.
inline std::pair<Dataset, Dataset> stratified_holdout(const Dataset& ds, double fraction, std::uint64_t seed) {
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto split = split_local_test(all, ds, fraction, derive_seed(seed, {stream::kSubsample, 1}), -1);
  return {std::move(split.train), std::move(split.local_test)};
}

}  // namespace hks
