#pragma once

// Run configuration: a JSON document (all keys optional, unknown keys
// rejected) overlaid by command-line flags, validated before any work.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "hks/data.hpp"
#include "hks/error.hpp"
#include "hks/federation.hpp"
#include "json.hpp"

namespace hks {

using Json = nlohmann::ordered_json;

struct DatasetSpec {
  enum class Kind { Synthetic, Idx };
  Kind kind = Kind::Synthetic;
  // synthetic
  int num_classes = 10;
  int per_class = 100;
  int input_dim = 32;
  double spread = 0.5;
  int test_per_class = 0;  // 0: max(per_class / 4, 1)
  // idx
  std::string images, labels, test_images, test_labels;
  std::size_t max_train = 0;  // 0: no limit
  std::size_t max_test = 0;
  double holdout_fraction = 0.15;  // global test carved from train when no test files
};

struct RunConfig {
  FederationConfig fed;
  DatasetSpec dataset;
  std::string out_dir = "runs/run";
  bool dump_checkpoints = false;
  bool dump_cache = false;
};

struct FlagOverrides {
  std::optional<std::string> method, granularity;
  std::optional<std::size_t> R;
  std::optional<double> alpha_dir;
  std::optional<int> rounds;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> idx_images, idx_labels, idx_test_images, idx_test_labels;
  std::optional<std::string> synthetic;  // "C,per_class,dim,spread"
};

namespace detail {

[[noreturn]] inline void config_fail(const std::string& path, const std::string& why) {
  fail(ErrorKind::Config, "'" + path + "': " + why);
}

class ObjectReader {
 public:
  ObjectReader(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) config_fail(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string key_path(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json* find(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    const Json* v = find(key);
    if (!v) return;
    out = convert<T>(*v, key_path(key));
  }

  template <typename T>
  void read(const std::string& key, std::optional<T>& out) {
    const Json* v = find(key);
    if (!v || v->is_null()) return;
    out = convert<T>(*v, key_path(key));
  }

  template <typename T, typename Parse>
  void read_enum(const std::string& key, T& out, Parse parse) {
    const Json* v = find(key);
    if (!v) return;
    const auto s = convert<std::string>(*v, key_path(key));
    try {
      out = parse(s);
    } catch (const Error& e) {
      config_fail(key_path(key), e.detail());
    }
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.contains(it.key())) config_fail(key_path(it.key()), "unknown key");
  }

  template <typename T>
  static T convert(const Json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) config_fail(path, "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) config_fail(path, "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) config_fail(path, "expected a number");
      return v.get<T>();
    } else {
      static_assert(std::is_integral_v<T>);
      if (!v.is_number_integer()) config_fail(path, "expected an integer");
      if constexpr (std::is_unsigned_v<T>) {
        if (v.is_number_integer() && !v.is_number_unsigned() && v.get<std::int64_t>() < 0)
          config_fail(path, "must be >= 0");
      }
      return v.get<T>();
    }
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string tok;
  std::istringstream in(s);
  while (std::getline(in, tok, sep))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

}  // namespace detail

inline RunConfig parse_config(const Json& j) {
  RunConfig rc;
  auto& f = rc.fed;
  detail::ObjectReader root(j, "");
  root.read_enum("method", f.method, parse_method);
  root.read_enum("granularity", f.granularity, parse_granularity);
  root.read("R", f.R);
  root.read("n_clients", f.n_clients);
  root.read("rounds", f.rounds);
  root.read("local_epochs", f.local_epochs);
  root.read("warmup_rounds", f.warmup_rounds);
  root.read("lr", f.lr);
  root.read("batch_size", f.batch_size);
  root.read("temperature", f.kd.temperature);
  root.read("alpha_kd", f.kd.alpha_kd);
  root.read("t_squared_scaling", f.kd.t_squared_scaling);
  root.read("alpha_dir", f.alpha_dir);
  root.read("seed", f.seed);
  root.read("exclude_self", f.exclude_self);
  root.read("min_per_client", f.min_per_client);
  root.read("test_fraction", f.test_fraction);
  root.read_enum("local_test_source", f.local_test_source, parse_local_test_source);
  root.read_enum("fedavg_tier", f.fedavg_tier, parse_tier);
  root.read("d_hash", f.d_hash);

  if (const Json* h = root.find("hnsw")) {
    detail::ObjectReader r(*h, "hnsw");
    r.read("M", f.hnsw.M);
    r.read("ef_construction", f.hnsw.ef_construction);
    r.read("ef_search", f.hnsw.ef_search);
    r.finish();
  }
  if (const Json* h = root.find("hierarchy")) {
    detail::ObjectReader r(*h, "hierarchy");
    r.read_enum("linkage", f.hierarchy.linkage, parse_linkage);
    std::string space = f.hierarchy.softened ? "softened" : "logits";
    r.read("space", space);
    if (space != "logits" && space != "softened") detail::config_fail("hierarchy.space", "expected logits|softened");
    f.hierarchy.softened = space == "softened";
    r.finish();
  }
  if (const Json* d = root.find("dataset")) {
    detail::ObjectReader r(*d, "dataset");
    auto& ds = rc.dataset;
    r.read_enum("kind", ds.kind, [](const std::string& s) {
      if (s == "synthetic") return DatasetSpec::Kind::Synthetic;
      if (s == "idx") return DatasetSpec::Kind::Idx;
      fail(ErrorKind::InvalidInput, "expected synthetic|idx");
    });
    r.read("num_classes", ds.num_classes);
    r.read("per_class", ds.per_class);
    r.read("input_dim", ds.input_dim);
    r.read("spread", ds.spread);
    r.read("test_per_class", ds.test_per_class);
    r.read("images", ds.images);
    r.read("labels", ds.labels);
    r.read("test_images", ds.test_images);
    r.read("test_labels", ds.test_labels);
    r.read("max_train", ds.max_train);
    r.read("max_test", ds.max_test);
    r.read("holdout_fraction", ds.holdout_fraction);
    r.finish();
  }
  if (const Json* o = root.find("output")) {
    detail::ObjectReader r(*o, "output");
    r.read("dir", rc.out_dir);
    r.read("checkpoints", rc.dump_checkpoints);
    r.read("cache_snapshot", rc.dump_cache);
    r.finish();
  }
  root.finish();
  return rc;
}

inline void validate(const RunConfig& rc) {
  rc.fed.validate();
  const auto& ds = rc.dataset;
  if (ds.kind == DatasetSpec::Kind::Synthetic) {
    if (ds.num_classes < 1) detail::config_fail("dataset.num_classes", "must be >= 1");
    if (ds.per_class < 1) detail::config_fail("dataset.per_class", "must be >= 1");
    if (ds.input_dim < 1) detail::config_fail("dataset.input_dim", "must be >= 1");
    if (!(ds.spread >= 0.0)) detail::config_fail("dataset.spread", "must be >= 0");
    if (ds.test_per_class < 0) detail::config_fail("dataset.test_per_class", "must be >= 0");
  } else {
    if (ds.images.empty()) detail::config_fail("dataset.images", "required for idx datasets");
    if (ds.labels.empty()) detail::config_fail("dataset.labels", "required for idx datasets");
    if (ds.test_images.empty() != ds.test_labels.empty())
      detail::config_fail("dataset.test_images", "test images and labels must be given together");
    if (!(ds.holdout_fraction > 0.0 && ds.holdout_fraction < 1.0))
      detail::config_fail("dataset.holdout_fraction", "must be in (0, 1)");
  }
}

inline void apply_overrides(RunConfig& rc, const FlagOverrides& o) {
  auto guarded = [](const char* key, auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      detail::config_fail(key, e.detail());
    }
  };
  if (o.method) guarded("method", [&] { rc.fed.method = parse_method(*o.method); });
  if (o.granularity) guarded("granularity", [&] { rc.fed.granularity = parse_granularity(*o.granularity); });
  if (o.R) rc.fed.R = *o.R;
  if (o.alpha_dir) rc.fed.alpha_dir = *o.alpha_dir;
  if (o.rounds) rc.fed.rounds = *o.rounds;
  if (o.seed) rc.fed.seed = *o.seed;
  if (o.out) rc.out_dir = *o.out;
  if (o.idx_images || o.idx_labels) {
    rc.dataset.kind = DatasetSpec::Kind::Idx;
    if (o.idx_images) rc.dataset.images = *o.idx_images;
    if (o.idx_labels) rc.dataset.labels = *o.idx_labels;
  }
  if (o.idx_test_images) rc.dataset.test_images = *o.idx_test_images;
  if (o.idx_test_labels) rc.dataset.test_labels = *o.idx_test_labels;
  if (o.synthetic) {
    const auto parts = detail::split(*o.synthetic, ',');
    if (parts.size() != 4) detail::config_fail("synthetic", "expected C,per_class,dim,spread");
    rc.dataset.kind = DatasetSpec::Kind::Synthetic;
    try {
      rc.dataset.num_classes = std::stoi(parts[0]);
      rc.dataset.per_class = std::stoi(parts[1]);
      rc.dataset.input_dim = std::stoi(parts[2]);
      rc.dataset.spread = std::stod(parts[3]);
    } catch (const std::exception&) {
      detail::config_fail("synthetic", "expected C,per_class,dim,spread");
    }
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::Io, "cannot open config '" + path + "'");
  try {
    return Json::parse(in, nullptr, true, /*ignore_comments=*/false);
  } catch (const Json::parse_error& e) {
    fail(ErrorKind::Config, "'" + path + "': " + e.what());
  }
}

// File (optional) then flags, then validation.
inline RunConfig load_run_config(const std::optional<std::string>& path, const FlagOverrides& flags) {
  RunConfig rc = path ? parse_config(read_json_file(*path)) : RunConfig{};
  apply_overrides(rc, flags);
  validate(rc);
  return rc;
}

// Every field, defaults included, so the document alone reproduces the run.
inline Json to_json(const RunConfig& rc) {
  const auto& f = rc.fed;
  Json j;
  j["method"] = std::string(to_string(f.method));
  j["granularity"] = std::string(to_string(f.granularity));
  j["R"] = f.R;
  j["n_clients"] = f.n_clients;
  j["rounds"] = f.rounds;
  j["local_epochs"] = f.local_epochs;
  j["warmup_rounds"] = f.warmup_rounds;
  j["lr"] = f.lr;
  j["batch_size"] = f.batch_size;
  j["temperature"] = f.kd.temperature;
  j["alpha_kd"] = f.kd.alpha_kd;
  j["t_squared_scaling"] = f.kd.t_squared_scaling;
  j["alpha_dir"] = f.alpha_dir;
  j["seed"] = f.seed;
  j["exclude_self"] = f.exclude_self;
  j["min_per_client"] = f.effective_min_per_client();
  j["test_fraction"] = f.test_fraction;
  j["local_test_source"] = std::string(to_string(f.local_test_source));
  j["fedavg_tier"] = std::string(to_string(f.fedavg_tier));
  j["d_hash"] = f.d_hash;
  j["hnsw"] = {{"M", f.hnsw.M}, {"ef_construction", f.hnsw.ef_construction}, {"ef_search", f.hnsw.ef_search}};
  j["hierarchy"] = {{"linkage", std::string(to_string(f.hierarchy.linkage))},
                    {"space", f.hierarchy.softened ? "softened" : "logits"}};
  const auto& d = rc.dataset;
  if (d.kind == DatasetSpec::Kind::Synthetic) {
    j["dataset"] = {{"kind", "synthetic"},       {"num_classes", d.num_classes}, {"per_class", d.per_class},
                    {"input_dim", d.input_dim},  {"spread", d.spread},           {"test_per_class", d.test_per_class}};
  } else {
    j["dataset"] = {{"kind", "idx"},
                    {"images", d.images},
                    {"labels", d.labels},
                    {"test_images", d.test_images},
                    {"test_labels", d.test_labels},
                    {"max_train", d.max_train},
                    {"max_test", d.max_test},
                    {"holdout_fraction", d.holdout_fraction}};
  }
  j["output"] = {{"dir", rc.out_dir}, {"checkpoints", rc.dump_checkpoints}, {"cache_snapshot", rc.dump_cache}};
  return j;
}

// Training and global-test data for a run. Synthetic test data shares the
// training centres but uses an independent noise stream.
inline FederatedData load_data(const DatasetSpec& d, std::uint64_t seed) {
  if (d.kind == DatasetSpec::Kind::Synthetic) {
    const int test_per_class = d.test_per_class > 0 ? d.test_per_class : std::max(d.per_class / 4, 1);
    return {synth_blobs(d.num_classes, d.per_class, d.input_dim, d.spread, seed, 0),
            synth_blobs(d.num_classes, test_per_class, d.input_dim, d.spread, seed, 1)};
  }
  Dataset train = load_idx(d.images, d.labels);
  Dataset test;
  if (!d.test_images.empty()) {
    test = load_idx(d.test_images, d.test_labels, train.num_classes);
    train.num_classes = test.num_classes = std::max(train.num_classes, test.num_classes);
    if (d.max_test) test = sample_subset(test, d.max_test, derive_seed(seed, {1}));
  } else {
    auto [tr, te] = stratified_holdout(train, d.holdout_fraction, seed);
    train = std::move(tr);
    test = std::move(te);
    if (d.max_test) test = sample_subset(test, d.max_test, derive_seed(seed, {1}));
  }
  if (d.max_train) train = sample_subset(train, d.max_train, derive_seed(seed, {0}));
  return {std::move(train), std::move(test)};
}

}  // namespace hks
