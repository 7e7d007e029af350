#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "hks/config.hpp"
#include "hks/federation.hpp"

namespace hks::testing {

// A small, fast federation: 4 clients, 3 classes, 6 rounds with 2 warm-up.
inline FederationConfig small_fed(Method m) {
  FederationConfig f;
  f.method = m;
  f.n_clients = 4;
  f.rounds = 6;
  f.warmup_rounds = 2;
  f.batch_size = 4;
  f.lr = 0.05;
  f.R = 3;
  f.d_hash = 8;
  f.hnsw.ef_construction = 40;
  f.seed = 7;
  return f;
}

inline FederatedData small_data(std::uint64_t seed = 7) {
  return {synth_blobs(3, 30, 6, 0.4, seed, 0), synth_blobs(3, 10, 6, 0.4, seed, 1)};
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

inline std::filesystem::path fresh_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "hks_tests" / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace hks::testing
