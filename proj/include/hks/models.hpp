#pragma once

// Fully-connected ReLU networks in three capacity tiers, their forward and
// backward passes, one-step SGD training with an optional distillation term,
// FedAvg parameter averaging and a flat binary checkpoint format.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "hks/error.hpp"
#include "hks/numerics.hpp"
#include "hks/random.hpp"
#include "hks/types.hpp"

namespace hks {

enum class CapacityTier { Small, Medium, Large };

inline std::string_view to_string(CapacityTier t) {
  switch (t) {
    case CapacityTier::Small: return "small";
    case CapacityTier::Medium: return "medium";
    case CapacityTier::Large: return "large";
  }
  return "small";
}

inline CapacityTier parse_tier(std::string_view s) {
  if (s == "small") return CapacityTier::Small;
  if (s == "medium") return CapacityTier::Medium;
  if (s == "large") return CapacityTier::Large;
  fail(ErrorKind::InvalidInput, "unknown capacity tier '" + std::string(s) + "'");
}

// Client i gets Small when i % 3 == 0, Medium when 1, Large when 2.
inline CapacityTier tier_for_client(int client_id) {
  switch (client_id % 3) {
    case 0: return CapacityTier::Small;
    case 1: return CapacityTier::Medium;
    default: return CapacityTier::Large;
  }
}

inline std::vector<int> hidden_widths(CapacityTier t) {
  switch (t) {
    case CapacityTier::Small: return {32};
    case CapacityTier::Medium: return {64, 32};
    case CapacityTier::Large: return {128, 64, 32};
  }
  return {};
}

// Teachers for one sample; empty means no teacher knowledge is available and
// the sample contributes no distillation loss. Several entries are averaged.
using TeacherSet = std::vector<Logits>;

struct Model {
  std::string architecture_id;
  std::vector<int> layer_dims;  // input, hidden..., classes
  std::vector<double> params;   // per layer: weights (out x in, row-major), then bias (out)
  std::uint64_t seed = 0;

  int input_dim() const { return layer_dims.front(); }
  int num_classes() const { return layer_dims.back(); }
  std::size_t num_layers() const { return layer_dims.size() - 1; }
};

inline std::size_t param_count(std::span<const int> layer_dims) {
  std::size_t n = 0;
  for (std::size_t l = 0; l + 1 < layer_dims.size(); ++l)
    n += static_cast<std::size_t>(layer_dims[l] + 1) * static_cast<std::size_t>(layer_dims[l + 1]);
  return n;
}

inline std::string architecture_id(std::string_view family, std::span<const int> layer_dims) {
  std::string id(family);
  id += ':';
  for (std::size_t i = 0; i < layer_dims.size(); ++i) {
    if (i) id += '-';
    id += std::to_string(layer_dims[i]);
  }
  return id;
}

// A zero-initialised network with explicit layer sizes.
inline Model make_mlp(std::vector<int> layer_dims, std::string_view family = "mlp") {
  if (layer_dims.size() < 2) fail(ErrorKind::Shape, "a model needs at least an input and an output layer");
  for (int d : layer_dims)
    if (d < 1) fail(ErrorKind::Shape, "layer widths must be positive");
  Model m;
  m.architecture_id = architecture_id(family, layer_dims);
  m.params.assign(param_count(layer_dims), 0.0);
  m.layer_dims = std::move(layer_dims);
  return m;
}

inline Model build_model(CapacityTier tier, int input_dim, int num_classes, std::uint64_t seed) {
  if (input_dim < 1 || num_classes < 1) fail(ErrorKind::Shape, "input_dim and class count must be positive");
  std::vector<int> dims{input_dim};
  for (int w : hidden_widths(tier)) dims.push_back(w);
  dims.push_back(num_classes);
  Model m = make_mlp(dims, to_string(tier));
  m.seed = seed;
  // Glorot uniform weights, zero biases.
  Rng rng(derive_seed(seed, {stream::kModelInit}));
  std::size_t off = 0;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const auto in = static_cast<std::size_t>(dims[l]);
    const auto out = static_cast<std::size_t>(dims[l + 1]);
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    for (std::size_t i = 0; i < in * out; ++i) m.params[off + i] = rng.uniform(-a, a);
    off += in * out + out;
  }
  return m;
}

namespace detail {

// Activations of every layer for one input; acts[0] is the input and
// acts.back() the logits. Hidden activations are post-ReLU.
inline std::vector<std::vector<double>> forward_all(const Model& m, std::span<const double> x) {
  if (x.size() != static_cast<std::size_t>(m.input_dim()))
    fail(ErrorKind::Shape, "input has " + std::to_string(x.size()) + " features, model expects " +
                               std::to_string(m.input_dim()));
  std::vector<std::vector<double>> acts;
  acts.reserve(m.layer_dims.size());
  acts.emplace_back(x.begin(), x.end());
  std::size_t off = 0;
  const std::size_t n_layers = m.num_layers();
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto in = static_cast<std::size_t>(m.layer_dims[l]);
    const auto out = static_cast<std::size_t>(m.layer_dims[l + 1]);
    const double* w = m.params.data() + off;
    const double* b = w + in * out;
    const auto& a = acts.back();
    std::vector<double> z(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = b[o];
      const double* row = w + o * in;
      for (std::size_t i = 0; i < in; ++i) s += row[i] * a[i];
      z[o] = (l + 1 < n_layers) ? std::max(0.0, s) : s;
    }
    acts.push_back(std::move(z));
    off += in * out + out;
  }
  return acts;
}

}  // namespace detail

inline Logits forward(const Model& m, std::span<const double> x) {
  auto acts = detail::forward_all(m, x);
  return std::move(acts.back());
}

struct BatchGradient {
  LossBreakdown loss;
  std::vector<double> grad;     // d(total) / d(params)
  std::vector<Logits> logits;   // forward output per sample
};

// Loss L = mean CE + alpha_kd * mean KD over the batch, where a sample's KD is
// the mean of its teachers' kd_loss values (zero with no teachers), and the
// analytic gradient of L with respect to every parameter.
inline BatchGradient batch_gradient(const Model& m, std::span<const Sample> batch,
                                    std::span<const TeacherSet> teachers, const KdConfig& cfg) {
  if (batch.empty()) fail(ErrorKind::Shape, "empty batch");
  if (!teachers.empty() && teachers.size() != batch.size())
    fail(ErrorKind::Shape, "teacher list has " + std::to_string(teachers.size()) + " entries for a batch of " +
                               std::to_string(batch.size()));
  cfg.validate();

  BatchGradient out;
  out.grad.assign(m.params.size(), 0.0);
  out.logits.reserve(batch.size());
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const std::size_t n_layers = m.num_layers();

  std::vector<std::size_t> offsets(n_layers);
  for (std::size_t l = 0, off = 0; l < n_layers; ++l) {
    offsets[l] = off;
    off += static_cast<std::size_t>(m.layer_dims[l] + 1) * static_cast<std::size_t>(m.layer_dims[l + 1]);
  }

  double ce_sum = 0.0, kd_sum = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto acts = detail::forward_all(m, batch[s].x);
    const Logits& z = acts.back();

    ce_sum += cross_entropy(z, batch[s].label);
    std::vector<double> delta = ce_grad(z, batch[s].label);

    if (!teachers.empty() && !teachers[s].empty()) {
      const double w = 1.0 / static_cast<double>(teachers[s].size());
      double kd = 0.0;
      for (const auto& t : teachers[s]) {
        kd += w * kd_loss(z, t, cfg);
        const auto g = kd_grad(z, t, cfg);
        for (std::size_t i = 0; i < delta.size(); ++i) delta[i] += cfg.alpha_kd * w * g[i];
      }
      kd_sum += kd;
    }
    for (double& d : delta) d *= inv_b;

    for (std::size_t l = n_layers; l-- > 0;) {
      const auto in = static_cast<std::size_t>(m.layer_dims[l]);
      const auto out_dim = static_cast<std::size_t>(m.layer_dims[l + 1]);
      const auto& a = acts[l];
      double* gw = out.grad.data() + offsets[l];
      double* gb = gw + in * out_dim;
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        double* row = gw + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += d * a[i];
        gb[o] += d;
      }
      if (l == 0) break;
      const double* w = m.params.data() + offsets[l];
      std::vector<double> prev(in, 0.0);
      for (std::size_t o = 0; o < out_dim; ++o) {
        const double d = delta[o];
        if (d == 0.0) continue;
        const double* row = w + o * in;
        for (std::size_t i = 0; i < in; ++i) prev[i] += row[i] * d;
      }
      // ReLU: acts[l] is post-activation, so a zero output means an inactive unit.
      for (std::size_t i = 0; i < in; ++i)
        if (!(a[i] > 0.0)) prev[i] = 0.0;
      delta = std::move(prev);
    }
    out.logits.push_back(z);
  }

  out.loss.ce = ce_sum * inv_b;
  out.loss.kd = kd_sum * inv_b;
  out.loss.total = out.loss.ce + cfg.alpha_kd * out.loss.kd;
  return out;
}

// Loss only, for finite-difference checks against batch_gradient.
inline double batch_loss(const Model& m, std::span<const Sample> batch, std::span<const TeacherSet> teachers,
                         const KdConfig& cfg) {
  double ce = 0.0, kd = 0.0;
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const auto z = forward(m, batch[s].x);
    ce += cross_entropy(z, batch[s].label);
    if (!teachers.empty() && !teachers[s].empty()) {
      double k = 0.0;
      for (const auto& t : teachers[s]) k += kd_loss(z, t, cfg);
      kd += k / static_cast<double>(teachers[s].size());
    }
  }
  const double n = static_cast<double>(batch.size());
  return ce / n + cfg.alpha_kd * kd / n;
}

struct TrainStep {
  Model model;
  LossBreakdown loss;          // measured before the update
  std::vector<Logits> logits;  // forward outputs before the update
};

inline TrainStep train_batch(Model m, std::span<const Sample> batch, std::span<const TeacherSet> teachers,
                             const KdConfig& cfg, double lr) {
  auto g = batch_gradient(m, batch, teachers, cfg);
  m.params = sgd_step(m.params, g.grad, lr);
  return TrainStep{std::move(m), g.loss, std::move(g.logits)};
}

using AggregateWeights = std::vector<double>;

// p_k = |D_k| / sum |D_j|.
inline AggregateWeights weights_from_sizes(std::span<const std::size_t> sizes) {
  double total = 0.0;
  for (auto s : sizes) total += static_cast<double>(s);
  if (!(total > 0.0)) fail(ErrorKind::InvalidInput, "aggregate weights need at least one nonempty client");
  AggregateWeights w;
  w.reserve(sizes.size());
  for (auto s : sizes) w.push_back(static_cast<double>(s) / total);
  return w;
}

inline Model fedavg_aggregate(std::span<const Model> models, std::span<const double> weights) {
  if (models.empty()) fail(ErrorKind::InvalidInput, "nothing to aggregate");
  if (models.size() != weights.size())
    fail(ErrorKind::Shape, std::to_string(models.size()) + " models but " + std::to_string(weights.size()) + " weights");
  double wsum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) fail(ErrorKind::InvalidInput, "aggregate weights must be nonnegative");
    wsum += w;
  }
  if (std::abs(wsum - 1.0) > 1e-9) fail(ErrorKind::InvalidInput, "aggregate weights must sum to 1");
  const Model& first = models.front();
  for (const auto& m : models)
    if (m.architecture_id != first.architecture_id || m.params.size() != first.params.size())
      fail(ErrorKind::IncompatibleArchitecture,
           "cannot average '" + m.architecture_id + "' with '" + first.architecture_id + "'");
  Model out = first;
  for (std::size_t i = 0; i < out.params.size(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < models.size(); ++k) s += weights[k] * models[k].params[i];
    out.params[i] = s;
  }
  return out;
}

// Checkpoint: header line "HKSMODEL v1 <architecture_id> <param_count>\n"
// followed by the parameters as little-endian IEEE-754 doubles.
inline void write_checkpoint(std::ostream& os, const Model& m) {
  os << "HKSMODEL v1 " << m.architecture_id << ' ' << m.params.size() << '\n';
  for (double v : m.params) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((bits >> (8 * i)) & 0xffu);
    os.write(buf, 8);
  }
  if (!os) fail(ErrorKind::Io, "failed writing checkpoint");
}

inline std::string checkpoint_bytes(const Model& m) {
  std::ostringstream os(std::ios::binary);
  write_checkpoint(os, m);
  return std::move(os).str();
}

inline Model read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) fail(ErrorKind::Io, "empty checkpoint");
  std::istringstream hs(line);
  std::string magic, version, arch;
  std::size_t count = 0;
  if (!(hs >> magic >> version >> arch >> count) || magic != "HKSMODEL" || version != "v1")
    fail(ErrorKind::Format, "bad checkpoint header '" + line + "'");
  const auto colon = arch.find(':');
  if (colon == std::string::npos) fail(ErrorKind::Format, "bad architecture id '" + arch + "'");
  std::vector<int> dims;
  std::istringstream ds(arch.substr(colon + 1));
  for (std::string tok; std::getline(ds, tok, '-');) dims.push_back(std::stoi(tok));
  Model m = make_mlp(dims, arch.substr(0, colon));
  if (m.params.size() != count) fail(ErrorKind::Consistency, "parameter count does not match architecture");
  for (auto& v : m.params) {
    unsigned char buf[8];
    if (!is.read(reinterpret_cast<char*>(buf), 8)) fail(ErrorKind::Io, "truncated checkpoint");
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    v = std::bit_cast<double>(bits);
  }
  return m;
}

}  // namespace hks
