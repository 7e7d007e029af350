#pragma once

// Dense loss arithmetic for the training core: tempered softmax,
// cross-entropy, the teacher-weighted KL distillation loss, their analytic
// gradients with respect to the logits, plain SGD and a central-difference
// gradient oracle. Everything is double precision.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hks/error.hpp"

namespace hks {

using Logits = std::vector<double>;
using SoftDistribution = std::vector<double>;

struct KdConfig {
  double temperature = 3.0;
  double alpha_kd = 1.5;
  bool t_squared_scaling = true;

  double scale() const { return t_squared_scaling ? temperature * temperature : 1.0; }

  void validate() const {
    if (!(temperature > 0.0) || !std::isfinite(temperature))
      fail(ErrorKind::InvalidInput, "temperature must be positive, got " + std::to_string(temperature));
    if (!(alpha_kd >= 0.0) || !std::isfinite(alpha_kd))
      fail(ErrorKind::InvalidInput, "alpha_kd must be nonnegative, got " + std::to_string(alpha_kd));
  }
};

struct LossBreakdown {
  double ce = 0.0;
  double kd = 0.0;
  double total = 0.0;
};

namespace detail {

inline void require_finite(std::span<const double> z) {
  for (double v : z)
    if (!std::isfinite(v)) fail(ErrorKind::InvalidInput, "non-finite logit");
}

inline void require_same_length(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    fail(ErrorKind::Shape, "length mismatch: " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
}

inline double log_sum_exp(std::span<const double> z, double inv_t) {
  const double m = *std::max_element(z.begin(), z.end()) * inv_t;
  double s = 0.0;
  for (double v : z) s += std::exp(v * inv_t - m);
  return m + std::log(s);
}

}  // namespace detail

inline SoftDistribution softmax_t(std::span<const double> z, double temperature) {
  if (!(temperature > 0.0)) fail(ErrorKind::InvalidInput, "temperature must be positive");
  if (z.empty()) fail(ErrorKind::Shape, "empty logits");
  detail::require_finite(z);
  const double inv_t = 1.0 / temperature;
  const double m = *std::max_element(z.begin(), z.end()) * inv_t;
  SoftDistribution q(z.size());
  double s = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    q[i] = std::exp(z[i] * inv_t - m);
    s += q[i];
  }
  for (double& v : q) v /= s;
  return q;
}

inline void check_class(std::span<const double> z, int y) {
  if (y < 0 || static_cast<std::size_t>(y) >= z.size())
    fail(ErrorKind::Index, "class index " + std::to_string(y) + " out of range [0, " + std::to_string(z.size()) + ")");
}

inline double cross_entropy(std::span<const double> z, int y) {
  check_class(z, y);
  detail::require_finite(z);
  // -log softmax(z)[y] = lse(z) - z[y]; clamp tiny negative rounding.
  return std::max(0.0, detail::log_sum_exp(z, 1.0) - z[static_cast<std::size_t>(y)]);
}

inline std::vector<double> ce_grad(std::span<const double> z, int y) {
  check_class(z, y);
  auto g = softmax_t(z, 1.0);
  g[static_cast<std::size_t>(y)] -= 1.0;
  return g;
}

// KL(q_t || q_s) with q = softmax(z / T), optionally scaled by T^2.
inline double kd_loss(std::span<const double> z_s, std::span<const double> z_t, const KdConfig& cfg) {
  detail::require_same_length(z_s, z_t);
  cfg.validate();
  const auto q_t = softmax_t(z_t, cfg.temperature);
  // log q_s via log-sum-exp so that saturated students stay finite.
  const double inv_t = 1.0 / cfg.temperature;
  const double lse_s = detail::log_sum_exp(z_s, inv_t);
  const double lse_t = detail::log_sum_exp(z_t, inv_t);
  double kl = 0.0;
  for (std::size_t i = 0; i < z_s.size(); ++i) {
    if (q_t[i] == 0.0) continue;
    const double log_qt = z_t[i] * inv_t - lse_t;
    const double log_qs = z_s[i] * inv_t - lse_s;
    kl += q_t[i] * (log_qt - log_qs);
  }
  return std::max(0.0, kl) * cfg.scale();
}

inline std::vector<double> kd_grad(std::span<const double> z_s, std::span<const double> z_t, const KdConfig& cfg) {
  detail::require_same_length(z_s, z_t);
  cfg.validate();
  const auto q_s = softmax_t(z_s, cfg.temperature);
  const auto q_t = softmax_t(z_t, cfg.temperature);
  const double f = cfg.scale() / cfg.temperature;
  std::vector<double> g(z_s.size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = f * (q_s[i] - q_t[i]);
  return g;
}

inline std::vector<double> sgd_step(std::span<const double> params, std::span<const double> grads, double lr) {
  detail::require_same_length(params, grads);
  if (!(lr >= 0.0)) fail(ErrorKind::InvalidInput, "learning rate must be nonnegative");
  std::vector<double> out(params.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = params[i] - lr * grads[i];
  return out;
}

// Central differences (f(x + eps e_i) - f(x - eps e_i)) / 2 eps.
template <typename F>
std::vector<double> finite_diff(F&& f, std::span<const double> x, double eps = 1e-5) {
  std::vector<double> probe(x.begin(), x.end());
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(std::span<const double>(probe));
    probe[i] = orig - eps;
    const double down = f(std::span<const double>(probe));
    probe[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

// ||a - b|| / max(||a|| + ||b||, floor); the symmetric form used by the
// gradient checks.
inline double relative_error(std::span<const double> a, std::span<const double> b, double floor = 1e-12) {
  detail::require_same_length(a, b);
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max(std::sqrt(na) + std::sqrt(nb), floor);
}

}  // namespace hks
