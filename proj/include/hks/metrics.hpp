#pragma once

// Accuracy evaluation and the two headline metrics: MAUA (maximum over rounds
// of the mean per-client local test accuracy) and mean global test accuracy.

#include <algorithm>
#include <cstddef>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include "hks/data.hpp"
#include "hks/error.hpp"
#include "hks/models.hpp"

namespace hks {

// Lowest index wins ties.
inline std::size_t argmax(std::span<const double> z) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < z.size(); ++i)
    if (z[i] > z[best]) best = i;
  return best;
}

inline double evaluate(const Model& m, const Dataset& ds) {
  if (ds.empty()) fail(ErrorKind::EmptyDataset, "cannot evaluate on an empty dataset");
  std::size_t correct = 0;
  for (const auto& s : ds.samples)
    if (argmax(forward(m, s.x)) == static_cast<std::size_t>(s.label)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

inline double mean(std::span<const double> xs) {
  if (xs.empty()) fail(ErrorKind::UndefinedMetric, "mean of an empty vector");
  return std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

// Unweighted mean over clients of each model's accuracy on the global test set.
inline double global_accuracy(std::span<const Model> models, const Dataset& global_test) {
  if (global_test.empty()) fail(ErrorKind::EmptyDataset, "global test set is empty");
  if (models.empty()) fail(ErrorKind::UndefinedMetric, "no clients");
  std::vector<double> accs;
  accs.reserve(models.size());
  for (const auto& m : models) accs.push_back(evaluate(m, global_test));
  return mean(accs);
}

struct RoundReport {
  int round = 0;
  std::vector<double> per_client_local_acc;
  std::vector<double> global_acc_per_client;
  double mean_ce = 0.0;
  double mean_kd = 0.0;
  bool hierarchy_built = false;
  // Round in which the hierarchy used by this round's clients was built
  // (-1 when clients had none).
  int teacher_tree_round = -1;
  std::size_t teacher_fetches = 0;

  double mean_local_acc() const { return mean(per_client_local_acc); }
  double mean_global_acc() const { return mean(global_acc_per_client); }
};

// Rows are rounds, columns clients.
inline double maua(const std::vector<std::vector<double>>& per_round_client_acc) {
  if (per_round_client_acc.empty()) fail(ErrorKind::UndefinedMetric, "MAUA needs at least one round");
  double best = -1.0;
  for (const auto& row : per_round_client_acc) best = std::max(best, mean(row));
  return best;
}

inline double maua(std::span<const RoundReport> reports) {
  std::vector<std::vector<double>> m;
  m.reserve(reports.size());
  for (const auto& r : reports) m.push_back(r.per_client_local_acc);
  return maua(m);
}

struct ExperimentSummary {
  std::optional<double> maua;  // absent when no round ran
  std::optional<double> best_global_acc;
  std::optional<double> final_global_acc;
  int rounds_run = 0;
};

inline ExperimentSummary summarize(std::span<const RoundReport> reports) {
  ExperimentSummary s;
  s.rounds_run = static_cast<int>(reports.size());
  if (reports.empty()) return s;
  s.maua = maua(reports);
  double best = -1.0;
  for (const auto& r : reports) best = std::max(best, r.mean_global_acc());
  s.best_global_acc = best;
  s.final_global_acc = reports.back().mean_global_acc();
  return s;
}

}  // namespace hks
