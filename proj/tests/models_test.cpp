#include <gtest/gtest.h>

#include <sstream>

#include "hks/models.hpp"

using namespace hks;

namespace {

std::vector<Sample> random_batch(Rng& rng, std::size_t n, int dim, int classes) {
  std::vector<Sample> b(n);
  for (auto& s : b) {
    s.x.resize(static_cast<std::size_t>(dim));
    for (auto& v : s.x) v = rng.normal();
    s.label = static_cast<int>(rng.below(static_cast<std::uint64_t>(classes)));
  }
  return b;
}

Logits random_logits(Rng& rng, int c) {
  Logits z(static_cast<std::size_t>(c));
  for (auto& v : z) v = 2.0 * rng.normal();
  return z;
}

}  // namespace

TEST(BuildModel, DeterministicFromSeed) {
  const auto a = build_model(CapacityTier::Medium, 7, 4, 123);
  const auto b = build_model(CapacityTier::Medium, 7, 4, 123);
  EXPECT_EQ(a.params, b.params);
  EXPECT_NE(a.params, build_model(CapacityTier::Medium, 7, 4, 124).params);
}

TEST(BuildModel, ParameterCounts) {
  const auto small = build_model(CapacityTier::Small, 4, 3, 0);
  EXPECT_EQ(small.params.size(), 259u);
  EXPECT_EQ(small.architecture_id, "small:4-32-3");
  for (auto [in, c] : {std::pair{4, 3}, std::pair{784, 10}, std::pair{1, 1}}) {
    const auto s = build_model(CapacityTier::Small, in, c, 1).params.size();
    const auto m = build_model(CapacityTier::Medium, in, c, 1).params.size();
    const auto l = build_model(CapacityTier::Large, in, c, 1).params.size();
    EXPECT_LT(s, m);
    EXPECT_LT(m, l);
  }
}

TEST(BuildModel, GlorotBounds) {
  const auto m = build_model(CapacityTier::Small, 4, 3, 9);
  const double a0 = std::sqrt(6.0 / 36.0);
  for (std::size_t i = 0; i < 128; ++i) EXPECT_LE(std::abs(m.params[i]), a0);
  for (std::size_t i = 128; i < 160; ++i) EXPECT_EQ(m.params[i], 0.0);  // first-layer biases
}

TEST(Tier, ModThreeRule) {
  EXPECT_EQ(tier_for_client(0), CapacityTier::Small);
  EXPECT_EQ(tier_for_client(1), CapacityTier::Medium);
  EXPECT_EQ(tier_for_client(2), CapacityTier::Large);
  EXPECT_EQ(tier_for_client(19), CapacityTier::Medium);
}

TEST(Forward, ZeroParamsGiveZeroLogits) {
  auto m = build_model(CapacityTier::Large, 5, 4, 1);
  std::fill(m.params.begin(), m.params.end(), 0.0);
  for (double v : forward(m, std::vector<double>{1, -2, 3, 0.5, 9})) EXPECT_EQ(v, 0.0);
}

TEST(Forward, HandBuiltIdentity) {
  auto m = make_mlp({2, 2});
  m.params = {1, 0, 0, 1, 0, 0};  // W = I, b = 0
  EXPECT_EQ(forward(m, std::vector<double>{1, 2}), (Logits{1, 2}));
}

TEST(Forward, ShapeMismatch) {
  const auto m = build_model(CapacityTier::Small, 4, 3, 0);
  try {
    forward(m, std::vector<double>{1, 2, 3});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Shape);
  }
}

TEST(TrainBatch, ZeroLearningRateKeepsParams) {
  Rng rng(1);
  const auto m = build_model(CapacityTier::Small, 4, 3, 2);
  const auto batch = random_batch(rng, 5, 4, 3);
  const auto step = train_batch(m, batch, {}, KdConfig{}, 0.0);
  EXPECT_EQ(step.model.params, m.params);
  EXPECT_GT(step.loss.ce, 0.0);
  EXPECT_EQ(step.loss.kd, 0.0);
  EXPECT_EQ(step.loss.total, step.loss.ce);
  EXPECT_EQ(step.logits.size(), batch.size());
}

TEST(TrainBatch, TotalCombinesCeAndKd) {
  Rng rng(4);
  const auto m = build_model(CapacityTier::Medium, 4, 3, 2);
  const auto batch = random_batch(rng, 4, 4, 3);
  std::vector<TeacherSet> teachers{{random_logits(rng, 3)}, {}, {random_logits(rng, 3), random_logits(rng, 3)}, {}};
  const KdConfig cfg{3.0, 1.5, true};
  const auto step = train_batch(m, batch, teachers, cfg, 0.01);
  EXPECT_GT(step.loss.kd, 0.0);
  EXPECT_NEAR(step.loss.total, step.loss.ce + 1.5 * step.loss.kd, 1e-12);
  EXPECT_NEAR(step.loss.total, batch_loss(m, batch, teachers, cfg), 1e-12);
}

TEST(TrainBatch, TeacherLengthMismatch) {
  Rng rng(1);
  const auto m = build_model(CapacityTier::Small, 4, 3, 2);
  const auto batch = random_batch(rng, 3, 4, 3);
  std::vector<TeacherSet> teachers(2);
  EXPECT_THROW(train_batch(m, batch, teachers, KdConfig{}, 0.1), Error);
}

TEST(TrainBatch, DescendsOnAFixedSample) {
  Rng rng(8);
  auto m = build_model(CapacityTier::Small, 4, 2, 31);
  const auto batch = random_batch(rng, 1, 4, 2);
  const double before = batch_loss(m, batch, {}, KdConfig{});
  for (int i = 0; i < 50; ++i) m = train_batch(std::move(m), batch, {}, KdConfig{}, 0.01).model;
  EXPECT_LT(batch_loss(m, batch, {}, KdConfig{}), before);
}

// The parameter gradient used by train_batch against finite differences of
// the batch loss, with and without distillation terms.
TEST(TrainBatch, ParameterGradientMatchesFiniteDifferences) {
  Rng rng(99);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = build_model(CapacityTier::Small, 4, 3, rng.next_u64());
    const auto batch = random_batch(rng, 1 + rng.below(4), 4, 3);
    std::vector<TeacherSet> teachers;
    if (trial % 2 == 0) {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        TeacherSet t;
        for (std::size_t k = rng.below(3); k > 0; --k) t.push_back(random_logits(rng, 3));
        teachers.push_back(std::move(t));
      }
    }
    const KdConfig cfg{1.0 + 3.0 * rng.uniform(), 1.5, trial % 4 == 0};
    const auto analytic = batch_gradient(m, batch, teachers, cfg).grad;
    Model probe = m;
    const auto numeric = finite_diff(
        [&](std::span<const double> p) {
          probe.params.assign(p.begin(), p.end());
          return batch_loss(probe, batch, teachers, cfg);
        },
        m.params, 1e-6);
    worst = std::max(worst, relative_error(analytic, numeric));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(FedAvg, Examples) {
  auto a = make_mlp({1, 1});
  a.params = {2.0, 0.0};
  auto b = a;
  b.params = {4.0, 0.0};
  const std::vector<Model> ms{a, b};
  EXPECT_EQ(fedavg_aggregate(ms, std::vector<double>{0.5, 0.5}).params[0], 3.0);
  EXPECT_EQ(fedavg_aggregate(ms, std::vector<double>{1.0, 0.0}).params, a.params);
  const std::vector<Model> same{a, a};
  EXPECT_EQ(fedavg_aggregate(same, std::vector<double>{0.3, 0.7}).params[0], 2.0);
}

TEST(FedAvg, RejectsMixedArchitectures) {
  const std::vector<Model> ms{build_model(CapacityTier::Small, 4, 3, 0), build_model(CapacityTier::Medium, 4, 3, 0)};
  try {
    fedavg_aggregate(ms, std::vector<double>{0.5, 0.5});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::IncompatibleArchitecture);
  }
}

TEST(FedAvg, PermutationEquivariant) {
  Rng rng(12);
  std::vector<Model> ms;
  for (int i = 0; i < 4; ++i) ms.push_back(build_model(CapacityTier::Small, 3, 2, rng.next_u64()));
  const std::vector<std::size_t> sizes{5, 1, 7, 3};
  const auto w = weights_from_sizes(sizes);
  EXPECT_NEAR(w[0] + w[1] + w[2] + w[3], 1.0, 1e-12);
  const auto ref = fedavg_aggregate(ms, w);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  std::vector<Model> pm;
  std::vector<double> pw;
  for (auto i : perm) {
    pm.push_back(ms[i]);
    pw.push_back(w[i]);
  }
  const auto got = fedavg_aggregate(pm, pw);
  for (std::size_t i = 0; i < ref.params.size(); ++i) EXPECT_NEAR(got.params[i], ref.params[i], 1e-12);
}

TEST(Checkpoint, HeaderAndRoundTrip) {
  const auto m = build_model(CapacityTier::Medium, 6, 4, 5);
  const auto bytes = checkpoint_bytes(m);
  const std::string header = "HKSMODEL v1 medium:6-64-32-4 " + std::to_string(m.params.size()) + "\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  EXPECT_EQ(bytes.size(), header.size() + 8 * m.params.size());
  // Little-endian: first byte is the low byte of the first parameter.
  EXPECT_EQ(static_cast<unsigned char>(bytes[header.size()]),
            std::bit_cast<std::uint64_t>(m.params[0]) & 0xffu);
  std::istringstream in(bytes);
  const auto back = read_checkpoint(in);
  EXPECT_EQ(back.architecture_id, m.architecture_id);
  EXPECT_EQ(back.params, m.params);
  std::istringstream truncated(bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(read_checkpoint(truncated), Error);
}
