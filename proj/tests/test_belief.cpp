#include <cmath>

#include <gtest/gtest.h>

#include "oracles.hpp"

namespace b = tpose::belief;
using tpose::make_rng;
using tpose::Rng;

TEST(StateSpace, ValidationRejectsBadGrids) {
  b::StateSpaceSpec s;
  EXPECT_NO_THROW(s.validate());
  s.d = 10;
  EXPECT_THROW(s.validate(), tpose::ConfigError);
  s.d = 1;
  EXPECT_THROW(s.validate(), tpose::ConfigError);
  s = {};
  s.n = 0;
  EXPECT_THROW(s.validate(), tpose::ConfigError);
  EXPECT_EQ(b::StateSpaceSpec{}.origin(), 5u);
}

TEST(DeltaAction, CategoryRoundTripAndRange) {
  for (std::size_t c = 0; c < b::kMovesPerDim; ++c) EXPECT_EQ(b::DeltaAction::category_of(b::DeltaAction::delta_of(c)), c);
  EXPECT_EQ(b::DeltaAction::delta_of(0), -2);
  EXPECT_EQ(b::DeltaAction::delta_of(4), 2);
  EXPECT_THROW(b::DeltaAction({3}), tpose::ConfigError);
}

TEST(Predict, MatchesShiftMatrixAndClampsAtEdges) {
  Rng rng = make_rng(7);
  for (std::size_t d : {3u, 5u, 11u}) {
    for (int delta = -2; delta <= 2; ++delta) {
      b::FactoredBelief bel(1, d);
      double z = 0.0;
      for (auto& v : bel.values) z += (v = std::uniform_real_distribution<double>(0.0, 1.0)(rng));
      for (auto& v : bel.values) v /= z;
      const auto out = b::predict(bel, b::DeltaAction({delta}));
      const auto t = tpose::oracle::shift_matrix(d, delta);
      for (std::size_t to = 0; to < d; ++to) {
        double expect = 0.0;
        for (std::size_t from = 0; from < d; ++from) expect += t[to][from] * bel.at(0, from);
        EXPECT_NEAR(out.at(0, to), expect, 1e-15);
      }
      EXPECT_NEAR(b::normalization_error(out), 0.0, 1e-12);
    }
  }
  // All mass at the right edge stays there under a positive shift.
  b::FactoredBelief edge(1, 5, std::vector<double>{0, 0, 0, 0.25, 0.75});
  const auto moved = b::predict(edge, b::DeltaAction({2}));
  EXPECT_DOUBLE_EQ(moved.at(0, 4), 1.0);
}

TEST(Filter, AgreesWithMatrixOracleOnRandomEpisodes) {
  const auto r = tpose::oracle::filter_vs_matrix_oracle(200, 12, 3);
  EXPECT_EQ(r.episodes, 200u);
  EXPECT_LT(r.max_abs_error, 1e-9);
}

TEST(Filter, FactoredPosteriorEqualsJointPosteriorMarginals) {
  // With a product likelihood the joint posterior factorizes, so its marginals equal the factored rows.
  Rng rng = make_rng(9);
  for (auto [n, d] : {std::pair<std::size_t, std::size_t>{2, 5}, {3, 3}, {2, 11}, {4, 3}}) {
    b::StateSpaceSpec spec;
    spec.n = n;
    spec.d = d;
    auto bel = b::uniform_belief(spec);
    tpose::oracle::JointFilter joint(n, d);
    for (int t = 0; t < 10; ++t) {
      const auto a = tpose::oracle::random_action(n, rng);
      const auto l = tpose::oracle::random_likelihood(n, d, rng);
      bel = b::step(bel, a, l);
      joint.step(a, l);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) EXPECT_NEAR(bel.at(i, j), joint.marginal(i, j), 1e-9);
    }
  }
}

TEST(Filter, RowsStayNormalizedAndNonNegative) {
  Rng rng = make_rng(10);
  b::StateSpaceSpec spec;
  auto bel = b::uniform_belief(spec);
  for (int t = 0; t < 500; ++t) {
    bel = b::step(bel, tpose::oracle::random_action(spec.n, rng), tpose::oracle::random_likelihood(spec.n, spec.d, rng));
    ASSERT_LT(b::normalization_error(bel), 1e-12);
    for (double v : bel.values) ASSERT_GE(v, 0.0);
  }
}

TEST(Filter, UniformLikelihoodIsANoOp) {
  b::FactoredBelief bel(2, 3, std::vector<double>{0.2, 0.3, 0.5, 1.0, 0.0, 0.0});
  const auto out = b::update(bel, b::Likelihood(2, 3, 0.7));
  for (std::size_t k = 0; k < bel.values.size(); ++k) EXPECT_NEAR(out.values[k], bel.values[k], 1e-15);
}

TEST(Filter, CollapsedRowResetsToUniformAndIsReported) {
  b::FactoredBelief bel(2, 3, std::vector<double>{1.0, 0.0, 0.0, 0.2, 0.3, 0.5});
  b::Likelihood l(2, 3, std::vector<double>{0.0, 1.0, 1.0, 1.0, 1.0, 1.0});
  b::FilterEvents ev;
  const auto out = b::update(bel, l, &ev);
  EXPECT_EQ(ev.resets, 1u);
  ASSERT_EQ(ev.reset_rows.size(), 1u);
  EXPECT_EQ(ev.reset_rows[0], 0u);
  for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(out.at(0, j), 1.0 / 3.0);
  EXPECT_NEAR(out.at(1, 2), 0.5, 1e-15);
}

TEST(Filter, InvalidLikelihoodsRejected) {
  auto bel = b::uniform_belief({2, 3, {}});
  EXPECT_THROW(b::update(bel, b::Likelihood(2, 5, 1.0)), tpose::ShapeError);
  EXPECT_THROW(b::update(bel, b::Likelihood(2, 3, -1.0)), tpose::NumericError);
  EXPECT_THROW(b::update(bel, b::Likelihood(2, 3, std::nan(""))), tpose::NumericError);
  EXPECT_THROW(b::predict(bel, b::DeltaAction::zero(3)), tpose::ShapeError);
}

TEST(MapEstimate, TiesGoToLowestIndex) {
  b::FactoredBelief bel(3, 3, std::vector<double>{0.4, 0.4, 0.2, 1.0 / 3, 1.0 / 3, 1.0 / 3, 0.1, 0.2, 0.7});
  const auto s = b::map_estimate(bel);
  EXPECT_EQ(s.indices, (std::vector<int>{0, 0, 2}));
}

TEST(Entropy, UniformAndOneHotExtremes) {
  b::StateSpaceSpec spec;
  const auto h = b::belief_entropy(b::uniform_belief(spec));
  for (double v : h) EXPECT_NEAR(v, std::log(11.0), 1e-12);
  const auto h1 = b::belief_entropy(b::one_hot_belief(spec, {{0, 3, 5, 10}}));
  for (double v : h1) EXPECT_EQ(v, 0.0);
}

TEST(BeliefJson, RoundTrip) {
  Rng rng = make_rng(12);
  auto bel = b::step(b::uniform_belief({}), b::DeltaAction::zero(4), tpose::oracle::random_likelihood(4, 11, rng));
  const auto back = b::belief_from_json(nlohmann::json::parse(b::to_json(bel).dump()));
  EXPECT_EQ(back.n, 4u);
  for (std::size_t k = 0; k < bel.values.size(); ++k) EXPECT_DOUBLE_EQ(back.values[k], bel.values[k]);
  EXPECT_THROW(b::belief_from_json(nlohmann::json{{"n", 2}, {"d", 3}, {"rows", {{1, 0, 0}}}}), tpose::ShapeError);
}
