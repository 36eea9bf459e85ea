#include <bts/csi_sim.hpp>
#include <bts/experiment.hpp>

#include <gtest/gtest.h>

#include <numeric>

using namespace bts;

namespace {

double mean_temporal_variance(const CsiDataset& ds) {
  const auto& a = ds.amplitudes;
  double acc = 0;
  for (std::size_t s = 0; s < a.d1; ++s)
    for (std::size_t k = 0; k < a.d2; ++k) {
      double m = 0, m2 = 0;
      for (std::size_t t = 0; t < a.d0; ++t) {
        const double v = a(t, s, k);
        m += v;
        m2 += v * v;
      }
      m /= static_cast<double>(a.d0);
      acc += m2 / static_cast<double>(a.d0) - m * m;
    }
  return acc / static_cast<double>(a.d1 * a.d2);
}

std::vector<double> mean_profile(const CsiDataset& ds) {
  const auto& a = ds.amplitudes;
  std::vector<double> p(a.d1 * a.d2, 0.0);
  for (std::size_t t = 0; t < a.d0; ++t)
    for (std::size_t s = 0; s < a.d1; ++s)
      for (std::size_t k = 0; k < a.d2; ++k) p[k * a.d1 + s] += a(t, s, k);
  for (auto& v : p) v /= static_cast<double>(a.d0);
  return p;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace

TEST(Simulate, NoiseFreeEmptyRoomIsConstant) {
  GeometryOptions g;
  g.noise_std = 0;
  g.dynamic_gain_scale = 0;
  const auto sc = make_scenario(3, g);
  const auto ds = simulate_round(sc, 64, 1);
  const auto& a = ds.amplitudes;
  for (std::size_t t = 1; t < a.d0; ++t)
    for (std::size_t j = 0; j < a.d1 * a.d2; ++j) ASSERT_EQ(a.data[t * a.d1 * a.d2 + j], a.data[j]);
  EXPECT_NEAR(mean_temporal_variance(ds), 0.0, 1e-12);
}

TEST(Simulate, BitIdenticalForSameScenario) {
  const auto sc = make_scenario(17);
  for (int c = 1; c <= 4; ++c) EXPECT_EQ(simulate_round(sc, 200, c).amplitudes, simulate_round(sc, 200, c).amplitudes);
}

TEST(Simulate, DifferentSeedsDiffer) {
  EXPECT_NE(simulate_round(make_scenario(1), 50, 2).amplitudes, simulate_round(make_scenario(2), 50, 2).amplitudes);
}

TEST(Simulate, DefaultShape) {
  const auto ds = simulate_round(make_scenario(1), 10, 3);
  EXPECT_EQ(ds.S(), 56u);
  EXPECT_EQ(ds.K(), 4u);
  EXPECT_EQ(ds.T(), 10u);
  EXPECT_DOUBLE_EQ(ds.sample_rate, 10.0);
  ASSERT_EQ(ds.segments.size(), 1u);
  EXPECT_EQ(ds.segments[0].label, 3);
  for (float v : ds.amplitudes.data) ASSERT_GE(v, 0.0f);
}

TEST(Simulate, RejectsBadArguments) {
  const auto sc = make_scenario(1);
  EXPECT_THROW(simulate_round(sc, 10, 0), Error);
  EXPECT_THROW(simulate_round(sc, 10, 5), Error);
  EXPECT_THROW(simulate_round(sc, 0, 1), Error);
  auto bad = sc;
  bad.noise_std = -1;
  EXPECT_THROW(simulate_round(bad, 10, 1), Error);
}

TEST(Simulate, BothRoomsVarianceAtLeastFiveTimesEmpty) {
  GeometryOptions g;
  g.noise_std = 0.01;
  g.dynamic_gain_scale = 0.5;
  const auto sc = make_scenario(7, g);
  const double v1 = mean_temporal_variance(simulate_round(sc, 2000, 1));
  const double v4 = mean_temporal_variance(simulate_round(sc, 2000, 4));
  EXPECT_GE(v4, 5.0 * v1);
}

TEST(Simulate, VarianceOrdering) {
  GeometryOptions g;
  g.noise_std = 0.01;
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    const auto sc = make_scenario(seed, g);
    double v[4];
    for (int c = 1; c <= 4; ++c) v[c - 1] = mean_temporal_variance(simulate_round(sc, 2000, c));
    EXPECT_LT(v[0], v[1]) << "seed " << seed;
    EXPECT_LT(v[0], v[2]) << "seed " << seed;
    EXPECT_GT(v[3], v[1]) << "seed " << seed;
    EXPECT_GT(v[3], v[2]) << "seed " << seed;
  }
}

TEST(Drift, MeanProfileCorrelation) {
  // Session jitter keeps same-layout rounds recognisable; turning the
  // antennas decorrelates the static profile.
  for (std::uint64_t seed : {7u, 8u, 9u, 10u, 11u}) {
    GeneratorSpec g;
    g.seed = seed;
    const auto scs = round_scenarios(g);
    for (int c = 1; c <= kNumCases; ++c) {
      const auto base = mean_profile(simulate_round(scs.at(1), 500, c));
      for (int r : {2, 3}) EXPECT_GE(pearson(base, mean_profile(simulate_round(scs.at(r), 500, c))), 0.6) << seed;
      EXPECT_LE(pearson(base, mean_profile(simulate_round(scs.at(6), 500, c))), 0.2) << seed;
    }
  }
}

TEST(Drift, MildScalesStaticGainsOnly) {
  const auto base = make_scenario(4);
  SessionJitter none{0, 0, 0, 0};
  const auto m = apply_drift(base, DriftProfile::mild, 99, none);
  for (std::size_t k = 0; k < base.num_pairs; ++k)
    for (std::size_t l = 0; l < base.num_paths; ++l) {
      const double ratio = std::abs(m.static_gains[k][l]) / std::abs(base.static_gains[k][l]);
      EXPECT_GE(ratio, 0.8 - 1e-12);
      EXPECT_LE(ratio, 1.2 + 1e-12);
      EXPECT_EQ(m.static_delays[k][l], base.static_delays[k][l]);
    }
}

TEST(Drift, SevereResamplesDelays) {
  const auto base = make_scenario(4);
  const auto s = apply_drift(base, DriftProfile::severe, 99);
  int changed = 0;
  for (std::size_t k = 0; k < base.num_pairs; ++k)
    for (std::size_t l = 0; l < base.num_paths; ++l) changed += s.static_delays[k][l] != base.static_delays[k][l];
  EXPECT_EQ(changed, static_cast<int>(base.num_pairs * base.num_paths));
  EXPECT_EQ(s.drift_profile, DriftProfile::severe);
}

TEST(Drift, ProfileNames) {
  for (auto p : {DriftProfile::none, DriftProfile::mild, DriftProfile::severe})
    EXPECT_EQ(parse_drift_profile(to_string(p)), p);
  EXPECT_THROW(parse_drift_profile("stormy"), Error);
}

TEST(Rounds, ScheduleAndSegments) {
  GeneratorSpec g;
  g.packets_per_case = 60;
  const auto rounds = generate_rounds(g);
  ASSERT_EQ(rounds.size(), 6u);
  const auto scs = round_scenarios(g);
  EXPECT_EQ(scs.at(4).drift_profile, DriftProfile::mild);
  EXPECT_EQ(scs.at(6).drift_profile, DriftProfile::severe);
  for (const auto& [id, ds] : rounds) {
    EXPECT_EQ(ds.round_id, id);
    EXPECT_EQ(ds.T(), 240u);
    ASSERT_EQ(ds.segments.size(), 4u);
    for (int c = 0; c < 4; ++c) {
      EXPECT_EQ(ds.segments[c].label, c + 1);
      EXPECT_EQ(ds.segments[c].start, 60u * static_cast<std::size_t>(c));
    }
  }
  EXPECT_EQ(generate_round(g, 3).amplitudes, rounds.at(3).amplitudes);
}

TEST(Rounds, CyclicParentsRejected) {
  GeneratorSpec g;
  g.rounds = {{1, DriftProfile::none, 2, ""}, {2, DriftProfile::none, 1, ""}};
  EXPECT_THROW(round_scenarios(g), Error);
}
