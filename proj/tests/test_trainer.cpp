#include "gradcheck.hpp"

#include <bts/trainer.hpp>

#include <gtest/gtest.h>

#include <deque>

namespace bts {
namespace {

// Small labeled/unlabeled sets on the tiny network; case c frames fluctuate
// with amplitude growing in c so the indicators have something to work with.
struct TinyData {
  NetConfig net = test::tiny_config();
  std::deque<Array3<float>> store;
  FrameSet labeled, unlabeled;

  explicit TinyData(std::size_t per_case = 6, std::uint64_t seed = 9) {
    Rng rng(seed);
    auto make = [&](int c, bool keep_label) {
      Array3<float> a(static_cast<std::size_t>(net.tau), static_cast<std::size_t>(net.S),
                      static_cast<std::size_t>(net.K));
      for (auto& v : a.data) v = static_cast<float>(1.0 + 0.15 * (c - 1) * rng.normal() + 0.01 * rng.normal());
      store.push_back(std::move(a));
      Frame<float> f = frame_of(store.back());
      if (keep_label) f.label = c;
      return f;
    };
    std::vector<Frame<float>> l, u;
    for (int c = 1; c <= kNumCases; ++c)
      for (std::size_t i = 0; i < per_case; ++i) {
        l.push_back(make(c, true));
        u.push_back(make(c, false));
      }
    labeled = FrameSet::from(l, {});
    unlabeled = FrameSet::from(u, {});
  }

  TrainConfig config(int iterations = 3, int batch = 4) const {
    TrainConfig c;
    c.net = net;
    c.iterations = iterations;
    c.batch = batch;
    return c;
  }
};

template <typename T>
std::vector<Mat<T>> weights_of(ModelBundle<T>& b, const std::string& prefix) {
  std::vector<Mat<T>> out;
  b.visit([&](const std::string& name, nn::Param<T>& p) {
    if (name.rfind(prefix, 0) == 0) out.push_back(p.w);
  });
  return out;
}

TEST(Trainer, SmokeSingleIteration) {
  TinyData d;
  auto cfg = d.config(1, 2);
  const auto r = train<float>(d.labeled, d.unlabeled, cfg);
  ASSERT_EQ(r.log.size(), 1u);
  const auto& L = r.log[0].loss;
  for (double v : {L.tce_pt, L.tce_dt, L.uice_ps, L.uice_ds, L.ctq, L.ctve}) EXPECT_TRUE(std::isfinite(v));
  EXPECT_GT(L.tce_pt, 0.0);
  EXPECT_TRUE(r.bundle.center.has_value());
  EXPECT_EQ(r.training_distances.size(), d.unlabeled.size());
}

TEST(Trainer, SameSeedSameResult) {
  TinyData d;
  const auto cfg = d.config(4);
  auto a = train<float>(d.labeled, d.unlabeled, cfg);
  auto b = train<float>(d.labeled, d.unlabeled, cfg);
  const auto wa = weights_of(a.bundle, ""), wb = weights_of(b.bundle, "");
  ASSERT_EQ(wa.size(), wb.size());
  for (std::size_t i = 0; i < wa.size(); ++i) EXPECT_EQ(wa[i], wb[i]);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_EQ(a.log[i].loss.tce_pt, b.log[i].loss.tce_pt);
    EXPECT_EQ(a.log[i].feedback_ds, b.log[i].feedback_ds);
  }

  auto other = cfg;
  other.seed = 2;
  auto c = train<float>(d.labeled, d.unlabeled, other);
  EXPECT_NE(weights_of(c.bundle, "pt").front(), wa.front());
}

TEST(Trainer, CenterIsFixedBeforeTraining) {
  TinyData d;
  const auto cfg = d.config(3);
  const auto r = train<float>(d.labeled, d.unlabeled, cfg);
  const ModelBundle<float> fresh(cfg.net);
  const RowVec<float> c0 = init_center(fresh, d.unlabeled.frames);
  ASSERT_TRUE(r.bundle.center.has_value());
  EXPECT_EQ(*r.bundle.center, c0);
}

TEST(Trainer, SkippedStudentUpdatesGiveZeroFeedback) {
  TinyData d;
  auto cfg = d.config(3);
  cfg.student_updates = false;
  auto r = train<float>(d.labeled, d.unlabeled, cfg);
  for (const auto& rec : r.log) {
    EXPECT_EQ(rec.feedback_ps, 0.0);
    EXPECT_EQ(rec.feedback_ds, 0.0);
  }
  ModelBundle<float> fresh(cfg.net);
  const auto a = weights_of(r.bundle, "ps."), b = weights_of(fresh, "ps.");
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(Trainer, StudentsReceiveFeedbackWhenUpdated) {
  TinyData d;
  auto r = train<float>(d.labeled, d.unlabeled, d.config(4));
  bool any = false;
  for (const auto& rec : r.log) any = any || rec.feedback_ps != 0.0 || rec.feedback_ds != 0.0;
  EXPECT_TRUE(any);
}

TEST(Trainer, NoFeedbackNoCouplingMatchesSupervisedTeacher) {
  TinyData d;
  auto cfg = d.config(5);
  cfg.force_zero_feedback = true;
  cfg.weights.lambda3 = 0.0;
  cfg.weights.lambda4 = 0.0;
  auto coupled = train<float>(d.labeled, d.unlabeled, cfg);
  cfg.mode = TrainMode::supervised;
  auto sup = train<float>(d.labeled, d.unlabeled, cfg);
  const auto a = weights_of(coupled.bundle, "pt"), b = weights_of(sup.bundle, "pt");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << i;
  for (std::size_t i = 0; i < coupled.log.size(); ++i) EXPECT_EQ(coupled.log[i].loss.tce_pt, sup.log[i].loss.tce_pt);
}

TEST(Trainer, SingleDualLeavesPrimalUntouched) {
  TinyData d;
  auto cfg = d.config(2);
  cfg.mode = TrainMode::single_dual;
  auto r = train<float>(d.labeled, d.unlabeled, cfg);
  ModelBundle<float> fresh(cfg.net);
  const auto a = weights_of(r.bundle, "pt"), b = weights_of(fresh, "pt");
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
  EXPECT_FALSE(r.bundle.center.has_value());
  EXPECT_NE(weights_of(r.bundle, "dt").back(), weights_of(fresh, "dt").back());
}

TEST(Trainer, RejectsBadInput) {
  TinyData d;
  auto cfg = d.config();
  cfg.iterations = 0;
  EXPECT_THROW(train<float>(d.labeled, d.unlabeled, cfg), Error);
  cfg = d.config();
  try {
    train<float>(FrameSet{}, d.unlabeled, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::data);
  }
  EXPECT_THROW(train<float>(d.labeled, FrameSet{}, cfg), Error);
  cfg.mode = TrainMode::supervised;
  EXPECT_NO_THROW(train<float>(d.labeled, FrameSet{}, cfg));
}

TEST(Trainer, NonFiniteInputIsANumericalError) {
  TinyData d;
  for (auto& a : d.store) a.data[0] = std::numeric_limits<float>::quiet_NaN();
  auto cfg = d.config(2);
  try {
    train<float>(d.labeled, d.unlabeled, cfg);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::numerical) << e.what();
  }
}

TEST(Trainer, PredictAndEvaluate) {
  TinyData d;
  auto r = train<float>(d.labeled, d.unlabeled, d.config(2));
  const auto p = predict(r.bundle, d.labeled.frames);
  ASSERT_EQ(p.cases.size(), d.labeled.size());
  for (Eigen::Index i = 0; i < p.probs.rows(); ++i) EXPECT_NEAR(p.probs.row(i).sum(), 1.0, 1e-5);
  const auto e = evaluate(r.bundle, d.labeled.frames);
  EXPECT_EQ(e.n, d.labeled.size());
  std::size_t total = 0;
  for (const auto& row : e.confusion)
    for (auto v : row) total += v;
  EXPECT_EQ(total, e.n);
}

TEST(Evaluation, ConfusionAndPerCase) {
  const auto e = evaluate_predictions({1, 2, 2, 4, 3, 3}, {1, 2, 3, 4, 3, 1});
  EXPECT_DOUBLE_EQ(e.accuracy, 4.0 / 6.0);
  EXPECT_DOUBLE_EQ(e.per_case[0], 0.5);
  EXPECT_DOUBLE_EQ(e.per_case[2], 0.5);
  EXPECT_EQ(e.confusion[2][1], 1u);
  EXPECT_EQ(e.confusion[0][2], 1u);
  EXPECT_THROW(evaluate_predictions({1}, {1, 2}), Error);
}

TEST(Drift, WindowOfOneUsesLastDistance) {
  auto r = drift_verdict({100, 100, 1}, 1, 50);
  EXPECT_FALSE(r.drift);
  r = drift_verdict({1, 1, 60}, 1, 50);
  EXPECT_TRUE(r.drift);
  EXPECT_EQ(r.retrain_frames.size(), 3u);
  EXPECT_DOUBLE_EQ(r.min, 1);
  EXPECT_DOUBLE_EQ(r.max, 60);
}

TEST(Drift, MedianOfWindow) {
  // One spike inside the window does not trigger; a majority does.
  EXPECT_FALSE(drift_verdict({1, 1, 1, 90, 1}, 3, 50).drift);
  EXPECT_TRUE(drift_verdict({1, 1, 60, 90, 1}, 3, 50).drift);
  const auto even = drift_verdict({10, 20, 30, 40}, 4, 50);
  EXPECT_DOUBLE_EQ(even.window_median, 25);
  EXPECT_TRUE(drift_verdict({50}, 5, 50).drift);  // threshold is inclusive, window clamps
  EXPECT_EQ(drift_verdict({50}, 5, 50).window, 1u);
}

TEST(Drift, BadArguments) {
  EXPECT_THROW(drift_verdict({}, 1, 50), Error);
  EXPECT_THROW(drift_verdict({1}, 0, 50), Error);
}

TEST(Drift, MonitorUsesTrainedCenter) {
  TinyData d;
  auto r = train<float>(d.labeled, d.unlabeled, d.config(2));
  const auto rep = monitor_drift(r.bundle, d.unlabeled.frames, 5, 1e9);
  EXPECT_FALSE(rep.drift);
  ASSERT_EQ(rep.distances.size(), r.training_distances.size());
  for (std::size_t i = 0; i < rep.distances.size(); ++i) EXPECT_DOUBLE_EQ(rep.distances[i], r.training_distances[i]);
  ModelBundle<float> no_center(d.net);
  EXPECT_THROW(monitor_drift(no_center, d.unlabeled.frames, 5, 1.0), Error);
}

}  // namespace
}  // namespace bts
