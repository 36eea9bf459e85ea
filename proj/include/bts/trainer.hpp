// SPDX-License-Identifier: Apache-2.0
#pragma once

// Offline bi-level training of the primal/dual teacher-student pairs, online
// prediction with the primal teacher, and hypersphere drift monitoring.
//
// One iteration:
//   1. sample a labeled and an unlabeled batch
//   2. both teachers label the unlabeled batch (soft pseudo labels)
//   3. confidence scores for both batches from the indicator set
//   4. each student takes one step on its pseudo-label loss
//   5. feedback = labeled log-likelihood gain of the student across that step
//   6. each teacher takes one step on its total loss; psi follows both
// The hypersphere center is fixed before the first iteration.

#include <bts/losses.hpp>
#include <bts/nets.hpp>
#include <bts/optim.hpp>

#include <algorithm>
#include <chrono>
#include <functional>
#include <numeric>

namespace bts {

enum class TrainMode {
  bts,            // full bifold scheme
  supervised,     // primal teacher on labeled data only
  single_primal,  // primal teacher-student pair alone
  single_dual,    // dual teacher-student pair alone
};

inline const char* to_string(TrainMode m) {
  switch (m) {
    case TrainMode::bts: return "bts";
    case TrainMode::supervised: return "supervised";
    case TrainMode::single_primal: return "single_primal";
    case TrainMode::single_dual: return "single_dual";
  }
  return "bts";
}

struct TrainConfig {
  int iterations = 400;
  int batch = 32;
  double lr_teacher = 1e-3;
  double lr_student = 1e-3;
  double lr_psi = 1e-3;
  LossWeights weights;
  DisarrayParams disarray;
  double d_th = 50.0;
  std::uint64_t seed = 1;
  NetConfig net;
  TrainMode mode = TrainMode::bts;
  bool use_confidence = true;
  ConfidenceScope confidence_scope = ConfidenceScope::per_frame;
  bool student_updates = true;
  bool force_zero_feedback = false;
  bool train_psi = true;
  // Optional per-iteration observer, e.g. for progress output.
  std::function<void(int)> on_iteration;

  void validate() const {
    if (iterations < 1) throw Error(ErrorKind::usage, "iterations must be >= 1");
    if (batch < 1) throw Error(ErrorKind::usage, "batch must be >= 1");
    if (!(d_th > 0)) throw Error(ErrorKind::usage, "d_th must be > 0");
    weights.validate();
    disarray.validate();
    net.validate();
  }
};

/// Frames with cached disarray. Labels are kept for the labeled set and for
/// evaluation; the trainer never reads labels of the unlabeled set.
struct FrameSet {
  std::vector<Frame<float>> frames;
  std::vector<int> labels;
  std::vector<double> rho;

  std::size_t size() const { return frames.size(); }
  static FrameSet from(std::vector<Frame<float>> frames, const DisarrayParams& prm) {
    FrameSet s;
    s.frames = std::move(frames);
    s.labels.reserve(s.frames.size());
    for (const auto& f : s.frames) s.labels.push_back(f.label.value_or(0));
    s.rho = disarray_all(s.frames, prm);
    return s;
  }
};

struct LogRecord {
  int iteration = 0;
  LossComponents loss;
  double feedback_ps = 0, feedback_ds = 0;
  double labeled_ce_pt = 0;
  double wall_ms = 0;
};

template <typename T>
struct TrainResult {
  ModelBundle<T> bundle;
  IndicatorSet indicators;
  std::vector<LogRecord> log;
  TrainMode mode = TrainMode::bts;
  std::vector<double> training_distances;  // unlabeled-set outlier distances after training
};

namespace detail {

template <typename T>
void check_finite(double v, int iteration, const char* name) {
  if (!std::isfinite(v))
    throw Error(ErrorKind::numerical,
                "non-finite loss '" + std::string(name) + "' at iteration " + std::to_string(iteration));
}

inline std::vector<std::size_t> sample_indices(Rng& rng, std::size_t n, std::size_t b) {
  std::vector<std::size_t> idx(b);
  for (auto& i : idx) i = rng.index(n);
  return idx;
}

template <typename V>
std::vector<V> gather(const std::vector<V>& v, const std::vector<std::size_t>& idx) {
  std::vector<V> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

template <typename T, class Net>
std::vector<Confidence> confidences(const FrameSet& set, const std::vector<std::size_t>& idx, const IndicatorSet& ind,
                                    const TrainConfig& cfg) {
  if (!cfg.use_confidence) return std::vector<Confidence>(idx.size(), Confidence{});
  return confidence_distribution(gather(set.rho, idx), ind, cfg.confidence_scope);
}

}  // namespace detail

/// Projections psi(z_g) of the primal teacher, in chunks.
template <typename T>
Mat<T> project_primal(const ModelBundle<T>& b, const std::vector<Frame<float>>& frames, std::size_t chunk = 256) {
  Mat<T> out(static_cast<Eigen::Index>(frames.size()), b.config.psi_out);
  for (std::size_t i = 0; i < frames.size(); i += chunk) {
    const std::size_t n = std::min(chunk, frames.size() - i);
    std::vector<Frame<float>> part(frames.begin() + static_cast<std::ptrdiff_t>(i),
                                   frames.begin() + static_cast<std::ptrdiff_t>(i + n));
    const auto enc = b.primal_teacher.forward(part);
    out.middleRows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) = b.psi.forward(enc.z);
  }
  return out;
}

/// Hypersphere center: mean projection of the whole unlabeled set.
template <typename T>
RowVec<T> init_center(const ModelBundle<T>& b, const std::vector<Frame<float>>& unlabeled) {
  if (unlabeled.empty()) throw Error(ErrorKind::data, "cannot place the center without unlabeled frames");
  return center_of<T>(project_primal(b, unlabeled));
}

template <typename T>
std::vector<double> outlier_distances(const ModelBundle<T>& b, const std::vector<Frame<float>>& frames) {
  const RowVec<T>& c = b.require_center();
  const Mat<T> proj = project_primal(b, frames);
  std::vector<double> d(frames.size());
  for (Eigen::Index i = 0; i < proj.rows(); ++i)
    d[static_cast<std::size_t>(i)] = static_cast<double>(outlier_distance<T>(proj.row(i), c));
  return d;
}

template <typename T>
TrainResult<T> train(const FrameSet& labeled, const FrameSet& unlabeled, const TrainConfig& cfg) {
  cfg.validate();
  if (labeled.size() == 0) throw Error(ErrorKind::data, "empty labeled set");
  if (unlabeled.size() == 0 && cfg.mode != TrainMode::supervised) throw Error(ErrorKind::data, "empty unlabeled set");
  for (const auto& f : labeled.frames) check_frame<T>(f, cfg.net);
  for (const auto& f : unlabeled.frames) check_frame<T>(f, cfg.net);

  TrainResult<T> res;
  res.mode = cfg.mode;
  res.bundle = ModelBundle<T>(cfg.net);
  // Indicators need every case in the labeled set; the supervised baseline
  // without unlabeled data scores against the labeled set itself.
  res.indicators = build_indicators_from_rho(labeled.rho, labeled.labels,
                                             unlabeled.size() ? unlabeled.rho : labeled.rho);
  ModelBundle<T>& m = res.bundle;
  const IndicatorSet& ind = res.indicators;

  const bool primal = cfg.mode != TrainMode::single_dual;
  const bool dual = cfg.mode == TrainMode::bts || cfg.mode == TrainMode::single_dual;
  const bool students = cfg.mode != TrainMode::supervised;
  const bool coupled = cfg.mode == TrainMode::bts;
  const LossWeights& w = cfg.weights;

  if (primal && unlabeled.size()) m.center = init_center(m, unlabeled.frames);

  Adam<T> opt_pt({cfg.lr_teacher}), opt_dt({cfg.lr_teacher}), opt_ps({cfg.lr_student}), opt_ds({cfg.lr_student}),
      opt_psi({cfg.lr_psi});
  const Rng root(cfg.seed);
  Rng rng_l = root.fork(11), rng_u = root.fork(12);
  const auto B = static_cast<std::size_t>(cfg.batch);
  const auto t0 = std::chrono::steady_clock::now();

  for (int it = 0; it < cfg.iterations; ++it) {
    LogRecord rec;
    rec.iteration = it;
    const auto il = detail::sample_indices(rng_l, labeled.size(), B);
    const auto lb = detail::gather(labeled.frames, il);
    const auto y = detail::gather(labeled.labels, il);
    const auto xi_l = detail::confidences<T, void>(labeled, il, ind, cfg);

    std::vector<std::size_t> iu;
    std::vector<Frame<float>> ub;
    std::vector<Confidence> xi_u;
    if (students) {
      iu = detail::sample_indices(rng_u, unlabeled.size(), B);
      ub = detail::gather(unlabeled.frames, iu);
      xi_u = detail::confidences<T, void>(unlabeled, iu, ind, cfg);
    }

    // Teachers on the unlabeled batch; caches are reused for their update.
    std::vector<typename PrimalNet<T>::Cache> c_ptu, c_ptl, c_ps;
    std::vector<typename DualNet<T>::Cache> c_dtu, c_dtl, c_ds;
    EncoderOutput<T> ptu, dtu;
    if (students) {
      if (primal) ptu = m.primal_teacher.forward(ub, &c_ptu);
      if (dual) dtu = m.dual_teacher.forward(ub, &c_dtu);
    }

    // Student steps and their feedback.
    auto student_step = [&](auto& net, auto& caches, Adam<T>& opt, const Mat<T>& pseudo, double& loss_out) {
      const Mat<T> before = net.forward(lb).probs;
      double fb = 0.0;
      const auto out = net.forward(ub, &caches);
      const auto ce = uice_student<T>(out.probs, pseudo, xi_u);
      loss_out = static_cast<double>(ce.value);
      if (cfg.student_updates) {
        zero_grad<T>(net);
        net.backward(caches, Mat<T>(), nn::softmax_backward<T>(out.probs, ce.grad));
        opt.step(net);
        const Mat<T> after = net.forward(lb).probs;
        fb = compute_feedback<T>(before, after, y);
      }
      return cfg.force_zero_feedback ? 0.0 : fb;
    };
    if (students && primal) rec.feedback_ps = student_step(m.primal_student, c_ps, opt_ps, ptu.probs, rec.loss.uice_ps);
    if (students && dual) rec.feedback_ds = student_step(m.dual_student, c_ds, opt_ds, dtu.probs, rec.loss.uice_ds);

    // Teacher losses.
    zero_grad<T>(m.psi);
    EncoderOutput<T> ptl, dtl;
    typename ProjectionHead<T>::Cache c_psi_pt, c_psi_dt;
    Mat<T> proj_pt, proj_dt;
    if (primal) {
      ptl = m.primal_teacher.forward(lb, &c_ptl);
      const auto l_tce = tce<T>(ptl.probs, y, xi_l);
      rec.loss.tce_pt = static_cast<double>(l_tce.value);
      rec.labeled_ce_pt = -labeled_log_likelihood(ptl.probs, y);
      zero_grad<T>(m.primal_teacher);
      m.primal_teacher.backward(c_ptl, Mat<T>(),
                                nn::softmax_backward<T>(ptl.probs, l_tce.grad) * static_cast<T>(w.lambda1));
    }
    if (dual) {
      dtl = m.dual_teacher.forward(lb, &c_dtl);
      const auto l_tce = tce<T>(dtl.probs, y, xi_l);
      rec.loss.tce_dt = static_cast<double>(l_tce.value);
      zero_grad<T>(m.dual_teacher);
      m.dual_teacher.backward(c_dtl, Mat<T>(),
                              nn::softmax_backward<T>(dtl.probs, l_tce.grad) * static_cast<T>(w.lambda1));
    }
    if (students) {
      Mat<T> dproj_pt, dproj_dt;
      if (primal) {
        proj_pt = m.psi.forward(ptu.z, &c_psi_pt);
        const auto l_ctve = ctve<T>(proj_pt, m.require_center());
        rec.loss.ctve = static_cast<double>(l_ctve.value);
        dproj_pt = l_ctve.grad * static_cast<T>(w.lambda4);
      }
      if (coupled) {
        proj_dt = m.psi.forward(dtu.z, &c_psi_dt);
        const auto l_ctq = ctq<T>(proj_pt, proj_dt);
        rec.loss.ctq = static_cast<double>(l_ctq.value);
        const Mat<T> g = l_ctq.grad * static_cast<T>(w.lambda3);
        dproj_pt += g;
        dproj_dt = -g;
        // CTQ also appears in the dual total; psi receives that share too.
        m.psi.backward(c_psi_pt, g);
        m.psi.backward(c_psi_dt, -g);
      }
      if (primal) {
        const auto l_uice = uice_teacher<T>(ptu.probs, ptu.probs, xi_u, rec.feedback_ps);
        rec.loss.uice_pt = static_cast<double>(l_uice.value);
        const Mat<T> dz = m.psi.backward(c_psi_pt, dproj_pt);
        m.primal_teacher.backward(c_ptu, dz,
                                  nn::softmax_backward<T>(ptu.probs, l_uice.grad) * static_cast<T>(w.lambda2));
      }
      if (dual) {
        const auto l_uice = uice_teacher<T>(dtu.probs, dtu.probs, xi_u, rec.feedback_ds);
        rec.loss.uice_dt = static_cast<double>(l_uice.value);
        const Mat<T> dz = coupled ? m.psi.backward(c_psi_dt, dproj_dt) : Mat<T>();
        m.dual_teacher.backward(c_dtu, dz,
                                nn::softmax_backward<T>(dtu.probs, l_uice.grad) * static_cast<T>(w.lambda2));
      }
    }

    const LossComponents& L = rec.loss;
    detail::check_finite<T>(L.tce_pt, it, "tce_pt");
    detail::check_finite<T>(L.tce_dt, it, "tce_dt");
    detail::check_finite<T>(L.uice_pt, it, "uice_pt");
    detail::check_finite<T>(L.uice_dt, it, "uice_dt");
    detail::check_finite<T>(L.uice_ps, it, "uice_ps");
    detail::check_finite<T>(L.uice_ds, it, "uice_ds");
    detail::check_finite<T>(L.ctq, it, "ctq");
    detail::check_finite<T>(L.ctve, it, "ctve");

    if (primal) opt_pt.step(m.primal_teacher);
    if (dual) opt_dt.step(m.dual_teacher);
    if (students && primal && cfg.train_psi) opt_psi.step(m.psi);

    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    res.log.push_back(rec);
    if (cfg.on_iteration) cfg.on_iteration(it);
  }

  if (m.center && unlabeled.size()) res.training_distances = outlier_distances(m, unlabeled.frames);
  return res;
}

struct Prediction {
  std::vector<int> cases;
  Mat<double> probs;
};

enum class Predictor { primal_teacher, dual_teacher };

template <typename T>
Prediction predict(const ModelBundle<T>& b, const std::vector<Frame<float>>& frames,
                   Predictor which = Predictor::primal_teacher, std::size_t chunk = 256) {
  Prediction p;
  p.probs.resize(static_cast<Eigen::Index>(frames.size()), b.config.classes);
  for (std::size_t i = 0; i < frames.size(); i += chunk) {
    const std::size_t n = std::min(chunk, frames.size() - i);
    std::vector<Frame<float>> part(frames.begin() + static_cast<std::ptrdiff_t>(i),
                                   frames.begin() + static_cast<std::ptrdiff_t>(i + n));
    const auto out = which == Predictor::primal_teacher ? b.primal_teacher.forward(part) : b.dual_teacher.forward(part);
    p.probs.middleRows(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(n)) = out.probs.template cast<double>();
  }
  p.cases.resize(frames.size());
  for (std::size_t i = 0; i < frames.size(); ++i) {
    Eigen::Index best = 0;
    p.probs.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
    p.cases[i] = static_cast<int>(best) + 1;
  }
  return p;
}

struct Evaluation {
  double accuracy = 0;
  std::array<double, kNumCases> per_case{};
  std::array<std::array<std::size_t, kNumCases>, kNumCases> confusion{};  // [truth][predicted]
  std::size_t n = 0;
};

inline Evaluation evaluate_predictions(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size()) throw Error(ErrorKind::usage, "prediction/label count mismatch");
  Evaluation e;
  e.n = truth.size();
  std::array<std::size_t, kNumCases> total{}, hit{};
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    check_case(truth[i]);
    const int t = truth[i] - 1, p = predicted[i] - 1;
    ++e.confusion[t][p];
    ++total[t];
    if (t == p) {
      ++hit[t];
      ++ok;
    }
  }
  e.accuracy = e.n ? static_cast<double>(ok) / static_cast<double>(e.n) : 0.0;
  for (int c = 0; c < kNumCases; ++c)
    e.per_case[c] = total[c] ? static_cast<double>(hit[c]) / static_cast<double>(total[c]) : 0.0;
  return e;
}

template <typename T>
Evaluation evaluate(const ModelBundle<T>& b, const std::vector<Frame<float>>& frames,
                    Predictor which = Predictor::primal_teacher) {
  std::vector<int> truth;
  truth.reserve(frames.size());
  for (const auto& f : frames) truth.push_back(f.label.value_or(0));
  return evaluate_predictions(predict(b, frames, which).cases, truth);
}

struct DriftReport {
  std::vector<double> distances;
  double min = 0, max = 0;
  double window_median = 0;
  std::size_t window = 0;
  double threshold = 0;
  bool drift = false;
  // Frames to hand to retraining as a new unlabeled set when drift is found.
  std::vector<std::size_t> retrain_frames;
};

/// Verdict: drift iff the median of the last `window` outlier distances
/// reaches the threshold.
inline DriftReport drift_verdict(std::vector<double> distances, std::size_t window, double d_th) {
  if (distances.empty()) throw Error(ErrorKind::data, "drift monitoring needs a non-empty stream");
  if (window < 1) throw Error(ErrorKind::usage, "drift window must be >= 1");
  DriftReport r;
  r.distances = std::move(distances);
  r.threshold = d_th;
  r.window = std::min(window, r.distances.size());
  r.min = *std::min_element(r.distances.begin(), r.distances.end());
  r.max = *std::max_element(r.distances.begin(), r.distances.end());
  std::vector<double> tail(r.distances.end() - static_cast<std::ptrdiff_t>(r.window), r.distances.end());
  std::sort(tail.begin(), tail.end());
  const std::size_t n = tail.size();
  r.window_median = (n % 2) ? tail[n / 2] : 0.5 * (tail[n / 2 - 1] + tail[n / 2]);
  r.drift = r.window_median >= d_th;
  if (r.drift) {
    r.retrain_frames.resize(r.distances.size());
    std::iota(r.retrain_frames.begin(), r.retrain_frames.end(), std::size_t{0});
  }
  return r;
}

template <typename T>
DriftReport monitor_drift(const ModelBundle<T>& b, const std::vector<Frame<float>>& stream, std::size_t window,
                          double d_th) {
  if (stream.empty()) throw Error(ErrorKind::data, "drift monitoring needs a non-empty stream");
  return drift_verdict(outlier_distances(b, stream), window, d_th);
}

/// Fresh training run on the unchanged labeled set and the drift-buffered
/// unlabeled set. Network weights are re-initialized.
template <typename T>
TrainResult<T> retrain(const FrameSet& labeled, const FrameSet& new_unlabeled, const TrainConfig& cfg) {
  return train<T>(labeled, new_unlabeled, cfg);
}

}  // namespace bts
