// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bts/csi_sim.hpp>

#include <algorithm>
#include <cmath>
#include <optional>

namespace bts {

enum class Split { labeled, unlabeled };

/// Counters for recoverable anomalies met while preprocessing.
struct PreprocessWarnings {
  std::size_t degenerate_slices = 0;   // constant (t, k) slices mapped to zeros
  std::size_t short_sequences = 0;     // T < tau, no frames produced
};

/// Maps each (t, k) slice to [0, 1] across the S subcarriers.
template <typename Out = float, typename In>
Array3<Out> pairwise_normalize(const Array3<In>& x, PreprocessWarnings* warn = nullptr) {
  if (x.d0 < 1 || x.d1 < 1 || x.d2 < 1) throw Error(ErrorKind::usage, "pairwise_normalize: empty input");
  Array3<Out> y(x.d0, x.d1, x.d2);
  for (std::size_t t = 0; t < x.d0; ++t) {
    for (std::size_t k = 0; k < x.d2; ++k) {
      In lo = x(t, 0, k), hi = x(t, 0, k);
      for (std::size_t s = 1; s < x.d1; ++s) {
        lo = std::min(lo, x(t, s, k));
        hi = std::max(hi, x(t, s, k));
      }
      if (!(hi > lo)) {
        if (warn) ++warn->degenerate_slices;
        continue;  // already zero
      }
      const double span = static_cast<double>(hi) - static_cast<double>(lo);
      for (std::size_t s = 0; s < x.d1; ++s)
        y(t, s, k) = static_cast<Out>((static_cast<double>(x(t, s, k)) - static_cast<double>(lo)) / span);
    }
  }
  return y;
}

/// Non-owning (tau, S, K) window into a normalized block. The referenced
/// block must outlive the view.
template <typename T>
struct Frame {
  const T* data = nullptr;
  std::size_t tau = 0, S = 0, K = 0;
  int dataset_id = 0;
  std::size_t anchor = 0;  // 0-based index of the last packet in the window
  std::optional<int> label;
  Split split = Split::labeled;

  std::size_t size() const { return tau * S * K; }
  std::span<const T> values() const { return {data, size()}; }
  T at(std::size_t t, std::size_t s, std::size_t k) const { return data[(t * S + s) * K + k]; }
  Array3<T> materialize() const {
    Array3<T> a(tau, S, K);
    std::copy(data, data + size(), a.data.begin());
    return a;
  }
};

template <typename T>
Frame<T> frame_of(const Array3<T>& a) {
  Frame<T> f;
  f.data = a.data.data();
  f.tau = a.d0;
  f.S = a.d1;
  f.K = a.d2;
  f.anchor = a.d0 - 1;
  return f;
}

/// Frames anchored at packets first+tau-1, first+tau-1+stride, ... within
/// [first, last). Each frame holds exactly tau packets ending at its anchor.
template <typename T>
std::vector<Frame<T>> window(const Array3<T>& x, std::size_t tau, std::size_t stride, std::size_t first = 0,
                             std::size_t last = static_cast<std::size_t>(-1), PreprocessWarnings* warn = nullptr) {
  if (tau < 1) throw Error(ErrorKind::usage, "window size must be >= 1");
  if (stride < 1) throw Error(ErrorKind::usage, "stride must be >= 1");
  last = std::min(last, x.d0);
  std::vector<Frame<T>> out;
  if (last < first || last - first < tau) {
    if (warn) ++warn->short_sequences;
    return out;
  }
  for (std::size_t a = first + tau - 1; a < last; a += stride) {
    Frame<T> f;
    f.data = x.data.data() + (a + 1 - tau) * x.d1 * x.d2;
    f.tau = tau;
    f.S = x.d1;
    f.K = x.d2;
    f.anchor = a;
    out.push_back(f);
  }
  return out;
}

/// Which fraction of every labelled segment a call should window.
enum class Portion { all, train, heldout };

/// Windows every segment of a normalized round separately; frames never span
/// two cases. `train` is the first `train_fraction` of each segment and
/// `heldout` the remainder.
template <typename T>
std::vector<Frame<T>> window_round(const Array3<T>& norm, const std::vector<Segment>& segments, std::size_t tau,
                                   std::size_t stride, Portion portion = Portion::all, double train_fraction = 0.8,
                                   Split split = Split::labeled, int dataset_id = 0,
                                   PreprocessWarnings* warn = nullptr) {
  std::vector<Frame<T>> out;
  for (const auto& seg : segments) {
    const auto cut = seg.start + static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(seg.length)));
    std::size_t lo = seg.start, hi = seg.start + seg.length;
    if (portion == Portion::train) hi = cut;
    if (portion == Portion::heldout) lo = cut;
    for (auto f : window(norm, tau, stride, lo, hi, warn)) {
      f.label = seg.label;
      f.split = split;
      f.dataset_id = dataset_id;
      out.push_back(f);
    }
  }
  return out;
}

/// Sinusoidal diversity table (tau, P): column p (1-based) gets
/// sin(t / eta^((p-2)/P)) for even p and cos(t / eta^((p-1)/P)) for odd p,
/// with t = 0..tau-1.
inline Mat<double> diversity_table(std::size_t tau, std::size_t P, double eta) {
  if (!(eta > 0)) throw Error(ErrorKind::usage, "diversity constant must be > 0");
  Mat<double> tab(tau, P);
  const double Pd = static_cast<double>(P);
  for (std::size_t t = 0; t < tau; ++t) {
    const double td = static_cast<double>(t);
    for (std::size_t j = 0; j < P; ++j) {
      const std::size_t p = j + 1;
      tab(t, j) = (p % 2 == 0) ? std::sin(td / std::pow(eta, (static_cast<double>(p) - 2.0) / Pd))
                               : std::cos(td / std::pow(eta, (static_cast<double>(p) - 1.0) / Pd));
    }
  }
  return tab;
}

/// Reshapes (tau, S, K) to (tau, P) with pair-major columns p = k*S + s.
template <typename T, typename U>
Mat<T> reshape_pair_major(const Frame<U>& f) {
  Mat<T> m(f.tau, f.S * f.K);
  for (std::size_t t = 0; t < f.tau; ++t)
    for (std::size_t k = 0; k < f.K; ++k)
      for (std::size_t s = 0; s < f.S; ++s) m(t, k * f.S + s) = static_cast<T>(f.at(t, s, k));
  return m;
}

template <typename T>
struct EmbeddedFrame {
  Mat<T> values;  // (tau, P)
  double eta = 10000.0;
};

template <typename T, typename U>
EmbeddedFrame<T> embed_with_diversity(const Frame<U>& f, double eta, const Mat<double>* table = nullptr) {
  EmbeddedFrame<T> e{reshape_pair_major<T>(f), eta};
  Mat<double> own;
  if (!table) {
    own = diversity_table(f.tau, f.S * f.K, eta);
    table = &own;
  }
  if (table->rows() != static_cast<Eigen::Index>(f.tau) || table->cols() != static_cast<Eigen::Index>(f.S * f.K))
    throw Error(ErrorKind::usage, "diversity table shape does not match frame");
  e.values += table->template cast<T>();
  return e;
}

}  // namespace bts
