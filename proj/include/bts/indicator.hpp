// SPDX-License-Identifier: Apache-2.0
#pragma once

// Training-free adjoining-room indicator.
//
// disarray  rho = prod_k mean_s w(s,k),
//           w(s,k) = H_t(x(.,s,k)) - alpha/tau * sum_t |x(t,s,k) - mean_t x|^beta
// where H_t is the Shannon entropy (natural log) of the subcarrier's time
// series normalized to sum to one. Occupied rooms fluctuate more, which lowers
// the entropy and raises the deviation term, so rho drops with occupancy.

#include <bts/preprocess.hpp>

#include <algorithm>

#include <array>
#include <sstream>

namespace bts {

struct DisarrayParams {
  double alpha = 1.0;  // fine-step
  double beta = 1.0;   // fine-order
  double floor = 1e-12;

  void validate() const {
    if (!(alpha >= 0)) throw Error(ErrorKind::usage, "alpha must be >= 0");
    if (!(beta > 0)) throw Error(ErrorKind::usage, "beta must be > 0");
  }
};

template <typename T>
double disarray(const Frame<T>& f, const DisarrayParams& prm = {}) {
  prm.validate();
  if (f.tau < 2) throw Error(ErrorKind::usage, "disarray needs tau >= 2");
  const auto tau = static_cast<Eigen::Index>(f.tau);
  const auto S = static_cast<Eigen::Index>(f.S);
  const auto K = static_cast<Eigen::Index>(f.K);
  // View the frame as (tau*S, K) and pull one pair at a time into (tau, S).
  Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> flat(f.data, tau * S, K);
  Eigen::ArrayXXd x(tau, S);
  std::vector<double> pair_means(static_cast<std::size_t>(K));
  for (Eigen::Index k = 0; k < K; ++k) {
    for (Eigen::Index t = 0; t < tau; ++t)
      for (Eigen::Index s = 0; s < S; ++s) x(t, s) = static_cast<double>(flat(t * S + s, k));
    const Eigen::ArrayXXd xf = x + prm.floor;
    const Eigen::ArrayXXd p = xf.rowwise() / xf.colwise().sum();
    Eigen::ArrayXd w = -(p * p.log()).colwise().sum().transpose();
    if (prm.alpha != 0.0) {
      const Eigen::ArrayXXd dev = (x.rowwise() - x.colwise().mean()).abs();
      const Eigen::ArrayXXd powed = (prm.beta == 1.0) ? dev : dev.pow(prm.beta);
      w -= (prm.alpha / static_cast<double>(tau)) * powed.colwise().sum().transpose();
    }
    // Time-constant columns are uniform: entropy ln(tau), no deviation.
    for (Eigen::Index s = 0; s < S; ++s)
      if ((x.col(s) == x(0, s)).all() && xf(0, s) > 0) w(s) = std::log(static_cast<double>(tau));
    pair_means[static_cast<std::size_t>(k)] = (w == w(0)).all() ? w(0) : w.mean();
  }
  if (std::all_of(pair_means.begin(), pair_means.end(), [&](double m) { return m == pair_means[0]; }))
    return std::pow(pair_means[0], static_cast<double>(K));
  double rho = 1.0;
  for (double m : pair_means) rho *= m;
  return rho;
}

template <typename T>
std::vector<double> disarray_all(const std::vector<Frame<T>>& frames, const DisarrayParams& prm = {}) {
  std::vector<double> out;
  out.reserve(frames.size());
  for (const auto& f : frames) out.push_back(disarray(f, prm));
  return out;
}

inline double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

/// Mean labeled disarray minus mean unlabeled disarray.
inline double disparity(const std::vector<double>& labeled_rho, const std::vector<double>& unlabeled_rho) {
  if (labeled_rho.empty() || unlabeled_rho.empty())
    throw Error(ErrorKind::data, std::string("disparity: empty ") + (labeled_rho.empty() ? "labeled" : "unlabeled") +
                                     " disarray list");
  return mean_of(labeled_rho) - mean_of(unlabeled_rho);
}

struct IndicatorSet {
  std::array<double, kNumCases> gamma{};
  double delta = 0.0;
  std::size_t M = 0;  // labeled frames
  std::size_t N = 0;  // unlabeled frames
  std::array<std::size_t, kNumCases> M_c{};
};

/// gamma_1 is the mean labeled disarray of empty-room frames; every occupied
/// case is shifted by the disparity.
inline IndicatorSet build_indicators_from_rho(const std::vector<double>& labeled_rho, const std::vector<int>& labels,
                                              const std::vector<double>& unlabeled_rho) {
  if (labeled_rho.size() != labels.size())
    throw Error(ErrorKind::usage, "build_indicators: one label per labeled disarray required");
  IndicatorSet ind;
  ind.delta = disparity(labeled_rho, unlabeled_rho);
  ind.M = labeled_rho.size();
  ind.N = unlabeled_rho.size();
  std::array<double, kNumCases> sum{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_case(labels[i]);
    sum[labels[i] - 1] += labeled_rho[i];
    ++ind.M_c[labels[i] - 1];
  }
  std::ostringstream missing;
  for (int c = 0; c < kNumCases; ++c)
    if (ind.M_c[c] == 0) missing << (missing.tellp() > 0 ? ", " : "") << (c + 1);
  if (missing.tellp() > 0) throw Error(ErrorKind::data, "labeled set lacks case(s): " + missing.str());
  for (int c = 0; c < kNumCases; ++c)
    ind.gamma[c] = sum[c] / static_cast<double>(ind.M_c[c]) + (c == 0 ? 0.0 : ind.delta);
  return ind;
}

template <typename T>
IndicatorSet build_indicators(const std::vector<Frame<T>>& labeled, const std::vector<Frame<T>>& unlabeled,
                              const DisarrayParams& prm = {}) {
  std::vector<int> labels;
  labels.reserve(labeled.size());
  for (const auto& f : labeled) {
    if (!f.label) throw Error(ErrorKind::data, "labeled frame without a label");
    labels.push_back(*f.label);
  }
  return build_indicators_from_rho(disarray_all(labeled, prm), labels, disarray_all(unlabeled, prm));
}

using Confidence = std::array<double, kNumCases>;

/// xi_c = -(rho - gamma_c)^2 mapped affinely so max -> 1 and min -> -1.
/// All-equal raw scores give the zero vector.
inline Confidence confidence_from_rho(double rho, const IndicatorSet& ind, std::size_t num_cases = kNumCases) {
  Confidence xi{};
  double lo = 0.0, hi = 0.0;
  for (std::size_t c = 0; c < num_cases; ++c) {
    const double d = rho - ind.gamma[c];
    xi[c] = -d * d;
    if (c == 0 || xi[c] < lo) lo = xi[c];
    if (c == 0 || xi[c] > hi) hi = xi[c];
  }
  if (!(hi > lo)) return Confidence{};
  for (std::size_t c = 0; c < num_cases; ++c) xi[c] = 2.0 * (xi[c] - lo) / (hi - lo) - 1.0;
  return xi;
}

enum class ConfidenceScope {
  per_frame,   // each frame scored with its own disarray
  batch_mean,  // every frame scored with the batch-mean disarray
};

inline std::vector<Confidence> confidence_distribution(const std::vector<double>& batch_rho, const IndicatorSet& ind,
                                                       ConfidenceScope scope = ConfidenceScope::per_frame) {
  std::vector<Confidence> out;
  out.reserve(batch_rho.size());
  if (scope == ConfidenceScope::batch_mean) {
    if (batch_rho.empty()) return out;
    const Confidence xi = confidence_from_rho(mean_of(batch_rho), ind);
    out.assign(batch_rho.size(), xi);
    return out;
  }
  for (double r : batch_rho) out.push_back(confidence_from_rho(r, ind));
  return out;
}

/// Index of the largest entry, lowest index on ties. Returns a 1-based case.
inline int argmax_case(const Confidence& xi) {
  int best = 0;
  for (int c = 1; c < kNumCases; ++c)
    if (xi[c] > xi[best]) best = c;
  return best + 1;
}

inline int indicator_classify_rho(double rho, const IndicatorSet& ind) {
  return argmax_case(confidence_from_rho(rho, ind));
}

template <typename T>
int indicator_classify(const Frame<T>& f, const IndicatorSet& ind, const DisarrayParams& prm = {}) {
  return indicator_classify_rho(disarray(f, prm), ind);
}

}  // namespace bts
