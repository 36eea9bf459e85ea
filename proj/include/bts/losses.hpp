// SPDX-License-Identifier: Apache-2.0
#pragma once

// Loss families of the bifold teacher-student scheme. Classification losses
// take softmax probabilities and return d loss / d probs; representation
// losses take projection batches and return d loss / d projection. Targets
// built from labels, pseudo labels and confidence scores are constants.

#include <bts/indicator.hpp>
#include <bts/nn/layers.hpp>

namespace bts {

inline constexpr double kProbFloor = 1e-12;

template <typename T>
struct LossGrad {
  T value = 0;
  Mat<T> grad;
};

struct LossWeights {
  double lambda1 = 0.1;  // TCE
  double lambda2 = 2.0;  // teacher UICE
  double lambda3 = 1.0;  // CTQ
  double lambda4 = 0.5;  // CTVE (primal only)

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0 || lambda3 < 0 || lambda4 < 0)
      throw Error(ErrorKind::usage, "loss weights must be nonnegative");
  }
};

/// softmax(base + xi) row by row.
template <typename T>
Mat<T> confidence_target(const Mat<T>& base, const std::vector<Confidence>& xi) {
  if (static_cast<std::size_t>(base.rows()) != xi.size())
    throw Error(ErrorKind::usage, "one confidence vector per row required");
  Mat<T> z = base;
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    for (Eigen::Index c = 0; c < z.cols(); ++c) z(i, c) += static_cast<T>(xi[static_cast<std::size_t>(i)][c]);
  return nn::softmax_rows<T>(z);
}

template <typename T>
Mat<T> one_hot(const std::vector<int>& labels, int classes) {
  Mat<T> y = Mat<T>::Zero(static_cast<Eigen::Index>(labels.size()), classes);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_case(labels[i]);
    y(static_cast<Eigen::Index>(i), labels[i] - 1) = T(1);
  }
  return y;
}

/// Batch-mean cross entropy -sum_c target_c log max(p_c, floor).
template <typename T>
LossGrad<T> cross_entropy(const Mat<T>& target, const Mat<T>& probs) {
  if (target.rows() != probs.rows() || target.cols() != probs.cols())
    throw Error(ErrorKind::usage, "cross_entropy: shape mismatch");
  const T floor = static_cast<T>(kProbFloor);
  const T inv_b = T(1) / static_cast<T>(std::max<Eigen::Index>(1, probs.rows()));
  LossGrad<T> out{T(0), Mat<T>::Zero(probs.rows(), probs.cols())};
  for (Eigen::Index i = 0; i < probs.rows(); ++i)
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
      const T p = probs(i, c);
      if (p > floor) {
        out.value -= target(i, c) * std::log(p);
        out.grad(i, c) = -target(i, c) / p * inv_b;
      } else {
        out.value -= target(i, c) * std::log(floor);
      }
    }
  out.value *= inv_b;
  return out;
}

/// Transformative cross entropy on a labeled batch.
template <typename T>
LossGrad<T> tce(const Mat<T>& probs, const std::vector<int>& labels, const std::vector<Confidence>& xi_labeled) {
  return cross_entropy<T>(confidence_target<T>(one_hot<T>(labels, static_cast<int>(probs.cols())), xi_labeled), probs);
}

/// Student loss on the unlabeled batch against the teacher's pseudo labels.
template <typename T>
LossGrad<T> uice_student(const Mat<T>& probs, const Mat<T>& pseudo, const std::vector<Confidence>& xi_unlabeled) {
  return cross_entropy<T>(confidence_target<T>(pseudo, xi_unlabeled), probs);
}

/// Teacher loss on the unlabeled batch, scaled by the student's feedback.
template <typename T>
LossGrad<T> uice_teacher(const Mat<T>& probs, const Mat<T>& pseudo, const std::vector<Confidence>& xi_unlabeled,
                         double feedback) {
  if (feedback < 0) throw Error(ErrorKind::usage, "feedback must be nonnegative");
  LossGrad<T> ce = uice_student<T>(probs, pseudo, xi_unlabeled);
  const T f = static_cast<T>(feedback);
  ce.value *= f;
  ce.grad *= f;
  return ce;
}

/// Batch mean of sum_c y_c log p_c.
template <typename T>
double labeled_log_likelihood(const Mat<T>& probs, const std::vector<int>& labels) {
  double s = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    check_case(labels[i]);
    s += std::log(std::max(static_cast<double>(probs(static_cast<Eigen::Index>(i), labels[i] - 1)), kProbFloor));
  }
  return s / static_cast<double>(std::max<std::size_t>(1, labels.size()));
}

/// ReLU of the gain in labeled log-likelihood across one student update:
/// positive exactly when the student's labeled cross entropy went down.
template <typename T>
double compute_feedback(const Mat<T>& probs_before, const Mat<T>& probs_after, const std::vector<int>& labels) {
  const double gain = labeled_log_likelihood(probs_after, labels) - labeled_log_likelihood(probs_before, labels);
  return gain > 0.0 ? gain : 0.0;
}

/// Cross-teacher quadratic loss: mean over rows of ||a - b||^2. The gradient
/// is with respect to `a`; the one for `b` is its negation.
template <typename T>
LossGrad<T> ctq(const Mat<T>& a, const Mat<T>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw Error(ErrorKind::usage, "ctq: dimension mismatch");
  const T inv_b = T(1) / static_cast<T>(std::max<Eigen::Index>(1, a.rows()));
  const Mat<T> diff = a - b;
  return {diff.squaredNorm() * inv_b, diff * (T(2) * inv_b)};
}

/// Mean squared distance of projections to the hypersphere center.
template <typename T>
LossGrad<T> ctve(const Mat<T>& proj, const RowVec<T>& center) {
  if (proj.cols() != center.cols()) throw Error(ErrorKind::usage, "ctve: dimension mismatch");
  const T inv_b = T(1) / static_cast<T>(std::max<Eigen::Index>(1, proj.rows()));
  const Mat<T> diff = proj.rowwise() - center;
  return {diff.squaredNorm() * inv_b, diff * (T(2) * inv_b)};
}

template <typename T>
RowVec<T> center_of(const Mat<T>& proj) {
  if (proj.rows() == 0) throw Error(ErrorKind::data, "center of an empty projection set");
  return proj.colwise().mean();
}

template <typename T>
T outlier_distance(const RowVec<T>& proj, const RowVec<T>& center) {
  if (proj.cols() != center.cols()) throw Error(ErrorKind::usage, "outlier_distance: dimension mismatch");
  return (proj - center).squaredNorm();
}

struct LossComponents {
  double tce_pt = 0, tce_dt = 0;
  double uice_pt = 0, uice_dt = 0;
  double uice_ps = 0, uice_ds = 0;
  double ctq = 0, ctve = 0;
};

struct TotalLosses {
  double primal_teacher = 0, dual_teacher = 0, primal_student = 0, dual_student = 0;
};

inline TotalLosses total_losses(const LossComponents& c, const LossWeights& w) {
  w.validate();
  return {w.lambda1 * c.tce_pt + w.lambda2 * c.uice_pt + w.lambda3 * c.ctq + w.lambda4 * c.ctve,
          w.lambda1 * c.tce_dt + w.lambda2 * c.uice_dt + w.lambda3 * c.ctq, c.uice_ps, c.uice_ds};
}

}  // namespace bts
