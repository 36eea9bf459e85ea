// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <bts/nn/layers.hpp>

namespace bts {

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam over the parameters a network exposes through visit(). Moment
/// buffers follow visit order, which is fixed per architecture.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(AdamOptions opt) : opt_(opt) {}

  template <class Net>
  void step(Net& net) {
    ++t_;
    const T b1 = static_cast<T>(opt_.beta1), b2 = static_cast<T>(opt_.beta2);
    const T c1 = T(1) - static_cast<T>(std::pow(opt_.beta1, static_cast<double>(t_)));
    const T c2 = T(1) - static_cast<T>(std::pow(opt_.beta2, static_cast<double>(t_)));
    const T lr = static_cast<T>(opt_.lr), eps = static_cast<T>(opt_.eps);
    std::size_t idx = 0;
    net.visit("", [&](const std::string&, nn::Param<T>& p) {
      if (idx == m_.size()) {
        m_.push_back(Mat<T>::Zero(p.w.rows(), p.w.cols()));
        v_.push_back(Mat<T>::Zero(p.w.rows(), p.w.cols()));
      }
      Mat<T>& m = m_[idx];
      Mat<T>& v = v_[idx];
      m = b1 * m + (T(1) - b1) * p.g;
      v = b2 * v + (T(1) - b2) * p.g.cwiseAbs2();
      p.w.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
      ++idx;
    });
  }

  long steps() const { return t_; }
  const AdamOptions& options() const { return opt_; }

 private:
  AdamOptions opt_;
  std::vector<Mat<T>> m_, v_;
  long t_ = 0;
};

}  // namespace bts
