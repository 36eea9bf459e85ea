// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal layers with explicit backward passes. Every layer works on one
// sample at a time: activations are (rows x features) matrices. forward() is
// const and records what backward() needs in a per-call cache, so several
// forward passes can share one set of weights. backward() accumulates into the
// parameter gradients and returns the input gradient.

#include <bts/common.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace bts::nn {

template <typename T>
struct Param {
  Mat<T> w;
  Mat<T> g;

  Param() = default;
  Param(Eigen::Index r, Eigen::Index c) : w(Mat<T>::Zero(r, c)), g(Mat<T>::Zero(r, c)) {}
  void zero_grad() { g.setZero(); }
};

/// Fan-in scaled normal init.
template <typename T>
void init_fan_in(Param<T>& p, Eigen::Index fan_in, Rng& rng, double gain = 1.0) {
  const double sd = gain / std::sqrt(static_cast<double>(fan_in));
  for (Eigen::Index i = 0; i < p.w.size(); ++i) p.w.data()[i] = static_cast<T>(rng.normal() * sd);
}

template <typename T>
Mat<T> softmax_rows(const Mat<T>& z) {
  Mat<T> p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const T mx = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - mx).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

/// Gradient w.r.t. logits given the gradient w.r.t. softmax probabilities.
template <typename T>
Mat<T> softmax_backward(const Mat<T>& probs, const Mat<T>& dprobs) {
  Mat<T> d(probs.rows(), probs.cols());
  for (Eigen::Index i = 0; i < probs.rows(); ++i) {
    const T dot = probs.row(i).dot(dprobs.row(i));
    d.row(i) = probs.row(i).cwiseProduct((dprobs.row(i).array() - dot).matrix());
  }
  return d;
}

// tanh approximation of GELU
template <typename T>
Mat<T> gelu(const Mat<T>& x) {
  const T c = static_cast<T>(0.7978845608028654);
  const T a = static_cast<T>(0.044715);
  const auto v = x.array();
  Mat<T> y = (c * (v + a * v.cube())).tanh().matrix();
  y.array() = static_cast<T>(0.5) * v * (y.array() + T(1));
  return y;
}

template <typename T>
Mat<T> gelu_backward(const Mat<T>& x, const Mat<T>& dy) {
  const T c = static_cast<T>(0.7978845608028654);
  const T a = static_cast<T>(0.044715);
  const auto v = x.array();
  Mat<T> th = (c * (v + a * v.cube())).tanh().matrix();
  const auto t = th.array();
  th.array() = (static_cast<T>(0.5) * (t + T(1)) +
                static_cast<T>(0.5) * v * (T(1) - t.square()) * c * (T(1) + T(3) * a * v.square())) *
               dy.array();
  return th;
}

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(Eigen::Index in, Eigen::Index out, bool bias = true) : W_(in, out), has_bias_(bias) {
    if (bias) b_ = Param<T>(1, out);
  }

  void init(Rng& rng, double gain = 1.0) { init_fan_in(W_, W_.w.rows(), rng, gain); }

  Mat<T> forward(const Mat<T>& x) const {
    if (x.cols() != W_.w.rows()) throw Error(ErrorKind::usage, "Linear: input width mismatch");
    Mat<T> y = x * W_.w;
    if (has_bias_) y.rowwise() += b_.w.row(0);
    return y;
  }

  Mat<T> backward(const Mat<T>& x, const Mat<T>& dy) {
    accumulate(x, dy);
    return dy * W_.w.transpose();
  }

  /// Parameter gradients only.
  void accumulate(const Mat<T>& x, const Mat<T>& dy) {
    W_.g.noalias() += x.transpose() * dy;
    if (has_bias_) b_.g.row(0) += dy.colwise().sum();
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", W_);
    if (has_bias_) f(prefix + ".bias", b_);
  }

  Param<T>& weight() { return W_; }
  const Param<T>& weight() const { return W_; }
  Eigen::Index in_features() const { return W_.w.rows(); }
  Eigen::Index out_features() const { return W_.w.cols(); }

 private:
  Param<T> W_;
  Param<T> b_;
  bool has_bias_ = true;
};

template <typename T>
class LayerNorm {
 public:
  struct Cache {
    Mat<T> xhat;
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
  };

  LayerNorm() = default;
  explicit LayerNorm(Eigen::Index d) : gamma_(1, d), beta_(1, d) { gamma_.w.setOnes(); }

  Mat<T> forward(const Mat<T>& x, Cache& c) const {
    const auto n = x.rows();
    const T d = static_cast<T>(x.cols());
    c.xhat.resize(n, x.cols());
    c.rstd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const T mu = x.row(i).sum() / d;
      const auto centered = (x.row(i).array() - mu).matrix();
      const T var = centered.squaredNorm() / d;
      c.rstd(i) = T(1) / std::sqrt(var + eps_);
      c.xhat.row(i) = centered * c.rstd(i);
    }
    Mat<T> y = c.xhat.array().rowwise() * gamma_.w.row(0).array();
    y.rowwise() += beta_.w.row(0);
    return y;
  }

  Mat<T> backward(const Cache& c, const Mat<T>& dy) {
    gamma_.g.row(0) += dy.cwiseProduct(c.xhat).colwise().sum();
    beta_.g.row(0) += dy.colwise().sum();
    const T d = static_cast<T>(dy.cols());
    Mat<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
      const auto dxhat = dy.row(i).cwiseProduct(gamma_.w.row(0));
      const T m1 = dxhat.sum() / d;
      const T m2 = dxhat.dot(c.xhat.row(i)) / d;
      dx.row(i) = c.rstd(i) * (dxhat.array() - m1 - c.xhat.row(i).array() * m2).matrix();
    }
    return dx;
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gamma", gamma_);
    f(prefix + ".beta", beta_);
  }

 private:
  Param<T> gamma_;
  Param<T> beta_;
  T eps_ = static_cast<T>(1e-5);
};

/// Multi-head scaled dot-product self-attention over the rows of x.
template <typename T>
class SelfAttention {
 public:
  struct Cache {
    Mat<T> x, qkv, heads_out;
    std::vector<Mat<T>> attn;
  };

  SelfAttention() = default;
  SelfAttention(Eigen::Index d, Eigen::Index heads) : qkv_(d, 3 * d), out_(d, d), heads_(heads) {
    if (heads < 1 || d % heads != 0) throw Error(ErrorKind::usage, "attention width must divide into heads");
  }

  void init(Rng& rng) {
    qkv_.init(rng);
    out_.init(rng);
  }

  Mat<T> forward(const Mat<T>& x, Cache& c) const {
    const Eigen::Index n = x.rows(), d = x.cols(), dh = d / heads_;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    c.x = x;
    c.qkv = qkv_.forward(x);
    c.heads_out.resize(n, d);
    c.attn.resize(static_cast<std::size_t>(heads_));
    for (Eigen::Index h = 0; h < heads_; ++h) {
      const auto Q = c.qkv.middleCols(h * dh, dh);
      const auto K = c.qkv.middleCols(d + h * dh, dh);
      const auto V = c.qkv.middleCols(2 * d + h * dh, dh);
      Mat<T> scores = (Q * K.transpose()) * scale;
      c.attn[static_cast<std::size_t>(h)] = softmax_rows<T>(scores);
      c.heads_out.middleCols(h * dh, dh).noalias() = c.attn[static_cast<std::size_t>(h)] * V;
    }
    return out_.forward(c.heads_out);
  }

  Mat<T> backward(const Cache& c, const Mat<T>& dy) {
    const Eigen::Index n = c.x.rows(), d = c.x.cols(), dh = d / heads_;
    const T scale = T(1) / std::sqrt(static_cast<T>(dh));
    const Mat<T> dheads = out_.backward(c.heads_out, dy);
    Mat<T> dqkv(n, 3 * d);
    for (Eigen::Index h = 0; h < heads_; ++h) {
      const Mat<T>& A = c.attn[static_cast<std::size_t>(h)];
      const auto Q = c.qkv.middleCols(h * dh, dh);
      const auto K = c.qkv.middleCols(d + h * dh, dh);
      const auto V = c.qkv.middleCols(2 * d + h * dh, dh);
      const auto dO = dheads.middleCols(h * dh, dh);
      const Mat<T> dA = dO * V.transpose();
      dqkv.middleCols(2 * d + h * dh, dh).noalias() = A.transpose() * dO;
      Mat<T> dS = softmax_backward<T>(A, dA) * scale;
      dqkv.middleCols(h * dh, dh).noalias() = dS * K;
      dqkv.middleCols(d + h * dh, dh).noalias() = dS.transpose() * Q;
    }
    return qkv_.backward(c.x, dqkv);
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    qkv_.visit(prefix + ".qkv", f);
    out_.visit(prefix + ".out", f);
  }

 private:
  Linear<T> qkv_;
  Linear<T> out_;
  Eigen::Index heads_ = 1;
};

/// Pre-norm transformer encoder block.
template <typename T>
class EncoderBlock {
 public:
  struct Cache {
    typename LayerNorm<T>::Cache ln1, ln2;
    typename SelfAttention<T>::Cache attn;
    Mat<T> a_in, h, f_in, f_hidden;
  };

  EncoderBlock() = default;
  EncoderBlock(Eigen::Index d, Eigen::Index heads, Eigen::Index ff)
      : ln1_(d), attn_(d, heads), ln2_(d), fc1_(d, ff), fc2_(ff, d) {}

  void init(Rng& rng) {
    attn_.init(rng);
    fc1_.init(rng);
    fc2_.init(rng);
  }

  Mat<T> forward(const Mat<T>& x, Cache& c) const {
    c.a_in = ln1_.forward(x, c.ln1);
    c.h = x + attn_.forward(c.a_in, c.attn);
    c.f_in = ln2_.forward(c.h, c.ln2);
    c.f_hidden = fc1_.forward(c.f_in);
    return c.h + fc2_.forward(gelu<T>(c.f_hidden));
  }

  Mat<T> backward(const Cache& c, const Mat<T>& dy) {
    const Mat<T> dact = fc2_.backward(gelu<T>(c.f_hidden), dy);
    const Mat<T> dfin = fc1_.backward(c.f_in, gelu_backward<T>(c.f_hidden, dact));
    const Mat<T> dh = dy + ln2_.backward(c.ln2, dfin);
    const Mat<T> dain = attn_.backward(c.attn, dh);
    return dh + ln1_.backward(c.ln1, dain);
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    ln1_.visit(prefix + ".ln1", f);
    attn_.visit(prefix + ".attn", f);
    ln2_.visit(prefix + ".ln2", f);
    fc1_.visit(prefix + ".ff1", f);
    fc2_.visit(prefix + ".ff2", f);
  }

 private:
  LayerNorm<T> ln1_;
  SelfAttention<T> attn_;
  LayerNorm<T> ln2_;
  Linear<T> fc1_;
  Linear<T> fc2_;
};

/// Spatial shape of an (H*W, C) activation.
struct Shape2d {
  Eigen::Index H = 0, W = 0, C = 0;
};

/// 2-D convolution on (H*W, C) activations via im2col, zero padding.
template <typename T>
class Conv2d {
 public:
  struct Cache {
    Mat<T> cols;
    Shape2d in;
  };

  Conv2d() = default;
  Conv2d(Eigen::Index cin, Eigen::Index cout, Eigen::Index ksize, Eigen::Index stride)
      : lin_(cin * ksize * ksize, cout), cin_(cin), k_(ksize), stride_(stride), pad_(ksize / 2) {}

  void init(Rng& rng, double gain = 1.0) { lin_.init(rng, gain); }

  Shape2d out_shape(const Shape2d& in) const {
    return {(in.H + 2 * pad_ - k_) / stride_ + 1, (in.W + 2 * pad_ - k_) / stride_ + 1, lin_.out_features()};
  }

  Mat<T> forward(const Mat<T>& x, const Shape2d& in, Cache& c) const {
    if (in.C != cin_ || x.rows() != in.H * in.W || x.cols() != in.C)
      throw Error(ErrorKind::usage, "Conv2d: input shape mismatch");
    const Shape2d o = out_shape(in);
    c.in = in;
    c.cols.setZero(o.H * o.W, k_ * k_ * cin_);
    for (Eigen::Index oy = 0; oy < o.H; ++oy)
      for (Eigen::Index ox = 0; ox < o.W; ++ox) {
        const Eigen::Index row = oy * o.W + ox;
        for (Eigen::Index ky = 0; ky < k_; ++ky) {
          const Eigen::Index iy = oy * stride_ + ky - pad_;
          if (iy < 0 || iy >= in.H) continue;
          for (Eigen::Index kx = 0; kx < k_; ++kx) {
            const Eigen::Index ix = ox * stride_ + kx - pad_;
            if (ix < 0 || ix >= in.W) continue;
            const T* src = x.data() + (iy * in.W + ix) * cin_;
            std::copy(src, src + cin_, c.cols.data() + row * c.cols.cols() + (ky * k_ + kx) * cin_);
          }
        }
      }
    return lin_.forward(c.cols);
  }

  /// Returns an empty matrix when need_dx is false (first layer).
  Mat<T> backward(const Cache& c, const Mat<T>& dy, bool need_dx = true) {
    if (!need_dx) {
      lin_.accumulate(c.cols, dy);
      return {};
    }
    const Mat<T> dcols = lin_.backward(c.cols, dy);
    const Shape2d o = out_shape(c.in);
    Mat<T> dx = Mat<T>::Zero(c.in.H * c.in.W, cin_);
    for (Eigen::Index oy = 0; oy < o.H; ++oy)
      for (Eigen::Index ox = 0; ox < o.W; ++ox) {
        const Eigen::Index row = oy * o.W + ox;
        for (Eigen::Index ky = 0; ky < k_; ++ky) {
          const Eigen::Index iy = oy * stride_ + ky - pad_;
          if (iy < 0 || iy >= c.in.H) continue;
          for (Eigen::Index kx = 0; kx < k_; ++kx) {
            const Eigen::Index ix = ox * stride_ + kx - pad_;
            if (ix < 0 || ix >= c.in.W) continue;
            T* dst = dx.data() + (iy * c.in.W + ix) * cin_;
            const T* src = dcols.data() + row * dcols.cols() + (ky * k_ + kx) * cin_;
            for (Eigen::Index j = 0; j < cin_; ++j) dst[j] += src[j];
          }
        }
      }
    return dx;
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    lin_.visit(prefix, f);
  }

 private:
  Linear<T> lin_;
  Eigen::Index cin_ = 1, k_ = 3, stride_ = 1, pad_ = 1;
};

/// conv-gelu-conv with a projection shortcut when the shape changes, then gelu.
template <typename T>
class ResidualBlock {
 public:
  struct Cache {
    typename Conv2d<T>::Cache c1, c2, cs;
    Mat<T> x, a1, pre;
    Shape2d in, mid;
  };

  ResidualBlock() = default;
  ResidualBlock(Eigen::Index cin, Eigen::Index cout, Eigen::Index stride)
      : conv1_(cin, cout, 3, stride), conv2_(cout, cout, 3, 1), project_(stride != 1 || cin != cout) {
    if (project_) shortcut_ = Conv2d<T>(cin, cout, 1, stride);
  }

  void init(Rng& rng) {
    conv1_.init(rng, std::sqrt(2.0));
    conv2_.init(rng, 0.5);
    if (project_) shortcut_.init(rng);
  }

  Shape2d out_shape(const Shape2d& in) const { return conv1_.out_shape(in); }

  Mat<T> forward(const Mat<T>& x, const Shape2d& in, Cache& c) const {
    c.in = in;
    c.mid = conv1_.out_shape(in);
    c.x = x;
    c.a1 = conv1_.forward(x, in, c.c1);
    Mat<T> main = conv2_.forward(gelu<T>(c.a1), c.mid, c.c2);
    c.pre = main + (project_ ? shortcut_.forward(x, in, c.cs) : x);
    return gelu<T>(c.pre);
  }

  Mat<T> backward(const Cache& c, const Mat<T>& dy) {
    const Mat<T> dpre = gelu_backward<T>(c.pre, dy);
    const Mat<T> dact = conv2_.backward(c.c2, dpre);
    Mat<T> dx = conv1_.backward(c.c1, gelu_backward<T>(c.a1, dact));
    if (project_)
      dx += shortcut_.backward(c.cs, dpre);
    else
      dx += dpre;
    return dx;
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    conv1_.visit(prefix + ".conv1", f);
    conv2_.visit(prefix + ".conv2", f);
    if (project_) shortcut_.visit(prefix + ".shortcut", f);
  }

 private:
  Conv2d<T> conv1_, conv2_, shortcut_;
  bool project_ = false;
};

}  // namespace bts::nn
