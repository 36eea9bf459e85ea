// SPDX-License-Identifier: Apache-2.0
#pragma once

// Primal (attention encoder over embedded frames) and dual (residual
// convolutional extractor over (tau, S, K) frames) classifiers, plus the shared
// projection head used by the representation losses.

#include <bts/nn/layers.hpp>
#include <bts/preprocess.hpp>

#include <optional>

namespace bts {

struct PrimalConfig {
  int d_model = 64;
  int heads = 4;
  int ff = 128;
  int blocks = 2;
  bool operator==(const PrimalConfig&) const = default;
};

struct DualConfig {
  int width = 32;
  int blocks = 3;
  int stem_stride = 2;
  bool operator==(const DualConfig&) const = default;
};

struct NetConfig {
  int tau = 50;
  int S = 56;
  int K = 4;
  int classes = kNumCases;
  double eta = 10000.0;
  bool use_diversity = true;
  PrimalConfig primal;
  DualConfig dual;
  int latent = 64;      // D; primal d_model must match
  int psi_hidden = 64;  // 0 gives a single linear layer
  int psi_out = 32;
  std::uint64_t init_seed = 1;

  int P() const { return S * K; }
  void validate() const {
    if (tau < 1 || S < 1 || K < 1 || classes < 2) throw Error(ErrorKind::usage, "invalid network dimensions");
    if (primal.d_model != latent) throw Error(ErrorKind::usage, "primal d_model must equal latent dimension");
    if (primal.blocks < 1 || dual.blocks < 0 || dual.width < 1) throw Error(ErrorKind::usage, "invalid depth/width");
  }
  bool operator==(const NetConfig&) const = default;
};

/// Per-batch network output. Rows are samples.
template <typename T>
struct EncoderOutput {
  Mat<T> z;       // (B, D)
  Mat<T> logits;  // (B, C)
  Mat<T> probs;   // (B, C)
};

template <typename T, typename U>
void check_frame(const Frame<U>& f, const NetConfig& cfg) {
  if (static_cast<int>(f.tau) != cfg.tau || static_cast<int>(f.S) != cfg.S || static_cast<int>(f.K) != cfg.K)
    throw Error(ErrorKind::data, "frame shape (" + std::to_string(f.tau) + "," + std::to_string(f.S) + "," +
                                     std::to_string(f.K) + ") does not match model (" + std::to_string(cfg.tau) + "," +
                                     std::to_string(cfg.S) + "," + std::to_string(cfg.K) + ")");
}

template <typename T>
class PrimalNet {
 public:
  struct Cache {
    Mat<T> x;  // embedded input (tau, P)
    std::vector<typename nn::EncoderBlock<T>::Cache> blocks;
    typename nn::LayerNorm<T>::Cache ln;
    Mat<T> z;
  };

  PrimalNet() = default;
  explicit PrimalNet(const NetConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const auto d = cfg.primal.d_model;
    table_ = diversity_table(static_cast<std::size_t>(cfg.tau), static_cast<std::size_t>(cfg.P()), cfg.eta).cast<T>();
    if (!cfg.use_diversity) table_.setZero();
    embed_ = nn::Linear<T>(cfg.P(), d);
    for (int b = 0; b < cfg.primal.blocks; ++b) blocks_.emplace_back(d, cfg.primal.heads, cfg.primal.ff);
    ln_ = nn::LayerNorm<T>(d);
    head_ = nn::Linear<T>(d, cfg.classes);
  }

  void init(Rng& rng) {
    embed_.init(rng);
    for (auto& b : blocks_) b.init(rng);
    head_.init(rng);
  }

  const NetConfig& config() const { return cfg_; }
  const Mat<T>& diversity() const { return table_; }
  void set_diversity(const Mat<T>& table) { table_ = table; }

  template <typename U>
  Mat<T> embed_input(const Frame<U>& f) const {
    check_frame<T>(f, cfg_);
    Mat<T> x = reshape_pair_major<T>(f);
    x += table_;
    return x;
  }

  /// Full encoder output (tau, d) for an already-embedded frame.
  Mat<T> encode_sequence(const Mat<T>& embedded, Cache& c) const {
    c.x = embedded;
    Mat<T> h = embed_.forward(embedded);
    c.blocks.resize(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) h = blocks_[b].forward(h, c.blocks[b]);
    return ln_.forward(h, c.ln);
  }

  /// z_g is the encoding of the last time step.
  void forward_one(const Mat<T>& embedded, Cache& c, Mat<T>& zs, Mat<T>& logits, Eigen::Index row) const {
    const Mat<T> seq = encode_sequence(embedded, c);
    c.z = seq.bottomRows(1);
    zs.row(row) = c.z.row(0);
    logits.row(row) = head_.forward(c.z).row(0);
  }

  template <typename U>
  EncoderOutput<T> forward(const std::vector<Frame<U>>& frames, std::vector<Cache>* caches = nullptr) const {
    std::vector<Mat<T>> emb;
    emb.reserve(frames.size());
    for (const auto& f : frames) emb.push_back(embed_input(f));
    return forward_embedded(emb, caches);
  }

  EncoderOutput<T> forward_embedded(const std::vector<Mat<T>>& embedded, std::vector<Cache>* caches = nullptr) const {
    const auto B = static_cast<Eigen::Index>(embedded.size());
    EncoderOutput<T> out{Mat<T>(B, cfg_.latent), Mat<T>(B, cfg_.classes), {}};
    Cache local;
    if (caches) caches->resize(embedded.size());
    for (Eigen::Index i = 0; i < B; ++i) {
      const auto& e = embedded[static_cast<std::size_t>(i)];
      if (e.rows() != cfg_.tau || e.cols() != cfg_.P()) throw Error(ErrorKind::data, "embedded frame shape mismatch");
      Cache& c = caches ? (*caches)[static_cast<std::size_t>(i)] : local;
      forward_one(e, c, out.z, out.logits, i);
    }
    out.probs = nn::softmax_rows<T>(out.logits);
    return out;
  }

  /// Accumulates parameter gradients; dz or dlogits may be empty.
  void backward(const std::vector<Cache>& caches, const Mat<T>& dz, const Mat<T>& dlogits) {
    for (std::size_t i = 0; i < caches.size(); ++i) {
      const Cache& c = caches[i];
      const auto row = static_cast<Eigen::Index>(i);
      RowVec<T> dzi = RowVec<T>::Zero(cfg_.latent);
      if (dlogits.size() > 0) dzi += head_.backward(c.z, dlogits.row(row)).row(0);
      if (dz.size() > 0) dzi += dz.row(row);
      Mat<T> dseq = Mat<T>::Zero(cfg_.tau, cfg_.latent);
      dseq.row(cfg_.tau - 1) = dzi;
      Mat<T> dh = ln_.backward(c.ln, dseq);
      for (std::size_t b = blocks_.size(); b-- > 0;) dh = blocks_[b].backward(c.blocks[b], dh);
      embed_.backward(c.x, dh);
    }
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    embed_.visit(prefix + ".embed", f);
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].visit(prefix + ".block" + std::to_string(b), f);
    ln_.visit(prefix + ".ln", f);
    head_.visit(prefix + ".head", f);
  }

 private:
  NetConfig cfg_;
  Mat<T> table_;
  nn::Linear<T> embed_;
  std::vector<nn::EncoderBlock<T>> blocks_;
  nn::LayerNorm<T> ln_;
  nn::Linear<T> head_;
};

template <typename T>
class DualNet {
 public:
  struct Cache {
    typename nn::Conv2d<T>::Cache stem;
    Mat<T> stem_pre;
    std::vector<typename nn::ResidualBlock<T>::Cache> blocks;
    nn::Shape2d last;
    Mat<T> pooled, z;
  };

  DualNet() = default;
  explicit DualNet(const NetConfig& cfg) : cfg_(cfg) {
    cfg.validate();
    const auto w = cfg.dual.width;
    stem_ = nn::Conv2d<T>(cfg.K, w, 3, cfg.dual.stem_stride);
    for (int b = 0; b < cfg.dual.blocks; ++b) blocks_.emplace_back(w, w, 2);
    fc_ = nn::Linear<T>(w, cfg.latent);
    head_ = nn::Linear<T>(cfg.latent, cfg.classes);
  }

  void init(Rng& rng) {
    stem_.init(rng, std::sqrt(2.0));
    for (auto& b : blocks_) b.init(rng);
    fc_.init(rng);
    head_.init(rng);
  }

  const NetConfig& config() const { return cfg_; }

  template <typename U>
  void forward_one(const Frame<U>& f, Cache& c, Mat<T>& zs, Mat<T>& logits, Eigen::Index row) const {
    check_frame<T>(f, cfg_);
    // (tau, S, K) row-major is already (H*W, C) with H = tau, W = S.
    const nn::Shape2d in{cfg_.tau, cfg_.S, cfg_.K};
    Mat<T> x(in.H * in.W, in.C);
    const auto vals = f.values();
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<T>(vals[static_cast<std::size_t>(i)]);
    c.stem_pre = stem_.forward(x, in, c.stem);
    nn::Shape2d shape = stem_.out_shape(in);
    Mat<T> h = nn::gelu<T>(c.stem_pre);
    c.blocks.resize(blocks_.size());
    for (std::size_t b = 0; b < blocks_.size(); ++b) {
      h = blocks_[b].forward(h, shape, c.blocks[b]);
      shape = blocks_[b].out_shape(shape);
    }
    c.last = shape;
    c.pooled = h.colwise().mean();
    c.z = fc_.forward(c.pooled);
    zs.row(row) = c.z.row(0);
    logits.row(row) = head_.forward(c.z).row(0);
  }

  template <typename U>
  EncoderOutput<T> forward(const std::vector<Frame<U>>& frames, std::vector<Cache>* caches = nullptr) const {
    const auto B = static_cast<Eigen::Index>(frames.size());
    EncoderOutput<T> out{Mat<T>(B, cfg_.latent), Mat<T>(B, cfg_.classes), {}};
    Cache local;
    if (caches) caches->resize(frames.size());
    for (Eigen::Index i = 0; i < B; ++i) {
      Cache& c = caches ? (*caches)[static_cast<std::size_t>(i)] : local;
      forward_one(frames[static_cast<std::size_t>(i)], c, out.z, out.logits, i);
    }
    out.probs = nn::softmax_rows<T>(out.logits);
    return out;
  }

  void backward(const std::vector<Cache>& caches, const Mat<T>& dz, const Mat<T>& dlogits) {
    for (std::size_t i = 0; i < caches.size(); ++i) {
      const Cache& c = caches[i];
      const auto row = static_cast<Eigen::Index>(i);
      Mat<T> dzi = Mat<T>::Zero(1, cfg_.latent);
      if (dlogits.size() > 0) dzi += head_.backward(c.z, dlogits.row(row));
      if (dz.size() > 0) dzi += dz.row(row);
      const Mat<T> dpool = fc_.backward(c.pooled, dzi);
      const Eigen::Index n = c.last.H * c.last.W;
      Mat<T> dh = dpool.replicate(n, 1) / static_cast<T>(n);
      for (std::size_t b = blocks_.size(); b-- > 0;) dh = blocks_[b].backward(c.blocks[b], dh);
      stem_.backward(c.stem, nn::gelu_backward<T>(c.stem_pre, dh), false);
    }
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    stem_.visit(prefix + ".stem", f);
    for (std::size_t b = 0; b < blocks_.size(); ++b) blocks_[b].visit(prefix + ".block" + std::to_string(b), f);
    fc_.visit(prefix + ".fc", f);
    head_.visit(prefix + ".head", f);
  }

 private:
  NetConfig cfg_;
  nn::Conv2d<T> stem_;
  std::vector<nn::ResidualBlock<T>> blocks_;
  nn::Linear<T> fc_;
  nn::Linear<T> head_;
};

/// Two-layer perceptron D -> hidden -> D_psi without biases; a single linear
/// map when hidden == 0.
template <typename T>
class ProjectionHead {
 public:
  struct Cache {
    Mat<T> z, hidden;
  };

  ProjectionHead() = default;
  ProjectionHead(int in, int hidden, int out) : two_layer_(hidden > 0) {
    if (two_layer_) {
      fc1_ = nn::Linear<T>(in, hidden, false);
      fc2_ = nn::Linear<T>(hidden, out, false);
    } else {
      fc1_ = nn::Linear<T>(in, out, false);
    }
  }

  void init(Rng& rng) {
    fc1_.init(rng);
    if (two_layer_) fc2_.init(rng);
  }

  Mat<T> forward(const Mat<T>& z, Cache* c = nullptr) const {
    Mat<T> h = fc1_.forward(z);
    if (!two_layer_) {
      if (c) c->z = z;
      return h;
    }
    Mat<T> y = fc2_.forward(nn::gelu<T>(h));
    if (c) {
      c->z = z;
      c->hidden = std::move(h);
    }
    return y;
  }

  /// Returns d loss / d z.
  Mat<T> backward(const Cache& c, const Mat<T>& dy) {
    if (!two_layer_) return fc1_.backward(c.z, dy);
    const Mat<T> da = fc2_.backward(nn::gelu<T>(c.hidden), dy);
    return fc1_.backward(c.z, nn::gelu_backward<T>(c.hidden, da));
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    fc1_.visit(prefix + ".fc1", f);
    if (two_layer_) fc2_.visit(prefix + ".fc2", f);
  }

  bool two_layer() const { return two_layer_; }

 private:
  nn::Linear<T> fc1_, fc2_;
  bool two_layer_ = true;
};

template <typename T, class Net>
void zero_grad(Net& net) {
  net.visit("", [](const std::string&, nn::Param<T>& p) { p.zero_grad(); });
}

/// Teachers, students, projection head and the frozen hypersphere center.
template <typename T>
struct ModelBundle {
  NetConfig config;
  PrimalNet<T> primal_teacher, primal_student;
  DualNet<T> dual_teacher, dual_student;
  ProjectionHead<T> psi;
  std::optional<RowVec<T>> center;

  ModelBundle() = default;
  explicit ModelBundle(const NetConfig& cfg)
      : config(cfg),
        primal_teacher(cfg),
        primal_student(cfg),
        dual_teacher(cfg),
        dual_student(cfg),
        psi(cfg.latent, cfg.psi_hidden, cfg.psi_out) {
    Rng rng(cfg.init_seed);
    Rng r1 = rng.fork(1), r2 = rng.fork(2), r3 = rng.fork(3), r4 = rng.fork(4), r5 = rng.fork(5);
    primal_teacher.init(r1);
    primal_student.init(r2);
    dual_teacher.init(r3);
    dual_student.init(r4);
    psi.init(r5);
  }

  const RowVec<T>& require_center() const {
    if (!center) throw Error(ErrorKind::usage, "hypersphere center is not initialized");
    return *center;
  }

  /// Visits every parameter with a network-qualified name.
  template <class F>
  void visit(F&& f) {
    primal_teacher.visit("pt", f);
    dual_teacher.visit("dt", f);
    primal_student.visit("ps", f);
    dual_student.visit("ds", f);
    psi.visit("psi", f);
  }
};

}  // namespace bts
