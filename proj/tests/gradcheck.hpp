#pragma once

// Finite-difference checks of every trained quantity against the analytic
// backward passes, in double precision on a tiny network.

#include <bts/losses.hpp>
#include <bts/nets.hpp>

#include <functional>
#include <string>
#include <vector>

namespace bts::test {

struct GradReport {
  std::string name;
  int probes = 0;
  double max_rel = 0.0;
};

inline NetConfig tiny_config() {
  NetConfig c;
  c.tau = 6;
  c.S = 4;
  c.K = 2;
  c.eta = 100.0;
  c.primal = {8, 2, 16, 2};
  c.latent = 8;
  c.dual = {4, 2, 1};
  c.psi_hidden = 8;
  c.psi_out = 4;
  c.init_seed = 5;
  return c;
}

struct GradFixture {
  NetConfig cfg = tiny_config();
  ModelBundle<double> b{cfg};
  std::vector<Array3<double>> store;
  std::vector<Frame<double>> frames;
  std::vector<int> labels;
  std::vector<Confidence> xi;
  Mat<double> pseudo;
  RowVec<double> center;

  explicit GradFixture(std::uint64_t seed = 1, std::size_t batch = 3) {
    Rng rng(seed);
    for (std::size_t i = 0; i < batch; ++i) {
      Array3<double> a(static_cast<std::size_t>(cfg.tau), static_cast<std::size_t>(cfg.S),
                       static_cast<std::size_t>(cfg.K));
      for (auto& v : a.data) v = rng.uniform();
      store.push_back(std::move(a));
      labels.push_back(1 + static_cast<int>(rng.index(4)));
      Confidence x{};
      for (auto& v : x) v = rng.uniform(-1, 1);
      xi.push_back(x);
    }
    for (const auto& a : store) frames.push_back(frame_of(a));
    pseudo = Mat<double>(static_cast<Eigen::Index>(batch), cfg.classes);
    for (Eigen::Index i = 0; i < pseudo.size(); ++i) pseudo.data()[i] = rng.uniform();
    pseudo = nn::softmax_rows<double>(pseudo);
    center = RowVec<double>(cfg.psi_out);
    for (Eigen::Index i = 0; i < center.size(); ++i) center(i) = rng.normal() * 0.3;
  }
};

inline Mat<double> random_mat(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-1, 1);
  return m;
}

inline double probe_rel(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Compares the gradients `fill` leaves in the visited parameters with
/// central differences of `loss`, at `probes` random coordinates.
template <class Visit>
GradReport check_params(const std::string& name, Visit&& visit, const std::function<double()>& loss,
                        const std::function<void()>& fill, int probes, Rng& rng, double h = 1e-6) {
  std::vector<nn::Param<double>*> params;
  visit([&](const std::string&, nn::Param<double>& p) {
    p.zero_grad();
    params.push_back(&p);
  });
  fill();
  std::size_t total = 0;
  for (auto* p : params) total += static_cast<std::size_t>(p->w.size());
  GradReport r{name, 0, 0.0};
  for (int i = 0; i < probes; ++i) {
    std::size_t at = rng.index(total);
    nn::Param<double>* p = nullptr;
    for (auto* q : params) {
      if (at < static_cast<std::size_t>(q->w.size())) {
        p = q;
        break;
      }
      at -= static_cast<std::size_t>(q->w.size());
    }
    double& x = p->w.data()[at];
    const double keep = x;
    x = keep + h;
    const double fp = loss();
    x = keep - h;
    const double fm = loss();
    x = keep;
    const double numeric = (fp - fm) / (2 * h);
    r.max_rel = std::max(r.max_rel, probe_rel(p->g.data()[at], numeric));
    ++r.probes;
  }
  return r;
}

inline std::vector<GradReport> run_gradchecks(int probes = 24, std::uint64_t seed = 3) {
  std::vector<GradReport> out;
  GradFixture fx(seed);
  auto& b = fx.b;
  Rng rng(seed * 7 + 1);
  auto visit_pt = [&](auto&& f) { b.primal_teacher.visit("pt", f); };
  auto visit_dt = [&](auto&& f) { b.dual_teacher.visit("dt", f); };
  auto visit_ps = [&](auto&& f) { b.primal_student.visit("ps", f); };
  auto visit_proj = [&](auto&& f) {
    b.primal_teacher.visit("pt", f);
    b.dual_teacher.visit("dt", f);
    b.psi.visit("psi", f);
  };
  auto visit_ptpsi = [&](auto&& f) {
    b.primal_teacher.visit("pt", f);
    b.psi.visit("psi", f);
  };

  // TCE through the primal teacher.
  out.push_back(check_params(
      "tce", visit_pt, [&] { return tce<double>(b.primal_teacher.forward(fx.frames).probs, fx.labels, fx.xi).value; },
      [&] {
        std::vector<PrimalNet<double>::Cache> c;
        const auto o = b.primal_teacher.forward(fx.frames, &c);
        const auto l = tce<double>(o.probs, fx.labels, fx.xi);
        b.primal_teacher.backward(c, Mat<double>(), nn::softmax_backward<double>(o.probs, l.grad));
      },
      probes, rng));

  // TCE through the dual teacher.
  out.push_back(check_params(
      "tce_dual", visit_dt, [&] { return tce<double>(b.dual_teacher.forward(fx.frames).probs, fx.labels, fx.xi).value; },
      [&] {
        std::vector<DualNet<double>::Cache> c;
        const auto o = b.dual_teacher.forward(fx.frames, &c);
        const auto l = tce<double>(o.probs, fx.labels, fx.xi);
        b.dual_teacher.backward(c, Mat<double>(), nn::softmax_backward<double>(o.probs, l.grad));
      },
      probes, rng));

  // Student UICE.
  out.push_back(check_params(
      "uice_student", visit_ps,
      [&] { return uice_student<double>(b.primal_student.forward(fx.frames).probs, fx.pseudo, fx.xi).value; },
      [&] {
        std::vector<PrimalNet<double>::Cache> c;
        const auto o = b.primal_student.forward(fx.frames, &c);
        const auto l = uice_student<double>(o.probs, fx.pseudo, fx.xi);
        b.primal_student.backward(c, Mat<double>(), nn::softmax_backward<double>(o.probs, l.grad));
      },
      probes, rng));

  // Teacher UICE with a nonzero feedback weight.
  const double f = 0.37;
  out.push_back(check_params(
      "uice_teacher", visit_pt,
      [&] { return uice_teacher<double>(b.primal_teacher.forward(fx.frames).probs, fx.pseudo, fx.xi, f).value; },
      [&] {
        std::vector<PrimalNet<double>::Cache> c;
        const auto o = b.primal_teacher.forward(fx.frames, &c);
        const auto l = uice_teacher<double>(o.probs, fx.pseudo, fx.xi, f);
        b.primal_teacher.backward(c, Mat<double>(), nn::softmax_backward<double>(o.probs, l.grad));
      },
      probes, rng));

  // CTQ couples both teachers through the shared head.
  out.push_back(check_params(
      "ctq", visit_proj,
      [&] {
        return ctq<double>(b.psi.forward(b.primal_teacher.forward(fx.frames).z),
                           b.psi.forward(b.dual_teacher.forward(fx.frames).z))
            .value;
      },
      [&] {
        std::vector<PrimalNet<double>::Cache> cp;
        std::vector<DualNet<double>::Cache> cd;
        const auto op = b.primal_teacher.forward(fx.frames, &cp);
        const auto od = b.dual_teacher.forward(fx.frames, &cd);
        ProjectionHead<double>::Cache hp, hd;
        const auto pp = b.psi.forward(op.z, &hp);
        const auto pd = b.psi.forward(od.z, &hd);
        const auto l = ctq<double>(pp, pd);
        b.primal_teacher.backward(cp, b.psi.backward(hp, l.grad), Mat<double>());
        b.dual_teacher.backward(cd, b.psi.backward(hd, Mat<double>(-l.grad)), Mat<double>());
      },
      probes, rng));

  out.push_back(check_params(
      "ctve", visit_ptpsi,
      [&] { return ctve<double>(b.psi.forward(b.primal_teacher.forward(fx.frames).z), fx.center).value; },
      [&] {
        std::vector<PrimalNet<double>::Cache> cp;
        const auto op = b.primal_teacher.forward(fx.frames, &cp);
        ProjectionHead<double>::Cache hp;
        const auto l = ctve<double>(b.psi.forward(op.z, &hp), fx.center);
        b.primal_teacher.backward(cp, b.psi.backward(hp, l.grad), Mat<double>());
      },
      probes, rng));

  // Raw network outputs: a fixed random functional of (z, probs).
  const Mat<double> wz = random_mat(static_cast<Eigen::Index>(fx.frames.size()), fx.cfg.latent, rng);
  const Mat<double> wp = random_mat(static_cast<Eigen::Index>(fx.frames.size()), fx.cfg.classes, rng);
  auto functional = [&](const EncoderOutput<double>& o) { return (o.z.cwiseProduct(wz)).sum() + (o.probs.cwiseProduct(wp)).sum(); };
  out.push_back(check_params(
      "primal_forward", visit_pt, [&] { return functional(b.primal_teacher.forward(fx.frames)); },
      [&] {
        std::vector<PrimalNet<double>::Cache> c;
        const auto o = b.primal_teacher.forward(fx.frames, &c);
        b.primal_teacher.backward(c, wz, nn::softmax_backward<double>(o.probs, wp));
      },
      probes, rng));
  out.push_back(check_params(
      "dual_forward", visit_dt, [&] { return functional(b.dual_teacher.forward(fx.frames)); },
      [&] {
        std::vector<DualNet<double>::Cache> c;
        const auto o = b.dual_teacher.forward(fx.frames, &c);
        b.dual_teacher.backward(c, wz, nn::softmax_backward<double>(o.probs, wp));
      },
      probes, rng));

  // Projection head Jacobian, parameters and input.
  Mat<double> z = random_mat(4, fx.cfg.latent, rng);
  const Mat<double> wy = random_mat(4, fx.cfg.psi_out, rng);
  Mat<double> dz;
  out.push_back(check_params(
      "projection", [&](auto&& f) { b.psi.visit("psi", f); },
      [&] { return b.psi.forward(z).cwiseProduct(wy).sum(); },
      [&] {
        ProjectionHead<double>::Cache c;
        b.psi.forward(z, &c);
        dz = b.psi.backward(c, wy);
      },
      probes, rng));
  GradReport zin{"projection_input", 0, 0.0};
  for (int i = 0; i < probes; ++i) {
    const auto at = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(z.size())));
    double& x = z.data()[at];
    const double keep = x;
    x = keep + 1e-6;
    const double fp = b.psi.forward(z).cwiseProduct(wy).sum();
    x = keep - 1e-6;
    const double fm = b.psi.forward(z).cwiseProduct(wy).sum();
    x = keep;
    zin.max_rel = std::max(zin.max_rel, probe_rel(dz.data()[at], (fp - fm) / 2e-6));
    ++zin.probes;
  }
  out.push_back(zin);
  return out;
}

}  // namespace bts::test
