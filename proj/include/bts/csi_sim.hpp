// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic two-room MIMO-OFDM CSI generator.
//
// Empty-room channel per antenna pair k and subcarrier s is a static multipath
// sum  H(s,k) = sum_l g_{l,k} exp(-j 2 pi f_s tau_{l,k}).  A person in room r
// adds one reflected path whose carrier phase follows a random walk (body
// motion) and whose gain follows a smooth AR(1) process. Only |H + w| is kept.

#include <bts/common.hpp>

#include <array>
#include <complex>
#include <cstdio>
#include <string>
#include <vector>

namespace bts {

enum class DriftProfile { none, mild, severe };

inline const char* to_string(DriftProfile p) {
  switch (p) {
    case DriftProfile::none: return "none";
    case DriftProfile::mild: return "mild";
    case DriftProfile::severe: return "severe";
  }
  return "none";
}

inline DriftProfile parse_drift_profile(const std::string& s) {
  if (s == "none") return DriftProfile::none;
  if (s == "mild") return DriftProfile::mild;
  if (s == "severe") return DriftProfile::severe;
  throw Error(ErrorKind::usage, "unknown drift profile '" + s + "'");
}

/// Rooms occupied in each case: {room A, room B}.
inline std::array<bool, 2> rooms_for_case(int c) {
  check_case(c);
  return {c == 2 || c == 4, c == 3 || c == 4};
}

/// Person-induced reflection for one room.
struct RoomPath {
  std::vector<double> delays;   // seconds, one per antenna pair
  std::vector<double> phases;   // radians, one per antenna pair
  double gain = 1.0;            // relative to dynamic_gain_scale
  double phase_step_std = 0.6;  // rad per packet, carrier-phase random walk
  double gain_ar = 0.9;         // AR(1) coefficient of the gain wobble
  double gain_wobble = 0.25;    // relative std of the gain wobble
};

struct ChannelScenario {
  std::size_t num_paths = 6;
  std::size_t num_subcarriers = 56;  // S
  std::size_t num_pairs = 4;         // K
  double sample_rate = 10.0;         // packets per second
  double subcarrier_spacing_hz = 312.5e3;
  // static_gains[k][l], static_delays[k][l]
  std::vector<std::vector<std::complex<double>>> static_gains;
  std::vector<std::vector<double>> static_delays;
  std::array<RoomPath, 2> rooms;
  double dynamic_gain_scale = 0.5;
  DriftProfile drift_profile = DriftProfile::none;
  double noise_std = 0.01;
  double agc_jitter = 0.0;  // relative per-packet gain error, removed by normalization
  std::uint64_t seed = 1;

  void validate() const {
    if (num_paths < 1) throw Error(ErrorKind::usage, "num_paths must be >= 1");
    if (noise_std < 0) throw Error(ErrorKind::usage, "noise_std must be >= 0");
    if (dynamic_gain_scale < 0) throw Error(ErrorKind::usage, "dynamic_gain_scale must be >= 0");
    if (num_subcarriers < 1 || num_pairs < 1)
      throw Error(ErrorKind::usage, "S and K must be >= 1");
    if (static_gains.size() != num_pairs || static_delays.size() != num_pairs)
      throw Error(ErrorKind::usage, "static path tables must have one row per antenna pair");
    for (std::size_t k = 0; k < num_pairs; ++k) {
      if (static_gains[k].size() != num_paths || static_delays[k].size() != num_paths)
        throw Error(ErrorKind::usage, "static path tables must have num_paths entries");
    }
    for (const auto& r : rooms) {
      if (r.delays.size() != num_pairs || r.phases.size() != num_pairs)
        throw Error(ErrorKind::usage, "room path tables must have one entry per antenna pair");
    }
  }
};

struct GeometryOptions {
  std::size_t num_paths = 6;
  std::size_t num_subcarriers = 56;
  std::size_t num_pairs = 4;
  double max_static_delay = 250e-9;
  double delay_decay = 60e-9;  // power-delay profile time constant
  double dynamic_gain_scale = 0.64;
  double noise_std = 0.03;
  // Room A holds the transmitter: short, strong reflection. Room B is behind
  // the storage wall: longer, weaker, slower-moving reflection.
  std::array<double, 2> room_delay_lo{20e-9, 110e-9};
  std::array<double, 2> room_delay_hi{60e-9, 170e-9};
  std::array<double, 2> room_gain{1.4, 0.28};
  std::array<double, 2> room_phase_step{1.92, 0.35};
  std::array<double, 2> room_gain_wobble{0.11, 0.11};
};

namespace detail {

inline void draw_static_paths(ChannelScenario& sc, const GeometryOptions& opt, Rng& rng) {
  sc.static_gains.assign(sc.num_pairs, {});
  sc.static_delays.assign(sc.num_pairs, {});
  for (std::size_t k = 0; k < sc.num_pairs; ++k) {
    double power = 0.0;
    for (std::size_t l = 0; l < sc.num_paths; ++l) {
      const double tau = (l == 0) ? rng.uniform(0.0, 20e-9) : rng.uniform(0.0, opt.max_static_delay);
      const double amp = std::exp(-tau / (2.0 * opt.delay_decay)) * std::sqrt(-std::log(1.0 - rng.uniform() * 0.999));
      const double ph = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      sc.static_delays[k].push_back(tau);
      sc.static_gains[k].push_back(std::polar(amp, ph));
      power += amp * amp;
    }
    const double norm = 1.0 / std::sqrt(power);
    for (auto& g : sc.static_gains[k]) g *= norm;
  }
}

inline void draw_room_paths(ChannelScenario& sc, const GeometryOptions& opt, Rng& rng) {
  for (std::size_t r = 0; r < 2; ++r) {
    RoomPath& rp = sc.rooms[r];
    rp.delays.clear();
    rp.phases.clear();
    for (std::size_t k = 0; k < sc.num_pairs; ++k) {
      rp.delays.push_back(rng.uniform(opt.room_delay_lo[r], opt.room_delay_hi[r]));
      rp.phases.push_back(rng.uniform(0.0, 2.0 * 3.14159265358979323846));
    }
    rp.gain = opt.room_gain[r];
    rp.phase_step_std = opt.room_phase_step[r];
    rp.gain_wobble = opt.room_gain_wobble[r];
  }
}

}  // namespace detail

/// Draws a fresh room geometry from `geometry_seed`.
inline ChannelScenario make_scenario(std::uint64_t geometry_seed, const GeometryOptions& opt = {}) {
  ChannelScenario sc;
  sc.num_paths = opt.num_paths;
  sc.num_subcarriers = opt.num_subcarriers;
  sc.num_pairs = opt.num_pairs;
  sc.dynamic_gain_scale = opt.dynamic_gain_scale;
  sc.noise_std = opt.noise_std;
  sc.seed = geometry_seed;
  Rng rng(geometry_seed);
  detail::draw_static_paths(sc, opt, rng);
  detail::draw_room_paths(sc, opt, rng);
  sc.validate();
  return sc;
}

/// Per-session variation that exists between any two collection rounds even
/// without an environmental change (furniture nudged, people standing in
/// slightly different places).
struct SessionJitter {
  double gain_rel_std = 0.2;
  double delay_std = 6e-9;
  double room_delay_std = 4e-9;
  double room_gain_rel_std = 0.1;
};

/// Returns a copy of `base` perturbed for a new round.
///   none   - session jitter only
///   mild   - static gains scaled by U[0.8, 1.2] per path, plus jitter
///   severe - all static and reflection delays resampled
inline ChannelScenario apply_drift(const ChannelScenario& base, DriftProfile profile, std::uint64_t seed,
                                   const SessionJitter& jitter = {}, const GeometryOptions& opt = {}) {
  ChannelScenario sc = base;
  sc.drift_profile = profile;
  sc.seed = seed;
  Rng rng(seed ^ 0x5EED0000ULL);
  if (profile == DriftProfile::severe) {
    for (std::size_t k = 0; k < sc.num_pairs; ++k) {
      for (std::size_t l = 0; l < sc.num_paths; ++l) {
        sc.static_delays[k][l] = (l == 0) ? rng.uniform(0.0, 20e-9) : rng.uniform(0.0, opt.max_static_delay);
        const double ph = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        sc.static_gains[k][l] = std::polar(std::abs(sc.static_gains[k][l]), ph);
      }
    }
    for (std::size_t r = 0; r < 2; ++r) {
      for (std::size_t k = 0; k < sc.num_pairs; ++k) {
        sc.rooms[r].delays[k] = rng.uniform(opt.room_delay_lo[r], opt.room_delay_hi[r]);
        sc.rooms[r].phases[k] = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
      }
    }
    return sc;
  }
  if (profile == DriftProfile::mild) {
    for (auto& row : sc.static_gains)
      for (auto& g : row) g *= rng.uniform(0.8, 1.2);
  }
  for (std::size_t k = 0; k < sc.num_pairs; ++k) {
    for (std::size_t l = 0; l < sc.num_paths; ++l) {
      const std::complex<double> eps(rng.normal() * jitter.gain_rel_std, rng.normal() * jitter.gain_rel_std);
      sc.static_gains[k][l] *= (1.0 + eps);
      sc.static_delays[k][l] = std::max(0.0, sc.static_delays[k][l] + rng.normal() * jitter.delay_std);
    }
  }
  for (auto& room : sc.rooms) {
    for (auto& d : room.delays) d = std::max(0.0, d + rng.normal() * jitter.room_delay_std);
    room.gain *= std::max(0.2, 1.0 + rng.normal() * jitter.room_gain_rel_std);
  }
  return sc;
}

/// Contiguous run of packets sharing one case label.
struct Segment {
  std::size_t start = 0;
  std::size_t length = 0;
  int label = 1;
  bool operator==(const Segment&) const = default;
};

struct CsiDataset {
  Array3<float> amplitudes;  // (T, S, K), linear magnitude
  std::vector<Segment> segments;
  int round_id = 0;
  double sample_rate = 10.0;
  std::string environment_tag;
  std::uint64_t seed = 0;
  bool labeled = true;  // false: labels kept for evaluation only
  bool checksum_ok = true;  // set by read_dataset

  std::size_t T() const { return amplitudes.d0; }
  std::size_t S() const { return amplitudes.d1; }
  std::size_t K() const { return amplitudes.d2; }
  int label_at(std::size_t t) const {
    for (const auto& seg : segments)
      if (t >= seg.start && t < seg.start + seg.length) return seg.label;
    return 0;
  }
};

/// Generates T packets of amplitude CSI for one case.
inline CsiDataset simulate_round(const ChannelScenario& sc, std::size_t T, int c) {
  check_case(c);
  sc.validate();
  if (T < 1) throw Error(ErrorKind::usage, "T must be >= 1");
  const std::size_t S = sc.num_subcarriers, K = sc.num_pairs;
  constexpr double kTwoPi = 2.0 * 3.14159265358979323846;

  std::vector<double> freq(S);
  for (std::size_t s = 0; s < S; ++s)
    freq[s] = (static_cast<double>(s) - 0.5 * static_cast<double>(S - 1)) * sc.subcarrier_spacing_hz;

  // Static response is time invariant.
  std::vector<std::complex<double>> h_static(S * K);
  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t k = 0; k < K; ++k) {
      std::complex<double> h{0.0, 0.0};
      for (std::size_t l = 0; l < sc.num_paths; ++l)
        h += sc.static_gains[k][l] * std::polar(1.0, -kTwoPi * freq[s] * sc.static_delays[k][l]);
      h_static[s * K + k] = h;
    }

  // Per-room frequency signature exp(-j 2 pi f_s tau_{r,k} + j phi_{r,k}).
  const auto occupied = rooms_for_case(c);
  std::array<std::vector<std::complex<double>>, 2> room_sig;
  for (std::size_t r = 0; r < 2; ++r) {
    room_sig[r].resize(S * K);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t k = 0; k < K; ++k)
        room_sig[r][s * K + k] =
            std::polar(1.0, -kTwoPi * freq[s] * sc.rooms[r].delays[k] + sc.rooms[r].phases[k]);
  }

  Rng rng = Rng(sc.seed).fork(0xC5100000ULL + static_cast<std::uint64_t>(c));
  std::array<double, 2> phase{rng.uniform(0.0, kTwoPi), rng.uniform(0.0, kTwoPi)};
  std::array<double, 2> wobble{0.0, 0.0};

  CsiDataset ds;
  ds.amplitudes = Array3<float>(T, S, K);
  ds.segments.push_back({0, T, c});
  ds.sample_rate = sc.sample_rate;
  ds.seed = sc.seed;
  const double nstd = sc.noise_std / std::sqrt(2.0);

  for (std::size_t t = 0; t < T; ++t) {
    std::array<std::complex<double>, 2> dyn{};
    for (std::size_t r = 0; r < 2; ++r) {
      const RoomPath& rp = sc.rooms[r];
      // Draws happen regardless of occupancy so the noise stream is aligned
      // across cases.
      const double dphi = rng.normal() * rp.phase_step_std;
      const double dw = rng.normal();
      phase[r] += dphi;
      wobble[r] = rp.gain_ar * wobble[r] + std::sqrt(1.0 - rp.gain_ar * rp.gain_ar) * dw;
      if (occupied[r]) {
        const double a = sc.dynamic_gain_scale * rp.gain * std::max(0.0, 1.0 + rp.gain_wobble * wobble[r]);
        dyn[r] = std::polar(a, phase[r]);
      }
    }
    const double agc = 1.0 + sc.agc_jitter * (2.0 * rng.uniform() - 1.0);
    for (std::size_t s = 0; s < S; ++s)
      for (std::size_t k = 0; k < K; ++k) {
        std::complex<double> h = h_static[s * K + k];
        for (std::size_t r = 0; r < 2; ++r)
          if (occupied[r]) h += dyn[r] * room_sig[r][s * K + k];
        const std::complex<double> w(rng.normal() * nstd, rng.normal() * nstd);
        ds.amplitudes(t, s, k) = static_cast<float>(agc * std::abs(h + w));
      }
  }
  return ds;
}

/// Concatenates per-case recordings into one round.
inline CsiDataset concat_cases(const std::vector<CsiDataset>& parts, int round_id, std::string tag) {
  if (parts.empty()) throw Error(ErrorKind::usage, "no case recordings to concatenate");
  const std::size_t S = parts[0].S(), K = parts[0].K();
  std::size_t T = 0;
  for (const auto& p : parts) {
    if (p.S() != S || p.K() != K) throw Error(ErrorKind::data, "case recordings differ in S or K");
    T += p.T();
  }
  CsiDataset out;
  out.amplitudes = Array3<float>(T, S, K);
  out.round_id = round_id;
  out.sample_rate = parts[0].sample_rate;
  out.environment_tag = std::move(tag);
  out.seed = parts[0].seed;
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.amplitudes.data.begin(), p.amplitudes.data.end(),
              out.amplitudes.data.begin() + static_cast<std::ptrdiff_t>(off * S * K));
    for (const auto& seg : p.segments) out.segments.push_back({seg.start + off, seg.length, seg.label});
    off += p.T();
  }
  return out;
}

}  // namespace bts
