// SPDX-License-Identifier: Apache-2.0
#pragma once

// Six-round synthetic collection schedule and the glue that turns rounds into
// training / evaluation frame sets.
//
//   round  drift   derived from
//   1      -       base geometry
//   2      none    round 1
//   3      none    round 1
//   4      mild    round 1   (rain)
//   5      none    round 4
//   6      severe  round 4   (antenna orientation changed)

#include <bts/csi_sim.hpp>
#include <bts/dataset_io.hpp>
#include <bts/trainer.hpp>

#include <map>

namespace bts {

struct RoundSpec {
  int id = 1;
  DriftProfile drift = DriftProfile::none;
  int parent = 0;  // 0: base geometry
  std::string tag;
};

inline std::vector<RoundSpec> default_rounds() {
  return {{1, DriftProfile::none, 0, "sunny, reference layout"},
          {2, DriftProfile::none, 1, "sunny, same layout as round 1"},
          {3, DriftProfile::none, 1, "sunny, same layout as round 1"},
          {4, DriftProfile::mild, 1, "rain"},
          {5, DriftProfile::none, 4, "sunny, same layout as round 4"},
          {6, DriftProfile::severe, 4, "same layout as round 4, antennas turned"}};
}

struct GeneratorSpec {
  std::uint64_t seed = 7;
  std::size_t packets_per_case = 2000;
  GeometryOptions geometry;
  SessionJitter jitter;
  std::vector<RoundSpec> rounds = default_rounds();

  const RoundSpec& round(int id) const {
    for (const auto& r : rounds)
      if (r.id == id) return r;
    throw Error(ErrorKind::usage, "unknown round " + std::to_string(id));
  }
};

/// Channel scenario of every round, resolving parents recursively.
inline std::map<int, ChannelScenario> round_scenarios(const GeneratorSpec& g) {
  std::map<int, ChannelScenario> out;
  const ChannelScenario base = make_scenario(g.seed, g.geometry);
  std::function<const ChannelScenario&(int, int)> resolve = [&](int id, int depth) -> const ChannelScenario& {
    if (auto it = out.find(id); it != out.end()) return it->second;
    if (depth > static_cast<int>(g.rounds.size())) throw Error(ErrorKind::usage, "round parents form a cycle");
    const RoundSpec& r = g.round(id);
    const std::uint64_t round_seed = g.seed * 1000 + static_cast<std::uint64_t>(r.id);
    ChannelScenario sc;
    if (r.parent == 0) {
      sc = base;
      sc.seed = round_seed;
    } else {
      sc = apply_drift(resolve(r.parent, depth + 1), r.drift, round_seed, g.jitter, g.geometry);
    }
    return out.emplace(id, std::move(sc)).first->second;
  };
  for (const auto& r : g.rounds) resolve(r.id, 0);
  return out;
}

inline CsiDataset generate_round(const GeneratorSpec& g, int id) {
  const auto sc = round_scenarios(g).at(id);
  std::vector<CsiDataset> parts;
  for (int c = 1; c <= kNumCases; ++c) parts.push_back(simulate_round(sc, g.packets_per_case, c));
  CsiDataset ds = concat_cases(parts, id, g.round(id).tag);
  ds.seed = sc.seed;
  return ds;
}

inline std::map<int, CsiDataset> generate_rounds(const GeneratorSpec& g) {
  const auto scs = round_scenarios(g);
  std::map<int, CsiDataset> out;
  for (const auto& r : g.rounds) {
    std::vector<CsiDataset> parts;
    for (int c = 1; c <= kNumCases; ++c) parts.push_back(simulate_round(scs.at(r.id), g.packets_per_case, c));
    CsiDataset ds = concat_cases(parts, r.id, r.tag);
    ds.seed = scs.at(r.id).seed;
    out.emplace(r.id, std::move(ds));
  }
  return out;
}

/// A round after normalization. Frames handed out are views into `norm`, so a
/// PreparedRound must outlive every frame set built from it.
struct PreparedRound {
  CsiDataset raw;
  Array3<float> norm;
  PreprocessWarnings warnings;

  explicit PreparedRound(CsiDataset ds) : raw(std::move(ds)) {
    norm = pairwise_normalize<float>(raw.amplitudes, &warnings);
  }
  PreparedRound(const PreparedRound&) = delete;
  PreparedRound& operator=(const PreparedRound&) = delete;

  std::vector<Frame<float>> frames(std::size_t tau, std::size_t stride, Portion portion, Split split,
                                   double train_fraction = 0.8) {
    return window_round(norm, raw.segments, tau, stride, portion, train_fraction, split, raw.round_id, &warnings);
  }
};

struct SplitOptions {
  std::size_t tau = 50;
  std::size_t train_stride = 1;
  std::size_t eval_stride = 50;
  double train_fraction = 0.8;
};

/// Training portion of labeled rounds (labels kept).
inline FrameSet labeled_set(const std::vector<PreparedRound*>& rounds, const SplitOptions& o,
                            const DisarrayParams& prm) {
  std::vector<Frame<float>> all;
  for (auto* r : rounds) {
    auto f = r->frames(o.tau, o.train_stride, Portion::train, Split::labeled, o.train_fraction);
    all.insert(all.end(), f.begin(), f.end());
  }
  return FrameSet::from(std::move(all), prm);
}

/// Training portion of unlabeled rounds; labels are stripped.
inline FrameSet unlabeled_set(const std::vector<PreparedRound*>& rounds, const SplitOptions& o,
                              const DisarrayParams& prm) {
  std::vector<Frame<float>> all;
  for (auto* r : rounds) {
    auto f = r->frames(o.tau, o.train_stride, Portion::train, Split::unlabeled, o.train_fraction);
    for (auto& x : f) x.label.reset();
    all.insert(all.end(), f.begin(), f.end());
  }
  return FrameSet::from(std::move(all), prm);
}

/// Held-out evaluation frames of one round (labels kept for scoring).
inline std::vector<Frame<float>> heldout_frames(PreparedRound& r, const SplitOptions& o) {
  return r.frames(o.tau, o.eval_stride, Portion::heldout, Split::unlabeled, o.train_fraction);
}

}  // namespace bts
