// SPDX-License-Identifier: Apache-2.0
#pragma once

// Flat run settings shared by the command-line tool and config files. Every
// field is one config key and one flag of the same name.

#include <bts/experiment.hpp>

#include <nlohmann/json.hpp>

namespace bts {

inline TrainMode mode_from_string(const std::string& s) {
  for (auto m : {TrainMode::bts, TrainMode::supervised, TrainMode::single_primal, TrainMode::single_dual})
    if (s == to_string(m)) return m;
  throw Error(ErrorKind::usage, "unknown mode '" + s + "'");
}

struct Settings {
  std::uint64_t seed = 1;
  int tau = 50;
  double eta = 10000.0;
  double alpha = 1.0;
  double beta = 1.0;
  double lambda1 = 0.1;
  double lambda2 = 2.0;
  double lambda3 = 1.0;
  double lambda4 = 0.5;
  std::string dth = "50";  // number, or "auto": twice the largest training distance
  int window = 100;
  int iters = 400;
  int batch = 32;
  double lr = 1e-3;
  int packets = 2000;
  std::vector<int> rounds{1, 2, 3, 4, 5, 6};
  int train_stride = 1;
  int eval_stride = 50;
  double train_fraction = 0.8;
  bool confidence = true;
  std::string mode = "bts";

  void validate() const {
    if (tau < 1) throw Error(ErrorKind::usage, "tau must be >= 1");
    if (window < 1) throw Error(ErrorKind::usage, "window must be >= 1");
    if (packets < 1) throw Error(ErrorKind::usage, "packets must be >= 1");
    if (train_stride < 1 || eval_stride < 1) throw Error(ErrorKind::usage, "strides must be >= 1");
    if (!(train_fraction > 0 && train_fraction < 1)) throw Error(ErrorKind::usage, "train_fraction must be in (0, 1)");
    if (rounds.empty()) throw Error(ErrorKind::usage, "rounds must not be empty");
    for (int r : rounds)
      if (r < 1 || r > 6) throw Error(ErrorKind::usage, "rounds must be in 1..6");
    mode_from_string(mode);
    if (dth != "auto") {
      std::size_t used = 0;
      double v = 0;
      try {
        v = std::stod(dth, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != dth.size() || !(v > 0)) throw Error(ErrorKind::usage, "dth must be a positive number or 'auto'");
    }
    train_config().validate();
  }

  DisarrayParams disarray() const { return {alpha, beta, 1e-12}; }

  NetConfig net() const {
    NetConfig n;
    n.tau = tau;
    n.eta = eta;
    return n;
  }

  TrainConfig train_config() const {
    TrainConfig c;
    c.iterations = iters;
    c.batch = batch;
    c.lr_teacher = c.lr_student = c.lr_psi = lr;
    c.weights = {lambda1, lambda2, lambda3, lambda4};
    c.disarray = disarray();
    c.d_th = dth == "auto" ? 50.0 : std::stod(dth);
    c.seed = seed;
    c.net = net();
    c.mode = mode_from_string(mode);
    c.use_confidence = confidence;
    return c;
  }

  SplitOptions split() const {
    return {static_cast<std::size_t>(tau), static_cast<std::size_t>(train_stride),
            static_cast<std::size_t>(eval_stride), train_fraction};
  }

  GeneratorSpec generator() const {
    GeneratorSpec g;
    g.seed = seed;
    g.packets_per_case = static_cast<std::size_t>(packets);
    return g;
  }

  /// Threshold to use given the distances seen on the training stream.
  double resolve_dth(const std::vector<double>& training_distances) const {
    if (dth != "auto") return std::stod(dth);
    if (training_distances.empty()) throw Error(ErrorKind::data, "dth=auto needs training distances in the model");
    return 2.0 * *std::max_element(training_distances.begin(), training_distances.end());
  }

  nlohmann::json to_json() const {
    return {{"seed", seed},       {"tau", tau},
            {"eta", eta},         {"alpha", alpha},
            {"beta", beta},       {"lambda1", lambda1},
            {"lambda2", lambda2}, {"lambda3", lambda3},
            {"lambda4", lambda4}, {"dth", dth},
            {"window", window},   {"iters", iters},
            {"batch", batch},     {"lr", lr},
            {"packets", packets}, {"rounds", rounds},
            {"train_stride", train_stride}, {"eval_stride", eval_stride},
            {"train_fraction", train_fraction}, {"confidence", confidence},
            {"mode", mode}};
  }

  /// Flat `key = value` text that reads back to the same settings.
  std::string to_config_text() const {
    std::string out;
    const nlohmann::json j = to_json();
    for (const auto& [k, v] : j.items()) out += k + " = " + (v.is_string() ? v.get<std::string>() : v.dump()) + "\n";
    return out;
  }

  bool operator==(const Settings&) const = default;
};

}  // namespace bts
