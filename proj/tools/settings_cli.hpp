// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binds bts::Settings to CLI11 options. The same names are accepted as keys of
// the --config file; values given on the command line take precedence.

#include <bts/settings.hpp>

#include "CLI11.hpp"

namespace bts::cli {

inline void bind_settings(CLI::App& app, Settings& s) {
  app.set_config("--config", "", "flat key = value settings file");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.add_option("--seed", s.seed, "random seed")->capture_default_str();
  app.add_option("--tau", s.tau, "window length in packets")->capture_default_str();
  app.add_option("--eta", s.eta, "diversity constant")->capture_default_str();
  app.add_option("--alpha", s.alpha, "indicator fine-step")->capture_default_str();
  app.add_option("--beta", s.beta, "indicator fine-order")->capture_default_str();
  app.add_option("--lambda1", s.lambda1, "weight of the labeled confidence loss")->capture_default_str();
  app.add_option("--lambda2", s.lambda2, "weight of the feedback-scaled pseudo-label loss")->capture_default_str();
  app.add_option("--lambda3", s.lambda3, "weight of the primal/dual agreement loss")->capture_default_str();
  app.add_option("--lambda4", s.lambda4, "weight of the hypersphere loss")->capture_default_str();
  app.add_option("--dth", s.dth, "drift threshold, or 'auto'")->capture_default_str();
  app.add_option("--window", s.window, "drift verdict window in frames")->capture_default_str();
  app.add_option("--iters", s.iters, "training iterations")->capture_default_str();
  app.add_option("--batch", s.batch, "batch size")->capture_default_str();
  app.add_option("--lr", s.lr, "Adam learning rate")->capture_default_str();
  app.add_option("--packets", s.packets, "packets per case per round")->capture_default_str();
  app.add_option("--rounds", s.rounds, "rounds to generate")->delimiter(',')->capture_default_str();
  app.add_option("--train_stride", s.train_stride, "window stride on training data")->capture_default_str();
  app.add_option("--eval_stride", s.eval_stride, "window stride on held-out data")->capture_default_str();
  app.add_option("--train_fraction", s.train_fraction, "leading share of each case used for training")
      ->capture_default_str();
  app.add_option("--confidence", s.confidence, "use confidence distributions")->capture_default_str();
  app.add_option("--mode", s.mode, "bts | supervised | single_primal | single_dual")->capture_default_str();
}

}  // namespace bts::cli
