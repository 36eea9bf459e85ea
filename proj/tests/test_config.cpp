#include "settings_cli.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <unistd.h>

namespace bts {
namespace {

struct Parsed {
  Settings s;
  CLI::App app{"test"};
  Parsed() {
    cli::bind_settings(app, s);
    app.fallthrough();
    app.add_subcommand("train", "");
  }
  void parse(std::vector<std::string> args) {
    std::reverse(args.begin(), args.end());  // CLI11 takes them back to front
    app.parse(args);
  }
};

std::string write_temp(const std::string& name, const std::string& text) {
  const auto p = std::filesystem::temp_directory_path() / (name + std::to_string(::getpid()) + ".cfg");
  std::ofstream(p) << text;
  return p.string();
}

TEST(Settings, DefaultsFollowHyperparameterTable) {
  const Settings s;
  EXPECT_EQ(s.tau, 50);
  EXPECT_EQ(s.eta, 10000.0);
  EXPECT_EQ(s.alpha, 1.0);
  EXPECT_EQ(s.beta, 1.0);
  EXPECT_EQ(s.lambda1, 0.1);
  EXPECT_EQ(s.lambda2, 2.0);
  EXPECT_EQ(s.lambda3, 1.0);
  EXPECT_EQ(s.lambda4, 0.5);
  EXPECT_EQ(s.dth, "50");
  EXPECT_EQ(s.window, 100);
  EXPECT_EQ(s.packets, 2000);
  EXPECT_NO_THROW(s.validate());
}

TEST(Settings, MapsOntoTrainConfig) {
  Settings s;
  s.lambda3 = 0.25;
  s.mode = "single_dual";
  s.confidence = false;
  s.dth = "7.5";
  const auto c = s.train_config();
  EXPECT_EQ(c.weights.lambda3, 0.25);
  EXPECT_EQ(c.mode, TrainMode::single_dual);
  EXPECT_FALSE(c.use_confidence);
  EXPECT_EQ(c.d_th, 7.5);
  EXPECT_EQ(c.net.tau, 50);
  EXPECT_EQ(s.split().eval_stride, 50u);
  EXPECT_EQ(s.generator().packets_per_case, 2000u);
}

TEST(Settings, Validation) {
  auto bad = [](auto edit) {
    Settings s;
    edit(s);
    EXPECT_THROW(s.validate(), Error);
  };
  bad([](Settings& s) { s.dth = "abc"; });
  bad([](Settings& s) { s.dth = "-1"; });
  bad([](Settings& s) { s.dth = "5x"; });
  bad([](Settings& s) { s.mode = "mpl"; });
  bad([](Settings& s) { s.rounds = {7}; });
  bad([](Settings& s) { s.rounds.clear(); });
  bad([](Settings& s) { s.iters = 0; });
  bad([](Settings& s) { s.lambda2 = -1; });
  bad([](Settings& s) { s.train_fraction = 1.0; });
  Settings ok;
  ok.dth = "auto";
  EXPECT_NO_THROW(ok.validate());
}

TEST(Settings, AutoThreshold) {
  Settings s;
  s.dth = "auto";
  EXPECT_DOUBLE_EQ(s.resolve_dth({0.5, 2.0, 1.0}), 4.0);
  EXPECT_THROW(s.resolve_dth({}), Error);
  s.dth = "50";
  EXPECT_DOUBLE_EQ(s.resolve_dth({}), 50.0);
}

TEST(ConfigFile, EveryKeyHasAFlag) {
  Parsed p;
  const auto keys = p.s.to_json();
  for (const auto& [k, v] : keys.items()) EXPECT_NO_THROW(p.app.get_option("--" + k)) << k;
}

TEST(ConfigFile, ValuesAreReadAndFlagsWin) {
  const auto path = write_temp("bts_cfg_", "# desk run\nseed = 9\nlambda3 = 0.01\nrounds = [1, 4]\ndth = auto\n"
                                           "confidence = false\niters = 12\n");
  Parsed p;
  p.parse({"--config", path, "train", "--iters", "30", "--rounds", "2,3"});
  std::filesystem::remove(path);
  EXPECT_EQ(p.s.seed, 9u);
  EXPECT_EQ(p.s.lambda3, 0.01);
  EXPECT_EQ(p.s.dth, "auto");
  EXPECT_FALSE(p.s.confidence);
  EXPECT_EQ(p.s.iters, 30);
  EXPECT_EQ(p.s.rounds, (std::vector<int>{2, 3}));
}

TEST(ConfigFile, TextRoundTrip) {
  Settings a;
  a.seed = 77;
  a.lambda4 = 0.05;
  a.rounds = {1, 2, 6};
  a.mode = "supervised";
  a.dth = "auto";
  const auto path = write_temp("bts_rt_", a.to_config_text());
  Parsed p;
  p.parse({"--config", path});
  std::filesystem::remove(path);
  EXPECT_EQ(p.s, a);
}

TEST(ConfigFile, UnknownKeyAndBadValueAreRejected) {
  const auto unknown = write_temp("bts_unk_", "lambda5 = 1\n");
  Parsed a;
  EXPECT_THROW(a.parse({"--config", unknown}), CLI::ParseError);
  std::filesystem::remove(unknown);

  const auto badval = write_temp("bts_bad_", "tau = fifty\n");
  Parsed b;
  EXPECT_THROW(b.parse({"--config", badval}), CLI::ParseError);
  std::filesystem::remove(badval);

  Parsed c;
  EXPECT_THROW(c.parse({"--config", "/nonexistent/bts.cfg"}), CLI::ParseError);
}

}  // namespace
}  // namespace bts
