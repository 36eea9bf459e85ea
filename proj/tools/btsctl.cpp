// SPDX-License-Identifier: Apache-2.0
//
// btsctl: generate synthetic rounds, train, predict, monitor drift, inspect
// indicators and run the baseline comparison. Results go to stdout as JSON;
// diagnostics go to stderr.
//
// Exit status: 0 ok, 1 usage, 2 data, 3 numerical.

#include "settings_cli.hpp"

#include <bts/checkpoint.hpp>
#include <bts/experiment.hpp>
#include <bts/settings.hpp>

#include <fstream>
#include <iostream>
#include <memory>

namespace {

using namespace bts;
using nlohmann::json;

constexpr int kSchemaVersion = 1;

json envelope(const std::string& command) { return {{"schema_version", kSchemaVersion}, {"command", command}}; }

void emit(const json& j, const std::string& file = {}) {
  std::cout << j.dump(2) << "\n";
  if (file.empty()) return;
  std::ofstream out(file);
  if (!out) throw Error(ErrorKind::data, "cannot write " + file);
  out << j.dump(2) << "\n";
}

void check_target(const std::filesystem::path& p, bool force) {
  if (std::filesystem::exists(p) && !force)
    throw Error(ErrorKind::usage, p.string() + " already exists; pass --force to overwrite");
}

Portion portion_from(const std::string& s) {
  if (s == "all") return Portion::all;
  if (s == "train") return Portion::train;
  if (s == "heldout") return Portion::heldout;
  throw Error(ErrorKind::usage, "portion must be all, train or heldout");
}

// Prepared rounds keep the normalized arrays that frames point into.
struct Rounds {
  std::vector<std::unique_ptr<PreparedRound>> owned;

  explicit Rounds(const std::vector<std::string>& dirs) {
    for (const auto& d : dirs) {
      CsiDataset ds = read_dataset(d);
      if (!ds.checksum_ok) throw Error(ErrorKind::data, "checksum mismatch in " + d);
      owned.push_back(std::make_unique<PreparedRound>(std::move(ds)));
    }
  }
  std::vector<PreparedRound*> ptrs() const {
    std::vector<PreparedRound*> out;
    for (const auto& r : owned) out.push_back(r.get());
    return out;
  }
  std::vector<Frame<float>> frames(std::size_t tau, std::size_t stride, Portion portion, double fraction) const {
    std::vector<Frame<float>> all;
    for (const auto& r : owned) {
      auto f = r->frames(tau, stride, portion, Split::unlabeled, fraction);
      all.insert(all.end(), f.begin(), f.end());
    }
    return all;
  }
};

json evaluation_json(const Evaluation& e) {
  return {{"frames", e.n}, {"accuracy", e.accuracy}, {"per_case", e.per_case}, {"confusion", e.confusion}};
}

json log_json(const LogRecord& r) {
  const auto& L = r.loss;
  return {{"iteration", r.iteration}, {"tce_pt", L.tce_pt},     {"tce_dt", L.tce_dt},       {"uice_pt", L.uice_pt},
          {"uice_dt", L.uice_dt},     {"uice_ps", L.uice_ps},   {"uice_ds", L.uice_ds},     {"ctq", L.ctq},
          {"ctve", L.ctve},           {"feedback_ps", r.feedback_ps}, {"feedback_ds", r.feedback_ds},
          {"labeled_ce_pt", r.labeled_ce_pt}, {"wall_ms", r.wall_ms}};
}

json distance_summary(std::vector<double> d) {
  if (d.empty()) return nullptr;
  std::sort(d.begin(), d.end());
  const std::size_t n = d.size();
  const double median = n % 2 ? d[n / 2] : 0.5 * (d[n / 2 - 1] + d[n / 2]);
  return {{"count", n}, {"min", d.front()}, {"max", d.back()}, {"median", median}};
}

// Network shape follows the data; everything else comes from the settings.
TrainConfig train_config_for(const Settings& s, const PreparedRound& any) {
  TrainConfig c = s.train_config();
  c.net.S = static_cast<int>(any.raw.S());
  c.net.K = static_cast<int>(any.raw.K());
  return c;
}

// ---------------------------------------------------------------------------

void cmd_gen(const Settings& s, const std::string& out, bool force) {
  check_target(out, force);
  const GeneratorSpec g = s.generator();
  const auto scenarios = round_scenarios(g);
  json rounds = json::array();
  for (int id : s.rounds) {
    std::vector<CsiDataset> parts;
    for (int c = 1; c <= kNumCases; ++c) parts.push_back(simulate_round(scenarios.at(id), g.packets_per_case, c));
    CsiDataset ds = concat_cases(parts, id, g.round(id).tag);
    ds.seed = scenarios.at(id).seed;
    const auto dir = std::filesystem::path(out) / ("round" + std::to_string(id));
    write_dataset(ds, dir);
    rounds.push_back({{"round", id},
                      {"dir", dir.string()},
                      {"shape", {ds.T(), ds.S(), ds.K()}},
                      {"drift", to_string(g.round(id).drift)},
                      {"tag", ds.environment_tag},
                      {"crc32", detail::crc32_bytes(ds.amplitudes.data.data(), ds.amplitudes.data.size() * 4)}});
  }
  json j = envelope("gen");
  j["seed"] = s.seed;
  j["packets_per_case"] = g.packets_per_case;
  j["rounds"] = rounds;
  emit(j);
}

void cmd_train(const Settings& s, const std::vector<std::string>& labeled_dirs,
               const std::vector<std::string>& unlabeled_dirs, const std::string& out, std::string log_path,
               bool force) {
  check_target(out, force);
  if (log_path.empty()) log_path = out + ".log.jsonl";
  check_target(log_path, force);
  const Rounds lab(labeled_dirs), unl(unlabeled_dirs);
  const auto split = s.split();
  const auto prm = s.disarray();
  const FrameSet L = labeled_set(lab.ptrs(), split, prm);
  const FrameSet U = unlabeled_set(unl.ptrs(), split, prm);
  const TrainConfig cfg = train_config_for(s, *lab.owned.front());

  std::ofstream log(log_path);
  if (!log) throw Error(ErrorKind::data, "cannot write " + log_path);
  auto res = train<float>(L, U, cfg);
  for (const auto& r : res.log) log << log_json(r).dump() << "\n";

  json extra = {{"settings", s.to_json()},
                {"mode", to_string(res.mode)},
                {"gamma", res.indicators.gamma},
                {"delta", res.indicators.delta},
                {"training_distances", distance_summary(res.training_distances)}};
  save_checkpoint(res.bundle, out, extra);

  json j = envelope("train");
  j["checkpoint"] = out;
  j["log"] = log_path;
  j["mode"] = to_string(res.mode);
  j["labeled_frames"] = L.size();
  j["unlabeled_frames"] = U.size();
  j["iterations"] = res.log.size();
  j["wall_seconds"] = res.log.empty() ? 0.0 : res.log.back().wall_ms / 1000.0;
  j["final"] = res.log.empty() ? json(nullptr) : log_json(res.log.back());
  j["training_distances"] = extra["training_distances"];
  emit(j);
}

void cmd_predict(const Settings& s, const std::string& model, const std::vector<std::string>& data,
                 const std::string& portion, const std::string& predictor) {
  const auto ck = load_checkpoint<float>(model);
  const Predictor which = predictor == "dual" ? Predictor::dual_teacher : Predictor::primal_teacher;
  if (predictor != "dual" && predictor != "primal") throw Error(ErrorKind::usage, "predictor must be primal or dual");
  const auto tau = static_cast<std::size_t>(ck.bundle.config.tau);
  json per_round = json::array();
  std::vector<int> all_pred, all_truth;
  for (const auto& dir : data) {
    const Rounds r({dir});
    const auto frames = r.frames(tau, static_cast<std::size_t>(s.eval_stride), portion_from(portion), s.train_fraction);
    if (frames.empty()) throw Error(ErrorKind::data, "no frames in " + dir);
    const auto p = predict(ck.bundle, frames, which);
    std::vector<int> truth;
    for (const auto& f : frames) truth.push_back(f.label.value_or(0));
    auto e = evaluation_json(evaluate_predictions(p.cases, truth));
    e["dir"] = dir;
    e["round"] = r.owned.front()->raw.round_id;
    per_round.push_back(e);
    all_pred.insert(all_pred.end(), p.cases.begin(), p.cases.end());
    all_truth.insert(all_truth.end(), truth.begin(), truth.end());
  }
  json j = envelope("predict");
  j["model"] = model;
  j["predictor"] = predictor;
  j["portion"] = portion;
  j["rounds"] = per_round;
  j["overall"] = evaluation_json(evaluate_predictions(all_pred, all_truth));
  emit(j);
}

void cmd_drift(const Settings& s, const std::string& model, const std::vector<std::string>& data,
               const std::string& portion, const std::string& distances_file) {
  const auto ck = load_checkpoint<float>(model);
  std::vector<double> training_max;
  if (ck.extra.contains("training_distances") && ck.extra["training_distances"].is_object())
    training_max.push_back(ck.extra["training_distances"]["max"].get<double>());
  const double dth = s.resolve_dth(training_max);
  const auto tau = static_cast<std::size_t>(ck.bundle.config.tau);
  std::vector<double> stream;
  json per_round = json::array();
  for (const auto& dir : data) {
    const Rounds r({dir});
    const auto frames = r.frames(tau, static_cast<std::size_t>(s.eval_stride), portion_from(portion), s.train_fraction);
    if (frames.empty()) throw Error(ErrorKind::data, "no frames in " + dir);
    const auto d = outlier_distances(ck.bundle, frames);
    json e = distance_summary(d);
    e["dir"] = dir;
    e["round"] = r.owned.front()->raw.round_id;
    per_round.push_back(e);
    stream.insert(stream.end(), d.begin(), d.end());
  }
  const auto rep = drift_verdict(stream, static_cast<std::size_t>(s.window), dth);
  if (!distances_file.empty()) {
    std::ofstream f(distances_file);
    if (!f) throw Error(ErrorKind::data, "cannot write " + distances_file);
    f << json(rep.distances).dump() << "\n";
  }
  json j = envelope("drift");
  j["model"] = model;
  j["threshold"] = rep.threshold;
  j["threshold_source"] = s.dth == "auto" ? "auto" : "fixed";
  j["window"] = rep.window;
  j["window_median"] = rep.window_median;
  j["min"] = rep.min;
  j["max"] = rep.max;
  j["verdict"] = rep.drift ? "drift" : "no_drift";
  j["retrain_frames"] = rep.retrain_frames.size();
  j["rounds"] = per_round;
  emit(j);
}

void cmd_indicator(const Settings& s, const std::vector<std::string>& labeled_dirs,
                   const std::vector<std::string>& unlabeled_dirs) {
  const Rounds lab(labeled_dirs), unl(unlabeled_dirs);
  const auto prm = s.disarray();
  const auto split = s.split();
  const FrameSet L = labeled_set(lab.ptrs(), split, prm);
  const FrameSet U = FrameSet::from(unl.frames(split.tau, split.train_stride, Portion::all, s.train_fraction), prm);
  const auto ind = build_indicators_from_rho(L.rho, L.labels, U.rho);
  std::vector<int> pred;
  for (double r : U.rho) pred.push_back(indicator_classify_rho(r, ind));
  json j = envelope("indicator");
  j["alpha"] = s.alpha;
  j["beta"] = s.beta;
  j["gamma"] = ind.gamma;
  j["delta"] = ind.delta;
  j["labeled_frames"] = ind.M;
  j["unlabeled_frames"] = ind.N;
  j["classification"] = evaluation_json(evaluate_predictions(pred, U.labels));
  emit(j);
}

struct BenchMethod {
  std::string name;
  TrainMode mode;
  bool confidence;
  Predictor predictor;
};

void cmd_bench(const Settings& s, const std::string& root, const std::vector<int>& labeled_rounds,
               const std::vector<int>& unlabeled_rounds, const std::vector<int>& eval_rounds,
               const std::vector<std::string>& method_names, const std::string& out_file) {
  const std::vector<BenchMethod> known = {
      {"bts", TrainMode::bts, true, Predictor::primal_teacher},
      {"bts_no_cd", TrainMode::bts, false, Predictor::primal_teacher},
      {"supervised", TrainMode::supervised, true, Predictor::primal_teacher},
      {"single_primal", TrainMode::single_primal, true, Predictor::primal_teacher},
      {"single_dual", TrainMode::single_dual, true, Predictor::dual_teacher},
  };
  auto dir_of = [&](int id) { return (std::filesystem::path(root) / ("round" + std::to_string(id))).string(); };
  std::vector<std::string> ldirs, udirs, edirs;
  for (int r : labeled_rounds) ldirs.push_back(dir_of(r));
  for (int r : unlabeled_rounds) udirs.push_back(dir_of(r));
  for (int r : eval_rounds) edirs.push_back(dir_of(r));
  const Rounds lab(ldirs), unl(udirs), ev(edirs);
  const auto split = s.split();
  const auto prm = s.disarray();
  const FrameSet L = labeled_set(lab.ptrs(), split, prm);
  const FrameSet U = unlabeled_set(unl.ptrs(), split, prm);

  json rows = json::array();
  for (const auto& name : method_names) {
    const auto it = std::find_if(known.begin(), known.end(), [&](const BenchMethod& m) { return m.name == name; });
    if (it == known.end()) throw Error(ErrorKind::usage, "unknown bench method '" + name + "'");
    TrainConfig cfg = train_config_for(s, *lab.owned.front());
    cfg.mode = it->mode;
    cfg.use_confidence = it->confidence;
    const auto res = train<float>(L, U, cfg);
    json acc = json::object(), per_case = json::object();
    for (std::size_t i = 0; i < eval_rounds.size(); ++i) {
      const auto e = evaluate(res.bundle, heldout_frames(*ev.owned[i], split), it->predictor);
      acc[std::to_string(eval_rounds[i])] = e.accuracy;
      per_case[std::to_string(eval_rounds[i])] = e.per_case;
    }
    rows.push_back({{"method", name},
                    {"accuracy", acc},
                    {"per_case", per_case},
                    {"wall_seconds", res.log.back().wall_ms / 1000.0}});
    std::cerr << "bench: " << name << " done\n";
  }
  json j = envelope("bench");
  j["labeled_rounds"] = labeled_rounds;
  j["unlabeled_rounds"] = unlabeled_rounds;
  j["eval_rounds"] = eval_rounds;
  j["settings"] = s.to_json();
  j["rows"] = rows;
  emit(j, out_file);
}

int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return 1;
    case ErrorKind::data: return 2;
    case ErrorKind::numerical: return 3;
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app("Bifold teacher-student presence detection on Wi-Fi CSI", "btsctl");
  app.require_subcommand(1);
  app.fallthrough();
  Settings s;
  cli::bind_settings(app, s);

  std::string out, log_path, model, portion = "heldout", predictor = "primal", distances_file, root;
  bool force = false;
  std::vector<std::string> labeled, unlabeled, data;

  auto* gen = app.add_subcommand("gen", "write synthetic rounds to --out/roundN");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_flag("--force", force, "overwrite an existing output directory");

  auto* tr = app.add_subcommand("train", "train and write a checkpoint");
  tr->add_option("--labeled", labeled, "labeled round directories")->required();
  tr->add_option("--unlabeled", unlabeled, "unlabeled round directories");
  tr->add_option("--out", out, "checkpoint file")->required();
  tr->add_option("--log", log_path, "JSON-lines training log (default: <out>.log.jsonl)");
  tr->add_flag("--force", force, "overwrite existing files");

  auto* pr = app.add_subcommand("predict", "accuracy and confusion matrix on rounds");
  pr->add_option("--model", model, "checkpoint file")->required();
  pr->add_option("--data", data, "round directories")->required();
  pr->add_option("--portion", portion, "all | train | heldout")->capture_default_str();
  pr->add_option("--predictor", predictor, "primal | dual")->capture_default_str();

  auto* dr = app.add_subcommand("drift", "outlier distances and drift verdict");
  dr->add_option("--model", model, "checkpoint file")->required();
  dr->add_option("--data", data, "round directories, in stream order")->required();
  dr->add_option("--portion", portion, "all | train | heldout")->capture_default_str();
  dr->add_option("--distances", distances_file, "write every distance to this file");

  auto* in = app.add_subcommand("indicator", "training-free indicators and their accuracy");
  in->add_option("--labeled", labeled, "labeled round directories")->required();
  in->add_option("--unlabeled", unlabeled, "unlabeled round directories")->required();

  std::vector<int> bl{1}, bu{2}, be{2, 3, 4, 5, 6};
  std::vector<std::string> methods{"bts", "bts_no_cd", "supervised", "single_primal", "single_dual"};
  auto* be_cmd = app.add_subcommand("bench", "compare BTS with its baselines");
  be_cmd->add_option("--data", root, "directory written by gen")->required();
  be_cmd->add_option("--labeled_rounds", bl, "")->delimiter(',')->capture_default_str();
  be_cmd->add_option("--unlabeled_rounds", bu, "")->delimiter(',')->capture_default_str();
  be_cmd->add_option("--eval_rounds", be, "")->delimiter(',')->capture_default_str();
  be_cmd->add_option("--methods", methods, "")->delimiter(',')->capture_default_str();
  be_cmd->add_option("--out", out, "also write the table to this file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    s.validate();
    if (*gen) cmd_gen(s, out, force);
    if (*tr) {
      if (unlabeled.empty() && s.mode != "supervised")
        throw Error(ErrorKind::usage, "--unlabeled is required unless mode = supervised");
      cmd_train(s, labeled, unlabeled, out, log_path, force);
    }
    if (*pr) cmd_predict(s, model, data, portion, predictor);
    if (*dr) cmd_drift(s, model, data, portion, distances_file);
    if (*in) cmd_indicator(s, labeled, unlabeled);
    if (*be_cmd) cmd_bench(s, root, bl, bu, be, methods, out);
  } catch (const Error& e) {
    std::cerr << "btsctl: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "btsctl: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
