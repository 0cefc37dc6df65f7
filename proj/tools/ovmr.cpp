// ovmr: train, calibrate and run open-set video moment retrieval over
// precomputed feature files.
//
// Exit codes: 0 ok, 2 config/contract error, 3 data or format error,
// 4 numeric failure.

#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ovmr/checkpoint.hpp"
#include "ovmr/config.hpp"
#include "ovmr/data.hpp"
#include "ovmr/eval.hpp"
#include "ovmr/model.hpp"
#include "ovmr/train.hpp"

namespace {

using namespace ovmr;

std::uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open for hashing");
  std::string blob((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return fnv1a64(blob);
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open for writing");
  out << content;
}

struct CommonArgs {
  std::string config_path;
  std::string out_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

RunConfig load_run_config(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return run_config_from_json(detail::load_json_file(path));
}

GenConfig load_gen_config(const std::string& path) {
  if (path.empty()) return GenConfig{};
  return gen_config_from_json(detail::load_json_file(path));
}

int cmd_gen_data(const CommonArgs& args) {
  GenConfig cfg = load_gen_config(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  cfg.validate();
  Dataset ds = generate_dataset(cfg);
  write_features(args.out_path, ds);

  nlohmann::json manifest{
      {"config", gen_config_to_json(cfg)},
      {"config_hash", config_hash(cfg)},
      {"seed", cfg.seed},
      {"episodes", ds.size()},
      {"file_hash", hash_file(args.out_path)},
  };
  write_text_file(args.out_path + ".json", manifest.dump(2) + "\n");
  std::cout << "wrote " << ds.size() << " episodes to " << args.out_path
            << " (file_hash " << manifest["file_hash"] << ")\n";
  return 0;
}

int cmd_train(const CommonArgs& args, const std::string& data_path,
              const std::string& log_path, const std::string& stage) {
  RunConfig cfg = load_run_config(args.config_path);
  if (args.seed_set) cfg.seed = args.seed;
  if (stage == "two-stage")
    cfg.two_stage = true;
  else if (stage == "joint")
    cfg.two_stage = false;
  else if (!stage.empty())
    throw ContractError("train: --stage must be 'joint' or 'two-stage'");
  cfg.validate();

  Dataset ds = read_features(data_path);
  OVMR_CHECK_CONTRACT(!ds.empty(), "train: dataset is empty");
  const int d = static_cast<int>(ds[0].sentence.len());
  OpenVmrModel model = make_model(d, cfg);

  const std::string log_file =
      log_path.empty() ? args.out_path + ".log.jsonl" : log_path;
  std::ofstream log(log_file, std::ios::trunc);
  if (!log) throw FormatError(log_file + ": cannot open for writing");
  log << nlohmann::json{{"config", run_config_to_json(cfg)},
                        {"config_hash", config_hash(cfg)},
                        {"seed", cfg.seed},
                        {"data_file_hash", hash_file(data_path)}}
             .dump()
      << "\n";

  TrainOutcome outcome = train_model(model, ds, cfg, &log);
  save_checkpoint(args.out_path, model);
  std::cout << "trained " << outcome.epochs_run << " epochs (best epoch "
            << outcome.best_epoch << "), checkpoint " << args.out_path
            << ", log " << log_file << "\n";
  return 0;
}

std::vector<int> eval_indices(const Dataset& ds, const OpenVmrModel& model,
                              const std::string& split) {
  std::vector<int> indices;
  if (split == "all" || split.empty()) {
    for (int i = 0; i < static_cast<int>(ds.size()); ++i) indices.push_back(i);
    return indices;
  }
  SplitIndices s = split_dataset(ds, model.val_fraction, model.seed);
  if (split == "train") {
    indices = s.train_id;
    indices.insert(indices.end(), s.train_ood.begin(), s.train_ood.end());
  } else if (split == "val") {
    indices = s.val_id;
    indices.insert(indices.end(), s.val_ood.begin(), s.val_ood.end());
  } else {
    throw ContractError("eval: --split must be all, train or val");
  }
  std::sort(indices.begin(), indices.end());
  return indices;
}

int cmd_eval(const CommonArgs& args, const std::string& ckpt_path,
             const std::string& data_path, const std::string& split) {
  RunConfig cfg = load_run_config(args.config_path);
  OpenVmrModel model = load_checkpoint(ckpt_path);
  Dataset ds = read_features(data_path);
  OVMR_CHECK_CONTRACT(!ds.empty(), "eval: dataset is empty");
  for (const auto& ep : ds)
    OVMR_CHECK_CONTRACT(static_cast<int>(ep.sentence.len()) == model.d,
                        "eval: dataset dimension " +
                            std::to_string(ep.sentence.len()) +
                            " does not match checkpoint dimension " +
                            std::to_string(model.d));

  EvalOutcome outcome = evaluate(model, ds, eval_indices(ds, model, split), cfg);

  nlohmann::json j = report_to_json(outcome.report);
  j["config"] = run_config_to_json(cfg);
  j["split"] = split.empty() ? "all" : split;
  write_text_file(args.out_path, j.dump(2) + "\n");
  write_text_file(args.out_path + ".txt", report_to_text(outcome.report));
  std::ofstream preds(args.out_path + ".preds.jsonl", std::ios::trunc);
  if (!preds)
    throw FormatError(args.out_path + ".preds.jsonl: cannot open for writing");
  write_predictions_jsonl(preds, outcome.records);

  std::cout << report_to_text(outcome.report);
  return 0;
}

int cmd_detect(const CommonArgs& args, const std::string& ckpt_path,
               const std::string& episode_path, int index) {
  RunConfig cfg = load_run_config(args.config_path);
  OpenVmrModel model = load_checkpoint(ckpt_path);
  Dataset ds = read_features(episode_path);
  OVMR_CHECK_CONTRACT(index >= 0 && index < static_cast<int>(ds.size()),
                      "detect: --index out of range");
  ProposalCache proposals(cfg);
  PredictionRecord rec = predict_one(model, ds[index], index, cfg, proposals);
  const std::string line = prediction_to_json(rec).dump() + "\n";
  if (args.out_path.empty() || args.out_path == "-")
    std::cout << line;
  else
    write_text_file(args.out_path, line);
  return 0;
}

int cmd_calibrate(const CommonArgs& args, const std::string& ckpt_path,
                  const std::string& data_path) {
  OpenVmrModel model = load_checkpoint(ckpt_path);
  Dataset ds = read_features(data_path);
  std::vector<double> normalized;
  double max_ll = -std::numeric_limits<double>::infinity();
  for (const auto& ep : ds) {
    if (ep.label != QueryLabel::ID) continue;
    OVMR_CHECK_CONTRACT(static_cast<int>(ep.sentence.len()) == model.d,
                        "calibrate: dataset dimension does not match");
    const double ll = log_likelihood(model.flow, ep.sentence);
    max_ll = std::max(max_ll, ll);
    normalized.push_back(normalize_loglik(ll, model.cal.h_id));
  }
  OVMR_CHECK_CONTRACT(!normalized.empty(),
                      "calibrate: dataset has no ID episodes");
  const double h_id = model.cal.h_id;
  BoundaryCalibration cal =
      calibrate_boundary(normalized, model.cal.alpha, model.cal.delta);
  cal.h_id = h_id;
  cal.max_loglik = max_ll;
  model.cal = cal;
  const std::string out =
      args.out_path.empty() ? ckpt_path : args.out_path;
  save_checkpoint(out, model);
  std::cout << "calibrated on " << normalized.size() << " ID queries: b_id "
            << cal.b_id << ", b_ood " << cal.b_ood << " -> " << out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "open-set video moment retrieval over precomputed feature vectors"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string data_path, ckpt_path, episode_path;
  std::string log_path, stage, split = "all";
  int index = 0;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset");
  gen->add_option("--config", args.config_path, "GenConfig JSON file");
  gen->add_option("--seed", args.seed, "seed override")
      ->each([&](const std::string&) { args.seed_set = true; });
  gen->add_option("--out", args.out_path, "output OVMRDATA file")->required();

  auto* train = app.add_subcommand("train", "train a model on a dataset");
  train->add_option("--config", args.config_path, "RunConfig JSON file");
  train->add_option("--seed", args.seed, "seed override")
      ->each([&](const std::string&) { args.seed_set = true; });
  train->add_option("--data", data_path, "OVMRDATA input")->required();
  train->add_option("--out", args.out_path, "checkpoint output")->required();
  train->add_option("--log", log_path, "JSONL epoch log path");
  train->add_option("--stage", stage, "joint or two-stage");

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint");
  eval->add_option("--config", args.config_path, "RunConfig JSON file");
  eval->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  eval->add_option("--data", data_path, "OVMRDATA input")->required();
  eval->add_option("--out", args.out_path, "report path (JSON)")->required();
  eval->add_option("--split", split, "all, train or val");

  auto* detect = app.add_subcommand("detect", "classify one episode");
  detect->add_option("--config", args.config_path, "RunConfig JSON file");
  detect->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  detect->add_option("--episode", episode_path, "OVMRDATA input")->required();
  detect->add_option("--index", index, "episode index");
  detect->add_option("--out", args.out_path, "output path or - for stdout");

  auto* calib = app.add_subcommand("calibrate",
                                   "recompute the ID/OOD boundary");
  calib->add_option("--ckpt", ckpt_path, "checkpoint")->required();
  calib->add_option("--data", data_path, "OVMRDATA input")->required();
  calib->add_option("--out", args.out_path, "output checkpoint path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(args);
    if (train->parsed()) return cmd_train(args, data_path, log_path, stage);
    if (eval->parsed()) return cmd_eval(args, ckpt_path, data_path, split);
    if (detect->parsed())
      return cmd_detect(args, ckpt_path, episode_path, index);
    if (calib->parsed()) return cmd_calibrate(args, ckpt_path, data_path);
  } catch (const ovmr::ContractError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ovmr::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const ovmr::FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const ovmr::NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
