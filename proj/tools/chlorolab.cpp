#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "chlorolab/pipeline.hpp"

using namespace chlorolab;

namespace {

RunConfig load_config(const std::string& path, const std::optional<std::uint64_t>& seed, const std::string& out) {
  nlohmann::json j = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot read config " + path);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw InvalidInput("config " + path + ": " + e.what());
    }
  }
  RunConfig c = run_config_from_json(j);
  if (seed) c.seed = *seed;
  if (!out.empty()) c.out = out;
  return c;
}

void report_error(const std::string& command, int code, const std::string& message) {
  std::cerr << "chlorolab " << command << ": " << message << "\n";
  std::cout << nlohmann::json{{"command", command}, {"status", "error"}, {"exit_code", code}, {"error", message}}.dump()
            << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weak labeling and regression of chlorophyll fluorescence from multispectral imagery"};
  app.require_subcommand(1);
  std::string config_path, out;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "global seed (overrides the config)");
  app.add_option("--out", out, "output root (overrides the config)");

  std::string model, network, kind;
  auto* simulate = app.add_subcommand("simulate", "write a synthetic bundle");
  auto* fit = app.add_subcommand("fit", "fit a generative labeler on ground truth");
  fit->add_option("model", model, "gmm, knn or kde")->required()->check(CLI::IsMember({"gmm", "knn", "kde"}));
  auto* label = app.add_subcommand("label", "weak-label every field with models that exclude it");
  auto* train = app.add_subcommand("train", "train a regressor on weak labels");
  train->add_option("network", network, "cnn or bilstm")->required()->check(CLI::IsMember({"cnn", "bilstm"}));
  auto* eval = app.add_subcommand("eval", "leave-one-field-out evaluation");
  eval->add_option("kind", kind, "generative or neural")->required()->check(CLI::IsMember({"generative", "neural"}));
  auto* report = app.add_subcommand("report", "write tables, figures and a summary");
  for (auto* sub : {simulate, fit, label, train, eval, report}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  RunConfig config;
  try {
    config = load_config(config_path, seed, out);
  } catch (const std::exception& e) {
    report_error(command, kExitUsage, e.what());
    return kExitUsage;
  }
  try {
    nlohmann::json summary;
    if (command == "simulate") summary = cmd_simulate(config);
    else if (command == "fit") summary = cmd_fit(config, parse_model(model));
    else if (command == "label") summary = cmd_label(config);
    else if (command == "train") summary = cmd_train(config, network);
    else if (command == "eval") summary = cmd_eval(config, kind);
    else summary = cmd_report(config);
    std::cout << summary.dump() << std::endl;
    return kExitOk;
  } catch (const StageError& e) {
    report_error(command, e.code(), e.what());
    return e.code();
  }
}
