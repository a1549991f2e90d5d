#ifndef CHLOROLAB_PIPELINE_HPP
#define CHLOROLAB_PIPELINE_HPP

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "chlorolab/eval.hpp"
#include "json.hpp"

namespace chlorolab {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitInfeasible = 2,
  kExitFit = 3,
  kExitLabel = 4,
  kExitTrain = 5,
  kExitEval = 6,
};

/// A failed command together with its exit code.
class StageError : public Error {
 public:
  StageError(int code, const std::string& what) : Error(what), code_(code) {}
  int code() const { return code_; }

 private:
  int code_;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path out = "chlorolab_run";
  SynthSpec synth;  // used when no external data paths are given
  std::optional<std::filesystem::path> captures, ground_truth, zones;
  GenerativeConfig generative;
  std::vector<ModelTag> labelers{ModelTag::Gmm, ModelTag::Knn, ModelTag::Kde};
  NeuralConfig neural;
  std::vector<std::string> fit_fields;  // empty: every field
  ModelTag train_labeler = ModelTag::Kde;
  Eigen::Index train_size = 32;
};

nlohmann::json to_json(const RunConfig& c);
/// Missing keys keep their defaults; throws InvalidInput on bad values.
RunConfig run_config_from_json(const nlohmann::json& j);

/// Output directory of a stage: <out>/<name>-<hash of its inputs>.
std::filesystem::path stage_dir(const RunConfig& c, const std::string& stage);

/// Each command writes its stage directory afresh and returns a one-line
/// summary. Failures throw StageError carrying the exit code.
nlohmann::json cmd_simulate(const RunConfig& c);
nlohmann::json cmd_fit(const RunConfig& c, ModelTag tag);
nlohmann::json cmd_label(const RunConfig& c);
nlohmann::json cmd_train(const RunConfig& c, const std::string& network);
nlohmann::json cmd_eval(const RunConfig& c, const std::string& kind);
nlohmann::json cmd_report(const RunConfig& c);

std::vector<LabelSummary> summarize_labels(ModelTag labeler, Eigen::Index size, const LabelSet& set);

}  // namespace chlorolab

#endif
