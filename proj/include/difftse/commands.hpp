#pragma once

#include "difftse/config.hpp"

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace difftse {

enum class ExitCode : int {
  Ok = 0,
  VerificationFailed = 1,
  Usage = 2,
  MissingFile = 3,
  Corrupt = 4,
  Failure = 5,
};

class MissingFileError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void require_file(const std::filesystem::path& path);

/// Runs a command body and maps exceptions to exit codes (message on `err`).
int run_guarded(const std::function<int()>& body, std::ostream& err);

/// Writes <dir>/config.ini with the resolved configuration.
void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& dir);

/// Corpus on disk under cfg.corpus_dir.
int cmd_gen(const RunConfig& cfg, std::ostream& out);

/// Trains cfg.model on the corpus; writes train.log, model.{topology,params}
/// (EMA weights) and checkpoints/step_<k>.* into cfg.output_dir.
int cmd_train(const RunConfig& cfg, std::ostream& out);

struct ExtractRequest {
  std::filesystem::path mixture;
  std::filesystem::path clue;
  bool trace = false;
};

/// Extracts from one mixture WAV given an enrollment WAV. Generative models
/// write sample_<j>.wav per ensemble member and ensemble.wav when J > 1.
int cmd_extract(const RunConfig& cfg, const ExtractRequest& req, std::ostream& out);

/// One evaluated test mixture. NaN marks a column the model does not produce.
struct EvalRow {
  int id = 0;
  int target_id = 0;
  int interferer_id = 0;
  double si_sdr_mixture = 0.0;
  double si_sdri_first = 0.0;     // first sample, or the discriminative estimate
  double si_sdri_samples = 0.0;   // mean over the J samples
  double si_sdri_ensemble = 0.0;  // ensemble mean estimate
  double si_sdri_branch = 0.0;    // internal discriminative branch (multi-task)
  double swap_ok = 0.0;           // 1 when the swapped clue extracts the interferer
};

struct EvalReport {
  std::string system;
  int ensemble = 1;
  std::vector<EvalRow> rows;
  EvalRow mean;  // column means over rows
};

/// Scores a checkpoint (or the mixture passthrough) on the test split.
EvalReport evaluate(const RunConfig& cfg, const Corpus& corpus);
/// Writes metrics.txt, metrics.csv and scatter.csv.
void write_eval_report(const EvalReport& report, const std::filesystem::path& dir);
int cmd_eval(const RunConfig& cfg, std::ostream& out);

/// Oracle suites; returns VerificationFailed when any check fails.
int cmd_verify(const RunConfig& cfg, std::ostream& out);

}  // namespace difftse
