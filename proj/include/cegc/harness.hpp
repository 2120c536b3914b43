#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "cegc/model.hpp"
#include "cegc/train.hpp"

namespace cegc {

namespace fs = std::filesystem;

/// Process exit codes.
enum ExitCode : int {
  kExitOk = 0,
  kExitInternal = 1,  // numeric failure (NaN, degenerate solve) or unexpected error
  kExitUsage = 2,     // bad arguments, missing or malformed files
  kExitBadMagic = 3,  // checkpoint does not start with "CEGC"
  kExitBadVersion = 4,
};

class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::size_t points = 1024;
  double keep_fraction = 0.7;
  bool noise = false;
  double noise_sigma = 0.01;
  double noise_clip = 0.05;
  double overlap_tau = kDefaultOverlapTau;
  std::size_t k = 12;
  double keep_ratio = 0.5;  // n_keep = floor(keep_ratio * min(Mx, My))
  double lambda = 0.5;
  double lr = 1e-3;
  std::size_t epochs = 50;
  std::vector<std::string> ablations;
  // model size / behaviour
  std::size_t feature_dim = 256;
  std::vector<std::size_t> agnn_widths{64, 64, 128};
  std::size_t context_rounds = 2;
  std::size_t key_dim = 64;
  NormMode norm = NormMode::per_cloud;
  double match_temperature = 0.1;
  // paths and command options
  fs::path manifest;
  fs::path data;
  fs::path out = ".";
  fs::path checkpoint;
  fs::path source;
  fs::path target;
  std::string split;  // empty: every split
  std::vector<std::string> methods{"cegc", "icp"};
  std::size_t icp_iterations = 50;

  /// Throws UsageError naming the offending setting.
  void validate() const;
  ModelConfig model_config() const;
};

/// Applies one setting by its flag name without the leading dashes (e.g.
/// "noise-sigma"). Throws UsageError on unknown keys or unparsable values.
void apply_setting(RunConfig& config, const std::string& key, const std::string& value);

/// key=value lines; blank lines and '#' comments are skipped.
void apply_config_file(RunConfig& config, const fs::path& path);

/// Worker count for evaluation: CEGC_THREADS when set (>= 1), otherwise the
/// hardware concurrency, never more than `jobs`.
std::size_t eval_threads(std::size_t jobs);

/// Built-in meshes as OFF files plus a manifest listing them.
int cmd_shapes(const RunConfig& config, std::ostream& log);
/// Writes pair archives and dataset.txt under config.out.
int cmd_synth(const RunConfig& config, std::ostream& log);
/// Trains on the train split of config.data; writes model.ckpt and train_log.csv.
int cmd_train(const RunConfig& config, std::ostream& log);
/// Registers config.source onto config.target; writes pose.txt and aligned.xyz.
int cmd_register(const RunConfig& config, std::ostream& log);
/// Evaluates config.methods on config.data; writes metrics.csv and metrics.json.
int cmd_eval(const RunConfig& config, std::ostream& log);

struct DatasetEntry {
  fs::path dir;
  std::string split;
  std::string mesh;
};
std::vector<DatasetEntry> read_dataset(const fs::path& root, const std::string& split);

/// Full command line: `cegc <command> [options]`. Maps exceptions to exit codes
/// and prints diagnostics to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace cegc
