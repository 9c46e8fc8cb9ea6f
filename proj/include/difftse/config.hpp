#pragma once

#include "difftse/corpus.hpp"
#include "difftse/models.hpp"
#include "difftse/sampling.hpp"
#include "difftse/sde.hpp"
#include "difftse/signal.hpp"
#include "difftse/training.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace difftse {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flat key = value document. `[section]` headers prefix subsequent keys as
/// "section.key". '#' and ';' start comments.
class IniDocument {
 public:
  static IniDocument parse(const std::string& text);
  static IniDocument load(const std::filesystem::path& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Everything one invocation needs; echoed into each output directory.
struct RunConfig {
  SdeParams sde;
  NetConfig net;
  TrainConfig train;
  SamplerConfig sampler;
  StftConfig stft{64, 16, 1.0, 1.0};
  CorpusConfig corpus;
  ModelVariant model = ModelVariant::DiffTse;
  double t_eps = kDefaultTimeEps;
  std::uint64_t seed = 0;
  int jobs = 1;
  std::string corpus_dir = "corpus";
  std::string output_dir = "run";
  std::string checkpoint;  // <dir>/model stem or "passthrough"
  int eval_limit = 0;      // 0: all test examples

  /// Applies one "section.key" = value assignment; throws ConfigError on unknown keys.
  void set(const std::string& key, const std::string& value);
  void apply(const IniDocument& doc);
  /// Pushes the shared seed/jobs/stft/sde values into the per-module configs.
  void resolve();
  void validate() const;
  std::string to_ini() const;
};

/// Loads `path` (if nonempty) and then applies `overrides` in order.
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace difftse
