#pragma once

#include "difftse/corpus.hpp"
#include "difftse/spec_tensor.hpp"

#include <filesystem>
#include <string>

namespace difftse::testing {

inline SpecTensor random_spec(Index f, Index l, double scale, std::uint64_t seed) {
  Rng rng(seed);
  return complex_normal(f, l, rng) * scale;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("difftse_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline CorpusConfig small_corpus_config(int n_train = 64, int n_test = 16) {
  CorpusConfig cfg;
  cfg.n_train = n_train;
  cfg.n_test = n_test;
  cfg.seed = 5;
  return cfg;
}

}  // namespace difftse::testing
