#pragma once

#include "difftse/signal.hpp"
#include "difftse/spec_tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace difftse {

/// Synthetic two-talker corpus settings. Spectra are stored in the linear
/// STFT domain (amplitude exponent = scale = 1) so mixtures stay additive.
struct CorpusConfig {
  int n_speakers = 8;
  int n_train = 2000;
  int n_test = 200;
  double duration = 0.125;         // seconds per utterance
  double enroll_duration = 0.125;  // seconds per enrollment
  int sample_rate = 8000;
  double f_min = 200.0;
  double f_max = 1600.0;
  double min_ratio = 1.25;  // minimum fundamental ratio between distinct speakers
  int min_harmonics = 3;
  int max_harmonics = 5;
  double amp_jitter = 0.2;    // +/- fraction per harmonic per utterance
  double onset_jitter = 0.2;  // onset drawn in [0, onset_jitter * duration)
  double level_rms = 0.05;    // target waveform RMS
  double tir_db = 0.0;        // target-to-interferer ratio
  bool silent_interferer = false;
  StftConfig stft{64, 16, 1.0, 1.0};
  std::uint64_t seed = 0;
  int jobs = 1;

  std::size_t utterance_samples() const;
  std::size_t enroll_samples() const;
  void validate() const;
};

struct ToySpeaker {
  int id = 0;
  std::uint64_t seed = 0;
  double f0 = 0.0;
  std::vector<double> harmonic_amps;  // nonnegative, index h -> harmonic h+1
  double amp_jitter = 0.2;
  double onset_jitter = 0.2;

  bool operator==(const ToySpeaker&) const = default;
};

struct MixtureExample {
  int id = 0;
  int target_id = 0;
  int interferer_id = 0;
  std::uint64_t seed = 0;
  SpecTensor x0;
  SpecTensor y;
  SpecTensor x0_interferer;
  EnrollmentClue c;
  Waveform x0_wave;
  Waveform y_wave;
  Waveform interferer_wave;
  Waveform clue_wave;
};

struct Corpus {
  CorpusConfig cfg;
  std::vector<ToySpeaker> speakers;
  std::vector<MixtureExample> train;
  std::vector<MixtureExample> test;

  const ToySpeaker& speaker(int id) const;
};

/// Deterministic per seed. Redraws the fundamental until it is at least
/// `min_ratio` away from every speaker in `existing`; throws after bounded retries.
ToySpeaker gen_speaker(std::uint64_t seed, int id, std::span<const ToySpeaker> existing,
                       const CorpusConfig& cfg);

/// One utterance: harmonics with random phases, per-harmonic amplitude jitter
/// and a random onset, normalised to `level_rms` and rounded to float precision.
Waveform gen_utterance(const ToySpeaker& speaker, std::size_t samples, const CorpusConfig& cfg,
                       Rng& rng);

MixtureExample gen_example(const ToySpeaker& target, const ToySpeaker& interferer,
                           const CorpusConfig& cfg, Rng& rng);

Corpus generate_corpus(const CorpusConfig& cfg);

/// Manifest + per-signal WAV files + binary spectra. See write_spec for the spectrum layout.
void write_corpus(const Corpus& corpus, const std::filesystem::path& dir);
Corpus read_corpus(const std::filesystem::path& dir);

/// Header: freqs, frames as int32 little-endian; payload: interleaved float64 (re, im), column-major.
void write_spec(const std::filesystem::path& path, const SpecTensor& s);
SpecTensor read_spec(const std::filesystem::path& path);

/// Expected power spectrum (per bin) of a speaker's harmonic support at unit level.
Eigen::VectorXd harmonic_power_profile(const ToySpeaker& speaker, const CorpusConfig& cfg);

/// Wiener-style extractor that knows both speakers' harmonic support.
SpecTensor oracle_harmonic_extract(const MixtureExample& ex, const Corpus& corpus);

}  // namespace difftse
