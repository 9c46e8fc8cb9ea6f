#pragma once

#include "difftse/spec_tensor.hpp"

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

namespace difftse {

/// Scores are clamped to +/- this many dB so identical signals stay finite.
inline constexpr double kMetricCapDb = 50.0;

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 8000;

  std::size_t size() const { return samples.size(); }
};

/// STFT front end. Coefficients are amplitude-transformed after the linear
/// transform: X -> scale * |X|^exponent * exp(i angle X). exponent = scale = 1
/// leaves the linear STFT untouched.
struct StftConfig {
  int window = 64;
  int hop = 16;
  double amp_exponent = 0.5;
  double amp_scale = 0.33;

  int freqs() const { return window / 2 + 1; }
  /// Frames produced for a signal of `samples` samples.
  Index frames_for(std::size_t samples) const;
  bool is_linear() const { return amp_exponent == 1.0 && amp_scale == 1.0; }
  void validate() const;
};

/// Periodic Hann window of the given length.
Eigen::VectorXd hann_window(int length);

SpecTensor stft(const Waveform& w, const StftConfig& cfg);

/// Inverse of `stft` by weighted overlap-add. `length` trims to the original
/// signal length; without it the full padded-to-hop length is returned.
Waveform istft(const SpecTensor& s, const StftConfig& cfg,
               std::optional<std::size_t> length = std::nullopt, int sample_rate = 8000);

/// Forward and inverse amplitude transforms on coefficients.
SpecTensor compress_amplitude(const SpecTensor& linear, const StftConfig& cfg);
SpecTensor expand_amplitude(const SpecTensor& compressed, const StftConfig& cfg);

/// Scale-invariant SDR in dB, clamped to +/- kMetricCapDb.
double si_sdr(std::span<const double> reference, std::span<const double> estimate);
double si_sdr(const Waveform& reference, const Waveform& estimate);

/// si_sdr(reference, estimate) - si_sdr(reference, mixture).
double si_sdr_improvement(const Waveform& reference, const Waveform& mixture,
                          const Waveform& estimate);

/// 10 log10(|x|^2 / |x - xhat|^2), clamped to +/- kMetricCapDb.
double snr_db(std::span<const double> reference, std::span<const double> estimate);

/// Mono RIFF/WAVE, IEEE float 32-bit little-endian.
void write_wav(const std::filesystem::path& path, const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);

}  // namespace difftse
