#include "difftse/signal.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

namespace difftse {

namespace {

Eigen::MatrixXcd forward_dft(int n, int freqs) {
  Eigen::MatrixXcd d(freqs, n);
  for (int f = 0; f < freqs; ++f) {
    for (int k = 0; k < n; ++k) {
      const long phase = (static_cast<long>(f) * k) % n;
      d(f, k) = std::polar(1.0, -2.0 * std::numbers::pi * static_cast<double>(phase) / n);
    }
  }
  return d;
}

// Real inverse DFT for a Hermitian half spectrum: frame = Re(inv * X).
Eigen::MatrixXcd inverse_dft(int n, int freqs) {
  Eigen::MatrixXcd d(n, freqs);
  for (int k = 0; k < n; ++k) {
    for (int f = 0; f < freqs; ++f) {
      const long phase = (static_cast<long>(f) * k) % n;
      double weight = 2.0;
      if (f == 0 || (n % 2 == 0 && f == n / 2)) weight = 1.0;
      d(k, f) = std::polar(weight / n, 2.0 * std::numbers::pi * static_cast<double>(phase) / n);
    }
  }
  return d;
}

double db_clamped(double num, double den) {
  if (den <= 0.0) return num > 0.0 ? kMetricCapDb : -kMetricCapDb;
  if (num <= 0.0) return -kMetricCapDb;
  return std::clamp(10.0 * std::log10(num / den), -kMetricCapDb, kMetricCapDb);
}

template <typename T>
void put_le(std::ostream& os, T value) {
  static_assert(std::endian::native == std::endian::little, "little-endian host assumed");
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_le(std::istream& is) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw CorruptDataError("wav: unexpected end of file");
  return value;
}

}  // namespace

Index StftConfig::frames_for(std::size_t samples) const {
  const long span = static_cast<long>(samples) + window - 2L * hop;
  const long steps = span <= 0 ? 0 : (span + hop - 1) / hop;
  return static_cast<Index>(steps + 1);
}

void StftConfig::validate() const {
  if (window < 2) throw ContractError("stft: window shorter than 2 samples");
  if (hop < 1 || hop > window) throw ContractError("stft: hop must be in [1, window]");
  if (!(amp_exponent > 0.0) || !(amp_scale > 0.0)) {
    throw ContractError("stft: amplitude exponent and scale must be > 0");
  }
  const Eigen::VectorXd w = hann_window(window);
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (int offset = 0; offset < hop; ++offset) {
    double acc = 0.0;
    for (int n = offset; n < window; n += hop) acc += w[n] * w[n];
    lo = std::min(lo, acc);
    hi = std::max(hi, acc);
  }
  if (!(lo > 1e-8 * hi)) {
    throw ContractError("stft: window/hop pair does not satisfy overlap-add reconstruction");
  }
}

Eigen::VectorXd hann_window(int length) {
  Eigen::VectorXd w(length);
  for (int n = 0; n < length; ++n) {
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * n / length);
  }
  return w;
}

SpecTensor compress_amplitude(const SpecTensor& linear, const StftConfig& cfg) {
  if (cfg.is_linear()) return linear;
  Eigen::MatrixXcd out = linear.values().unaryExpr([&](Complex v) {
    const double mag = std::abs(v);
    if (mag == 0.0) return Complex(0.0, 0.0);
    return v * (cfg.amp_scale * std::pow(mag, cfg.amp_exponent) / mag);
  });
  return SpecTensor(std::move(out));
}

SpecTensor expand_amplitude(const SpecTensor& compressed, const StftConfig& cfg) {
  if (cfg.is_linear()) return compressed;
  Eigen::MatrixXcd out = compressed.values().unaryExpr([&](Complex v) {
    const double mag = std::abs(v);
    if (mag == 0.0) return Complex(0.0, 0.0);
    return v * (std::pow(mag / cfg.amp_scale, 1.0 / cfg.amp_exponent) / mag);
  });
  return SpecTensor(std::move(out));
}

SpecTensor stft(const Waveform& w, const StftConfig& cfg) {
  cfg.validate();
  if (w.samples.empty()) throw ContractError("stft: empty waveform");
  const int win = cfg.window;
  const int pad = cfg.window - cfg.hop;
  const Index frames = cfg.frames_for(w.samples.size());
  const Index padded = (frames - 1) * cfg.hop + win;

  Eigen::VectorXd buffer = Eigen::VectorXd::Zero(padded);
  for (std::size_t i = 0; i < w.samples.size(); ++i) buffer[pad + static_cast<Index>(i)] = w.samples[i];

  const Eigen::VectorXd window = hann_window(win);
  Eigen::MatrixXd framed(win, frames);
  for (Index l = 0; l < frames; ++l) {
    framed.col(l) = buffer.segment(l * cfg.hop, win).cwiseProduct(window);
  }
  const Eigen::MatrixXcd dft = forward_dft(win, cfg.freqs());
  SpecTensor linear(Eigen::MatrixXcd(dft * framed.cast<Complex>()));
  return compress_amplitude(linear, cfg);
}

Waveform istft(const SpecTensor& s, const StftConfig& cfg, std::optional<std::size_t> length,
               int sample_rate) {
  cfg.validate();
  if (s.freqs() != cfg.freqs()) throw ContractError("istft: frequency count does not match window");
  if (s.frames() < 1) throw ContractError("istft: no frames");
  const SpecTensor linear = expand_amplitude(s, cfg);
  const int win = cfg.window;
  const int pad = cfg.window - cfg.hop;
  const Index frames = s.frames();
  const Index padded = (frames - 1) * cfg.hop + win;

  const Eigen::MatrixXd time = (inverse_dft(win, cfg.freqs()) * linear.values()).real();
  const Eigen::VectorXd window = hann_window(win);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(padded);
  Eigen::VectorXd norm = Eigen::VectorXd::Zero(padded);
  for (Index l = 0; l < frames; ++l) {
    acc.segment(l * cfg.hop, win) += time.col(l).cwiseProduct(window);
    norm.segment(l * cfg.hop, win) += window.cwiseAbs2();
  }

  const Index natural = std::max<Index>(0, padded - 2 * pad);
  const Index n = length ? static_cast<Index>(*length) : natural;
  if (n > natural) throw ContractError("istft: requested length exceeds frame coverage");
  Waveform out;
  out.sample_rate = sample_rate;
  out.samples.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out.samples[static_cast<std::size_t>(i)] = acc[pad + i] / norm[pad + i];
  return out;
}

double si_sdr(std::span<const double> reference, std::span<const double> estimate) {
  if (reference.size() != estimate.size()) throw ContractError("si_sdr: length mismatch");
  if (reference.empty()) throw ContractError("si_sdr: empty signals");
  const Eigen::Map<const Eigen::VectorXd> x(reference.data(), static_cast<Index>(reference.size()));
  const Eigen::Map<const Eigen::VectorXd> xh(estimate.data(), static_cast<Index>(estimate.size()));
  const double ref_energy = x.squaredNorm();
  if (!(ref_energy > 0.0)) throw ContractError("si_sdr: zero reference signal");
  const double alpha = xh.dot(x) / ref_energy;
  const Eigen::VectorXd target = alpha * x;
  return db_clamped(target.squaredNorm(), (target - xh).squaredNorm());
}

double si_sdr(const Waveform& reference, const Waveform& estimate) {
  return si_sdr(std::span<const double>(reference.samples), std::span<const double>(estimate.samples));
}

double si_sdr_improvement(const Waveform& reference, const Waveform& mixture,
                          const Waveform& estimate) {
  return si_sdr(reference, estimate) - si_sdr(reference, mixture);
}

double snr_db(std::span<const double> reference, std::span<const double> estimate) {
  if (reference.size() != estimate.size()) throw ContractError("snr: length mismatch");
  const Eigen::Map<const Eigen::VectorXd> x(reference.data(), static_cast<Index>(reference.size()));
  const Eigen::Map<const Eigen::VectorXd> xh(estimate.data(), static_cast<Index>(estimate.size()));
  const double energy = x.squaredNorm();
  if (!(energy > 0.0)) throw ContractError("snr: zero reference signal");
  return db_clamped(energy, (x - xh).squaredNorm());
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_wav: cannot open " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * sizeof(float));
  os.write("RIFF", 4);
  put_le<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVE", 4);
  os.write("fmt ", 4);
  put_le<std::uint32_t>(os, 16);
  put_le<std::uint16_t>(os, 3);  // IEEE float
  put_le<std::uint16_t>(os, 1);  // mono
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(w.sample_rate) * 4);
  put_le<std::uint16_t>(os, 4);
  put_le<std::uint16_t>(os, 32);
  os.write("data", 4);
  put_le<std::uint32_t>(os, data_bytes);
  for (double v : w.samples) put_le<float>(os, static_cast<float>(v));
  if (!os) throw std::runtime_error("write_wav: write failed for " + path.string());
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("read_wav: cannot open " + path.string());
  char tag[4];
  auto expect = [&](const char* want) {
    is.read(tag, 4);
    if (!is || std::memcmp(tag, want, 4) != 0) {
      throw CorruptDataError("read_wav: missing '" + std::string(want, 4) + "' in " + path.string());
    }
  };
  expect("RIFF");
  get_le<std::uint32_t>(is);
  expect("WAVE");

  Waveform w;
  bool have_format = false;
  while (true) {
    is.read(tag, 4);
    if (!is) throw CorruptDataError("read_wav: no data chunk in " + path.string());
    const auto chunk_size = get_le<std::uint32_t>(is);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      const auto format = get_le<std::uint16_t>(is);
      const auto channels = get_le<std::uint16_t>(is);
      w.sample_rate = static_cast<int>(get_le<std::uint32_t>(is));
      get_le<std::uint32_t>(is);
      get_le<std::uint16_t>(is);
      const auto bits = get_le<std::uint16_t>(is);
      if (format != 3 || channels != 1 || bits != 32) {
        throw CorruptDataError("read_wav: only mono 32-bit float WAV is supported");
      }
      if (chunk_size > 16) is.ignore(chunk_size - 16);
      have_format = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      if (!have_format) throw CorruptDataError("read_wav: data chunk before fmt chunk");
      if (chunk_size % 4 != 0) throw CorruptDataError("read_wav: ragged data chunk");
      w.samples.resize(chunk_size / 4);
      for (auto& v : w.samples) v = get_le<float>(is);
      return w;
    } else {
      is.ignore(chunk_size + (chunk_size & 1U));
    }
  }
}

}  // namespace difftse
