#include "difftse/corpus.hpp"

#include "difftse/parallel.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace difftse {

namespace {

constexpr int kSpeakerRetries = 1000;
constexpr int kSpeakerSetAttempts = 32;
constexpr std::uint64_t kExampleStream = 100000;

std::uint64_t fnv1a(std::uint64_t hash, const std::string& bytes) {
  for (unsigned char c : bytes) {
    hash ^= c;
    hash *= 0x100000001B3ULL;
  }
  return hash;
}

std::string slurp(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CorruptDataError("corpus: missing file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

const char* const kSignalNames[] = {"x0", "y", "xi", "clue"};

std::uint64_t example_checksum(const std::filesystem::path& dir, const std::string& stem) {
  std::uint64_t hash = 0xCBF29CE484222325ULL;
  for (const char* name : kSignalNames) {
    hash = fnv1a(hash, slurp(dir / (stem + "." + name + ".wav")));
    hash = fnv1a(hash, slurp(dir / (stem + "." + name + ".spec")));
  }
  return hash;
}

std::string hex(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace

std::size_t CorpusConfig::utterance_samples() const {
  return static_cast<std::size_t>(std::lround(duration * sample_rate));
}

std::size_t CorpusConfig::enroll_samples() const {
  return static_cast<std::size_t>(std::lround(enroll_duration * sample_rate));
}

void CorpusConfig::validate() const {
  if (n_speakers < 2) throw ContractError("corpus: need at least two speakers");
  if (n_train < 0 || n_test < 0) throw ContractError("corpus: negative example count");
  if (!(f_min > 0.0 && f_max > f_min)) throw ContractError("corpus: require 0 < f_min < f_max");
  if (!(min_ratio >= 1.2)) throw ContractError("corpus: min_ratio must be >= 1.2");
  if (min_harmonics < 1 || max_harmonics < min_harmonics || max_harmonics > 5) {
    throw ContractError("corpus: harmonic count must satisfy 1 <= min <= max <= 5");
  }
  if (utterance_samples() < 2 || enroll_samples() < 2) throw ContractError("corpus: utterances too short");
  if (!(level_rms > 0.0)) throw ContractError("corpus: level_rms must be > 0");
  if (!stft.is_linear()) throw ContractError("corpus: spectra must use the linear STFT (a = b = 1)");
  stft.validate();
}

const ToySpeaker& Corpus::speaker(int id) const {
  for (const auto& s : speakers) {
    if (s.id == id) return s;
  }
  throw ContractError("corpus: unknown speaker id " + std::to_string(id));
}

ToySpeaker gen_speaker(std::uint64_t seed, int id, std::span<const ToySpeaker> existing,
                       const CorpusConfig& cfg) {
  Rng rng(seed);
  std::uniform_real_distribution<double> log_f0(std::log(cfg.f_min), std::log(cfg.f_max));
  for (int attempt = 0; attempt < kSpeakerRetries; ++attempt) {
    const double f0 = std::exp(log_f0(rng));
    bool separated = true;
    for (const auto& other : existing) {
      if (std::max(f0, other.f0) / std::min(f0, other.f0) < cfg.min_ratio) {
        separated = false;
        break;
      }
    }
    if (!separated) continue;
    ToySpeaker s;
    s.id = id;
    s.seed = seed;
    s.f0 = f0;
    s.amp_jitter = cfg.amp_jitter;
    s.onset_jitter = cfg.onset_jitter;
    std::uniform_int_distribution<int> count(cfg.min_harmonics, cfg.max_harmonics);
    std::uniform_real_distribution<double> amp(0.2, 1.0);
    const int n = count(rng);
    for (int h = 0; h < n; ++h) s.harmonic_amps.push_back(amp(rng));
    return s;
  }
  throw std::runtime_error("gen_speaker: cannot satisfy fundamental separation after " +
                           std::to_string(kSpeakerRetries) + " draws");
}

Waveform gen_utterance(const ToySpeaker& speaker, std::size_t samples, const CorpusConfig& cfg,
                       Rng& rng) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> jitter(-speaker.amp_jitter, speaker.amp_jitter);
  const std::size_t max_onset =
      static_cast<std::size_t>(std::floor(speaker.onset_jitter * static_cast<double>(samples)));
  std::uniform_int_distribution<std::size_t> onset_dist(0, max_onset > 0 ? max_onset - 1 : 0);
  const std::size_t onset = max_onset > 0 ? onset_dist(rng) : 0;

  Waveform w;
  w.sample_rate = cfg.sample_rate;
  w.samples.assign(samples, 0.0);
  const double nyquist = 0.5 * cfg.sample_rate;
  for (std::size_t h = 0; h < speaker.harmonic_amps.size(); ++h) {
    const double freq = speaker.f0 * static_cast<double>(h + 1);
    const double ph = phase(rng);
    const double a = speaker.harmonic_amps[h] * (1.0 + jitter(rng));
    if (freq >= 0.95 * nyquist) continue;
    const double omega = 2.0 * std::numbers::pi * freq / cfg.sample_rate;
    for (std::size_t n = onset; n < samples; ++n) {
      w.samples[n] += a * std::sin(omega * static_cast<double>(n) + ph);
    }
  }
  double energy = 0.0;
  for (double v : w.samples) energy += v * v;
  const double rms = std::sqrt(energy / static_cast<double>(samples));
  const double gain = rms > 0.0 ? cfg.level_rms / rms : 0.0;
  for (double& v : w.samples) v = static_cast<double>(static_cast<float>(v * gain));
  return w;
}

MixtureExample gen_example(const ToySpeaker& target, const ToySpeaker& interferer,
                           const CorpusConfig& cfg, Rng& rng) {
  if (target.id == interferer.id) throw ContractError("gen_example: target and interferer must differ");
  MixtureExample ex;
  ex.target_id = target.id;
  ex.interferer_id = interferer.id;
  ex.x0_wave = gen_utterance(target, cfg.utterance_samples(), cfg, rng);
  ex.interferer_wave = gen_utterance(interferer, cfg.utterance_samples(), cfg, rng);
  const double gain = cfg.silent_interferer ? 0.0 : std::pow(10.0, -cfg.tir_db / 20.0);
  for (double& v : ex.interferer_wave.samples) v = static_cast<double>(static_cast<float>(v * gain));
  ex.clue_wave = gen_utterance(target, cfg.enroll_samples(), cfg, rng);

  ex.y_wave = ex.x0_wave;
  for (std::size_t i = 0; i < ex.y_wave.samples.size(); ++i) {
    ex.y_wave.samples[i] = static_cast<float>(ex.y_wave.samples[i] + ex.interferer_wave.samples[i]);
  }
  ex.x0 = stft(ex.x0_wave, cfg.stft);
  ex.x0_interferer = stft(ex.interferer_wave, cfg.stft);
  ex.y = ex.x0 + ex.x0_interferer;
  ex.c.spec = stft(ex.clue_wave, cfg.stft);
  return ex;
}

Corpus generate_corpus(const CorpusConfig& cfg) {
  cfg.validate();
  Corpus corpus;
  corpus.cfg = cfg;

  for (int attempt = 0; attempt < kSpeakerSetAttempts && corpus.speakers.empty(); ++attempt) {
    std::vector<ToySpeaker> speakers;
    try {
      for (int k = 0; k < cfg.n_speakers; ++k) {
        const std::uint64_t s = split_seed(cfg.seed, static_cast<std::uint64_t>(attempt) * 1000 + k);
        speakers.push_back(gen_speaker(s, k, speakers, cfg));
      }
      corpus.speakers = std::move(speakers);
    } catch (const std::runtime_error&) {
    }
  }
  if (corpus.speakers.empty()) {
    throw std::runtime_error("generate_corpus: could not place " + std::to_string(cfg.n_speakers) +
                             " separated speakers in [f_min, f_max]");
  }

  const std::size_t total = static_cast<std::size_t>(cfg.n_train + cfg.n_test);
  std::vector<MixtureExample> all(total);
  parallel_for(total, cfg.jobs, [&](std::size_t i) {
    const std::uint64_t seed = split_seed(cfg.seed, kExampleStream + i);
    Rng rng(seed);
    std::uniform_int_distribution<int> pick(0, cfg.n_speakers - 1);
    std::uniform_int_distribution<int> pick_other(0, cfg.n_speakers - 2);
    const int target = pick(rng);
    int interferer = pick_other(rng);
    if (interferer >= target) ++interferer;
    MixtureExample ex = gen_example(corpus.speakers[static_cast<std::size_t>(target)],
                                    corpus.speakers[static_cast<std::size_t>(interferer)], cfg, rng);
    ex.id = static_cast<int>(i);
    ex.seed = seed;
    all[i] = std::move(ex);
  });
  corpus.train.assign(std::make_move_iterator(all.begin()),
                      std::make_move_iterator(all.begin() + cfg.n_train));
  corpus.test.assign(std::make_move_iterator(all.begin() + cfg.n_train),
                     std::make_move_iterator(all.end()));
  return corpus;
}

void write_spec(const std::filesystem::path& path, const SpecTensor& s) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("write_spec: cannot open " + path.string());
  const std::int32_t dims[2] = {static_cast<std::int32_t>(s.freqs()), static_cast<std::int32_t>(s.frames())};
  os.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  const auto view = s.real_view();
  os.write(reinterpret_cast<const char*>(view.data()),
           static_cast<std::streamsize>(view.size() * sizeof(double)));
  if (!os) throw std::runtime_error("write_spec: write failed for " + path.string());
}

SpecTensor read_spec(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CorruptDataError("read_spec: missing file " + path.string());
  std::int32_t dims[2] = {0, 0};
  is.read(reinterpret_cast<char*>(dims), sizeof(dims));
  if (!is || dims[0] < 0 || dims[1] < 0) throw CorruptDataError("read_spec: bad header in " + path.string());
  SpecTensor s(dims[0], dims[1]);
  auto view = s.real_view();
  is.read(reinterpret_cast<char*>(view.data()), static_cast<std::streamsize>(view.size() * sizeof(double)));
  if (!is) throw CorruptDataError("read_spec: truncated payload in " + path.string());
  if (is.peek() != std::char_traits<char>::eof()) {
    throw CorruptDataError("read_spec: trailing bytes in " + path.string());
  }
  return s;
}

void write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "test");
  const CorpusConfig& c = corpus.cfg;

  std::ostringstream m;
  m.precision(17);
  m << "# difftse toy corpus manifest\n";
  m << "version 1\n";
  m << "config n_speakers " << c.n_speakers << "\n";
  m << "config n_train " << c.n_train << "\n";
  m << "config n_test " << c.n_test << "\n";
  m << "config duration " << c.duration << "\n";
  m << "config enroll_duration " << c.enroll_duration << "\n";
  m << "config sample_rate " << c.sample_rate << "\n";
  m << "config f_min " << c.f_min << "\n";
  m << "config f_max " << c.f_max << "\n";
  m << "config min_ratio " << c.min_ratio << "\n";
  m << "config min_harmonics " << c.min_harmonics << "\n";
  m << "config max_harmonics " << c.max_harmonics << "\n";
  m << "config amp_jitter " << c.amp_jitter << "\n";
  m << "config onset_jitter " << c.onset_jitter << "\n";
  m << "config level_rms " << c.level_rms << "\n";
  m << "config tir_db " << c.tir_db << "\n";
  m << "config silent_interferer " << (c.silent_interferer ? 1 : 0) << "\n";
  m << "config window " << c.stft.window << "\n";
  m << "config hop " << c.stft.hop << "\n";
  m << "config seed " << c.seed << "\n";
  for (const auto& s : corpus.speakers) {
    m << "speaker " << s.id << ' ' << s.seed << ' ' << s.f0 << ' ' << s.amp_jitter << ' '
      << s.onset_jitter << ' ' << s.harmonic_amps.size();
    for (double a : s.harmonic_amps) m << ' ' << a;
    m << "\n";
  }

  auto write_split = [&](const std::vector<MixtureExample>& examples, const std::string& split) {
    const fs::path sub = dir / split;
    std::vector<std::uint64_t> sums(examples.size());
    parallel_for(examples.size(), c.jobs, [&](std::size_t i) {
      const auto& ex = examples[i];
      const std::string stem = std::to_string(ex.id);
      write_wav(sub / (stem + ".x0.wav"), ex.x0_wave);
      write_wav(sub / (stem + ".y.wav"), ex.y_wave);
      write_wav(sub / (stem + ".xi.wav"), ex.interferer_wave);
      write_wav(sub / (stem + ".clue.wav"), ex.clue_wave);
      write_spec(sub / (stem + ".x0.spec"), ex.x0);
      write_spec(sub / (stem + ".y.spec"), ex.y);
      write_spec(sub / (stem + ".xi.spec"), ex.x0_interferer);
      write_spec(sub / (stem + ".clue.spec"), ex.c.spec);
      sums[i] = example_checksum(sub, stem);
    });
    for (std::size_t i = 0; i < examples.size(); ++i) {
      const auto& ex = examples[i];
      m << "example " << split << ' ' << ex.id << ' ' << ex.target_id << ' ' << ex.interferer_id
        << ' ' << ex.seed << ' ' << split << '/' << ex.id << ' ' << hex(sums[i]) << "\n";
    }
  };
  write_split(corpus.train, "train");
  write_split(corpus.test, "test");

  std::ofstream os(dir / "manifest.txt");
  if (!os) throw std::runtime_error("write_corpus: cannot write manifest in " + dir.string());
  os << m.str();
}

Corpus read_corpus(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::ifstream is(dir / "manifest.txt");
  if (!is) throw std::runtime_error("read_corpus: no manifest in " + dir.string());

  Corpus corpus;
  CorpusConfig& c = corpus.cfg;
  bool versioned = false;
  std::string line;
  int line_no = 0;
  struct Pending {
    std::string split, stem, checksum;
    MixtureExample ex;
  };
  std::vector<Pending> pending;
  auto fail = [&](const std::string& why) {
    throw CorruptDataError("read_corpus: manifest line " + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "version") {
      int v = 0;
      if (!(ls >> v) || v != 1) fail("unsupported version");
      versioned = true;
    } else if (kind == "config") {
      std::string key;
      std::string value;
      if (!(ls >> key >> value)) fail("malformed config entry");
      try {
        if (key == "n_speakers") c.n_speakers = std::stoi(value);
        else if (key == "n_train") c.n_train = std::stoi(value);
        else if (key == "n_test") c.n_test = std::stoi(value);
        else if (key == "duration") c.duration = std::stod(value);
        else if (key == "enroll_duration") c.enroll_duration = std::stod(value);
        else if (key == "sample_rate") c.sample_rate = std::stoi(value);
        else if (key == "f_min") c.f_min = std::stod(value);
        else if (key == "f_max") c.f_max = std::stod(value);
        else if (key == "min_ratio") c.min_ratio = std::stod(value);
        else if (key == "min_harmonics") c.min_harmonics = std::stoi(value);
        else if (key == "max_harmonics") c.max_harmonics = std::stoi(value);
        else if (key == "amp_jitter") c.amp_jitter = std::stod(value);
        else if (key == "onset_jitter") c.onset_jitter = std::stod(value);
        else if (key == "level_rms") c.level_rms = std::stod(value);
        else if (key == "tir_db") c.tir_db = std::stod(value);
        else if (key == "silent_interferer") c.silent_interferer = value == "1";
        else if (key == "window") c.stft.window = std::stoi(value);
        else if (key == "hop") c.stft.hop = std::stoi(value);
        else if (key == "seed") c.seed = std::stoull(value);
        else fail("unknown config key '" + key + "'");
      } catch (const std::logic_error&) {
        fail("bad value for '" + key + "'");
      }
    } else if (kind == "speaker") {
      ToySpeaker s;
      std::size_t n = 0;
      if (!(ls >> s.id >> s.seed >> s.f0 >> s.amp_jitter >> s.onset_jitter >> n) || n > 5) {
        fail("malformed speaker entry");
      }
      s.harmonic_amps.resize(n);
      for (auto& a : s.harmonic_amps) {
        if (!(ls >> a)) fail("missing harmonic amplitude");
      }
      corpus.speakers.push_back(std::move(s));
    } else if (kind == "example") {
      Pending p;
      if (!(ls >> p.split >> p.ex.id >> p.ex.target_id >> p.ex.interferer_id >> p.ex.seed >> p.stem >>
            p.checksum)) {
        fail("malformed example entry");
      }
      if (p.split != "train" && p.split != "test") fail("unknown split '" + p.split + "'");
      pending.push_back(std::move(p));
    } else {
      fail("unknown record '" + kind + "'");
    }
  }
  if (!versioned) throw CorruptDataError("read_corpus: manifest has no version line");
  c.stft = StftConfig{c.stft.window, c.stft.hop, 1.0, 1.0};

  std::size_t n_train = 0;
  for (const auto& p : pending) n_train += p.split == "train" ? 1 : 0;
  if (n_train != static_cast<std::size_t>(c.n_train) ||
      pending.size() - n_train != static_cast<std::size_t>(c.n_test)) {
    throw CorruptDataError("read_corpus: example count does not match manifest config");
  }
  if (corpus.speakers.size() != static_cast<std::size_t>(c.n_speakers)) {
    throw CorruptDataError("read_corpus: speaker count does not match manifest config");
  }

  parallel_for(pending.size(), c.jobs, [&](std::size_t i) {
    Pending& p = pending[i];
    const fs::path base = dir / p.stem;
    const fs::path parent = base.parent_path();
    const std::string stem = base.filename().string();
    if (hex(example_checksum(parent, stem)) != p.checksum) {
      throw CorruptDataError("read_corpus: checksum mismatch for example " + p.stem);
    }
    MixtureExample& ex = p.ex;
    ex.x0_wave = read_wav(parent / (stem + ".x0.wav"));
    ex.y_wave = read_wav(parent / (stem + ".y.wav"));
    ex.interferer_wave = read_wav(parent / (stem + ".xi.wav"));
    ex.clue_wave = read_wav(parent / (stem + ".clue.wav"));
    ex.x0 = read_spec(parent / (stem + ".x0.spec"));
    ex.y = read_spec(parent / (stem + ".y.spec"));
    ex.x0_interferer = read_spec(parent / (stem + ".xi.spec"));
    ex.c.spec = read_spec(parent / (stem + ".clue.spec"));
  });
  for (auto& p : pending) {
    (p.split == "train" ? corpus.train : corpus.test).push_back(std::move(p.ex));
  }
  return corpus;
}

Eigen::VectorXd harmonic_power_profile(const ToySpeaker& speaker, const CorpusConfig& cfg) {
  const int win = cfg.stft.window;
  const int freqs = cfg.stft.freqs();
  const Eigen::VectorXd w = hann_window(win);
  const double nyquist = 0.5 * cfg.sample_rate;
  double total = 0.0;
  for (double a : speaker.harmonic_amps) total += 0.5 * a * a;
  Eigen::VectorXd power = Eigen::VectorXd::Zero(freqs);
  for (std::size_t h = 0; h < speaker.harmonic_amps.size(); ++h) {
    const double freq = speaker.f0 * static_cast<double>(h + 1);
    if (freq >= 0.95 * nyquist) continue;
    const double a = speaker.harmonic_amps[h];
    for (int f = 0; f < freqs; ++f) {
      // Windowed-sinusoid response at bin f (positive-frequency image only).
      const double delta = static_cast<double>(f) / win - freq / cfg.sample_rate;
      Complex acc(0.0, 0.0);
      for (int n = 0; n < win; ++n) acc += w[n] * std::polar(1.0, -2.0 * std::numbers::pi * delta * n);
      power[f] += 0.25 * a * a * std::norm(acc);
    }
  }
  return total > 0.0 ? Eigen::VectorXd(power / total) : power;
}

SpecTensor oracle_harmonic_extract(const MixtureExample& ex, const Corpus& corpus) {
  const CorpusConfig& cfg = corpus.cfg;
  const Eigen::VectorXd pt = harmonic_power_profile(corpus.speaker(ex.target_id), cfg);
  Eigen::VectorXd pi = harmonic_power_profile(corpus.speaker(ex.interferer_id), cfg);
  pi *= cfg.silent_interferer ? 0.0 : std::pow(10.0, -cfg.tir_db / 10.0);
  const double tiny = 1e-12 * pt.maxCoeff();
  const Eigen::VectorXd mask = pt.array() / (pt.array() + pi.array() + tiny);
  SpecTensor out = ex.y;
  out.values().array().colwise() *= mask.cast<Complex>().array();
  return out;
}

}  // namespace difftse
