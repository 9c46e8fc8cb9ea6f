#include "difftse/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace difftse {

namespace {

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r\n");
  return s.substr(begin, end - begin + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* first = text.data();
  const char* last = first + text.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw ConfigError("config: cannot parse '" + text + "' for " + key);
  }
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "1" || text == "true" || text == "yes" || text == "on") return true;
  if (text == "0" || text == "false" || text == "no" || text == "off") return false;
  throw ConfigError("config: cannot parse '" + text + "' as a boolean for " + key);
}

// Shortest text that parses back to the same double.
std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename T, typename Access>
Field field(std::string key, Access access) {
  Field f;
  f.key = key;
  f.set = [key, access](RunConfig& c, const std::string& v) {
    T& slot = access(c);
    if constexpr (std::is_same_v<T, bool>) {
      slot = parse_bool(key, v);
    } else if constexpr (std::is_same_v<T, std::string>) {
      slot = v;
    } else {
      slot = parse_number<T>(key, v);
    }
  };
  f.get = [access](const RunConfig& c) {
    const T& slot = access(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, bool>) {
      return std::string(slot ? "true" : "false");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return slot;
    } else if constexpr (std::is_floating_point_v<T>) {
      return format_double(slot);
    } else {
      return std::to_string(slot);
    }
  };
  return f;
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> t;
    Field model;
    model.key = "run.model";
    model.set = [](RunConfig& c, const std::string& v) {
      try {
        c.model = parse_variant(v);
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
    };
    model.get = [](const RunConfig& c) { return to_string(c.model); };
    t.push_back(model);
    t.push_back(field<std::uint64_t>("run.seed", [](RunConfig& c) -> auto& { return c.seed; }));
    t.push_back(field<int>("run.jobs", [](RunConfig& c) -> auto& { return c.jobs; }));
    t.push_back(field<std::string>("run.corpus_dir", [](RunConfig& c) -> auto& { return c.corpus_dir; }));
    t.push_back(field<std::string>("run.output_dir", [](RunConfig& c) -> auto& { return c.output_dir; }));
    t.push_back(field<std::string>("run.checkpoint", [](RunConfig& c) -> auto& { return c.checkpoint; }));
    t.push_back(field<int>("run.eval_limit", [](RunConfig& c) -> auto& { return c.eval_limit; }));

    t.push_back(field<double>("sde.gamma", [](RunConfig& c) -> auto& { return c.sde.gamma; }));
    t.push_back(field<double>("sde.sigma0", [](RunConfig& c) -> auto& { return c.sde.sigma0; }));
    t.push_back(field<double>("sde.sigma1", [](RunConfig& c) -> auto& { return c.sde.sigma1; }));
    t.push_back(field<double>("sde.t_max", [](RunConfig& c) -> auto& { return c.sde.t_max; }));
    t.push_back(field<double>("sde.t_eps", [](RunConfig& c) -> auto& { return c.t_eps; }));

    t.push_back(field<int>("net.width", [](RunConfig& c) -> auto& { return c.net.width; }));
    t.push_back(field<int>("net.blocks", [](RunConfig& c) -> auto& { return c.net.blocks; }));
    t.push_back(field<int>("net.embed_dim", [](RunConfig& c) -> auto& { return c.net.embed_dim; }));
    t.push_back(field<int>("net.time_dim", [](RunConfig& c) -> auto& { return c.net.time_dim; }));
    t.push_back(field<double>("net.feature_floor", [](RunConfig& c) -> auto& { return c.net.feature_floor; }));

    t.push_back(field<double>("train.lr", [](RunConfig& c) -> auto& { return c.train.lr; }));
    t.push_back(field<bool>("train.cosine_decay", [](RunConfig& c) -> auto& { return c.train.cosine_decay; }));
    t.push_back(field<double>("train.delta_T", [](RunConfig& c) -> auto& { return c.train.delta_T; }));
    t.push_back(field<double>("train.alpha", [](RunConfig& c) -> auto& { return c.train.alpha; }));
    t.push_back(field<double>("train.beta", [](RunConfig& c) -> auto& { return c.train.beta; }));
    t.push_back(field<double>("train.ema_decay", [](RunConfig& c) -> auto& { return c.train.ema_decay; }));
    t.push_back(field<int>("train.batch_size", [](RunConfig& c) -> auto& { return c.train.batch_size; }));
    t.push_back(field<int>("train.steps", [](RunConfig& c) -> auto& { return c.train.steps; }));
    t.push_back(field<double>("train.adam_beta1", [](RunConfig& c) -> auto& { return c.train.adam_beta1; }));
    t.push_back(field<double>("train.adam_beta2", [](RunConfig& c) -> auto& { return c.train.adam_beta2; }));
    t.push_back(field<double>("train.adam_eps", [](RunConfig& c) -> auto& { return c.train.adam_eps; }));
    t.push_back(field<int>("train.checkpoint_every", [](RunConfig& c) -> auto& { return c.train.checkpoint_every; }));

    t.push_back(field<int>("sampler.n_steps", [](RunConfig& c) -> auto& { return c.sampler.n_steps; }));
    t.push_back(field<int>("sampler.corrector_iters", [](RunConfig& c) -> auto& { return c.sampler.corrector_iters; }));
    t.push_back(field<double>("sampler.r", [](RunConfig& c) -> auto& { return c.sampler.r; }));
    Field corrector;
    corrector.key = "sampler.corrector";
    corrector.set = [](RunConfig& c, const std::string& v) {
      try {
        c.sampler.corrector = parse_corrector_rule(v);
      } catch (const std::exception& e) {
        throw ConfigError(e.what());
      }
    };
    corrector.get = [](const RunConfig& c) { return to_string(c.sampler.corrector); };
    t.push_back(corrector);
    t.push_back(field<int>("sampler.ensemble", [](RunConfig& c) -> auto& { return c.sampler.ensemble; }));
    t.push_back(field<bool>("sampler.sum_mode", [](RunConfig& c) -> auto& { return c.sampler.sum_mode; }));
    t.push_back(field<bool>("sampler.keep_states", [](RunConfig& c) -> auto& { return c.sampler.keep_states; }));

    t.push_back(field<int>("stft.window", [](RunConfig& c) -> auto& { return c.stft.window; }));
    t.push_back(field<int>("stft.hop", [](RunConfig& c) -> auto& { return c.stft.hop; }));
    t.push_back(field<double>("stft.amp_exponent", [](RunConfig& c) -> auto& { return c.stft.amp_exponent; }));
    t.push_back(field<double>("stft.amp_scale", [](RunConfig& c) -> auto& { return c.stft.amp_scale; }));

    t.push_back(field<int>("corpus.n_speakers", [](RunConfig& c) -> auto& { return c.corpus.n_speakers; }));
    t.push_back(field<int>("corpus.n_train", [](RunConfig& c) -> auto& { return c.corpus.n_train; }));
    t.push_back(field<int>("corpus.n_test", [](RunConfig& c) -> auto& { return c.corpus.n_test; }));
    t.push_back(field<double>("corpus.duration", [](RunConfig& c) -> auto& { return c.corpus.duration; }));
    t.push_back(field<double>("corpus.enroll_duration", [](RunConfig& c) -> auto& { return c.corpus.enroll_duration; }));
    t.push_back(field<int>("corpus.sample_rate", [](RunConfig& c) -> auto& { return c.corpus.sample_rate; }));
    t.push_back(field<double>("corpus.f_min", [](RunConfig& c) -> auto& { return c.corpus.f_min; }));
    t.push_back(field<double>("corpus.f_max", [](RunConfig& c) -> auto& { return c.corpus.f_max; }));
    t.push_back(field<double>("corpus.min_ratio", [](RunConfig& c) -> auto& { return c.corpus.min_ratio; }));
    t.push_back(field<int>("corpus.min_harmonics", [](RunConfig& c) -> auto& { return c.corpus.min_harmonics; }));
    t.push_back(field<int>("corpus.max_harmonics", [](RunConfig& c) -> auto& { return c.corpus.max_harmonics; }));
    t.push_back(field<double>("corpus.amp_jitter", [](RunConfig& c) -> auto& { return c.corpus.amp_jitter; }));
    t.push_back(field<double>("corpus.onset_jitter", [](RunConfig& c) -> auto& { return c.corpus.onset_jitter; }));
    t.push_back(field<double>("corpus.level_rms", [](RunConfig& c) -> auto& { return c.corpus.level_rms; }));
    t.push_back(field<double>("corpus.tir_db", [](RunConfig& c) -> auto& { return c.corpus.tir_db; }));
    t.push_back(field<bool>("corpus.silent_interferer", [](RunConfig& c) -> auto& { return c.corpus.silent_interferer; }));
    return t;
  }();
  return table;
}

std::string normalise_key(const std::string& key) {
  return key.find('.') == std::string::npos ? "run." + key : key;
}

}  // namespace

IniDocument IniDocument::parse(const std::string& text) {
  IniDocument doc;
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line.erase(comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(line_no) + ": unterminated section");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("config line " + std::to_string(line_no) + ": empty key");
    if (!section.empty()) key = section + "." + key;
    doc.values_[key] = trim(line.substr(eq + 1));
  }
  return doc;
}

IniDocument IniDocument::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::filesystem::filesystem_error("config: cannot open", path,
                                                   std::make_error_code(std::errc::no_such_file_or_directory));
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse(ss.str());
}

const std::string& IniDocument::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("config: missing key " + key);
  return it->second;
}

int IniDocument::get_int(const std::string& key) const { return parse_number<int>(key, get(key)); }
double IniDocument::get_double(const std::string& key) const {
  return parse_number<double>(key, get(key));
}
std::uint64_t IniDocument::get_u64(const std::string& key) const {
  return parse_number<std::uint64_t>(key, get(key));
}
bool IniDocument::get_bool(const std::string& key) const { return parse_bool(key, get(key)); }

void RunConfig::set(const std::string& key, const std::string& value) {
  const std::string k = normalise_key(key);
  for (const auto& f : fields()) {
    if (f.key == k) {
      f.set(*this, value);
      return;
    }
  }
  throw ConfigError("config: unknown key " + key);
}

void RunConfig::apply(const IniDocument& doc) {
  for (const auto& [key, value] : doc.values()) set(key, value);
}

void RunConfig::resolve() {
  net.freqs = stft.freqs();
  corpus.stft = stft;
  corpus.seed = seed;
  corpus.jobs = jobs;
  net.seed = split_seed(seed, 1);
  train.seed = split_seed(seed, 2);
  sampler.seed = split_seed(seed, 3);
  train.jobs = jobs;
  sampler.jobs = jobs;
  train.t_eps = t_eps;
  sampler.t_eps = t_eps;
}

void RunConfig::validate() const {
  try {
    sde.validate();
    net.validate();
    train.validate();
    sampler.validate();
    stft.validate();
    corpus.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (!(t_eps > 0.0 && t_eps < sde.t_max)) throw ConfigError("config: sde.t_eps must be in (0, t_max)");
  if (jobs < 1) throw ConfigError("config: jobs must be >= 1");
  if (eval_limit < 0) throw ConfigError("config: eval_limit must be >= 0");
}

std::string RunConfig::to_ini() const {
  std::ostringstream os;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << "\n";
      os << "[" << sec << "]\n";
      section = sec;
    }
    os << f.key.substr(dot + 1) << " = " << f.get(*this) << "\n";
  }
  return os.str();
}

RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  if (!path.empty()) cfg.apply(IniDocument::load(path));
  for (const auto& [key, value] : overrides) cfg.set(key, value);
  cfg.resolve();
  cfg.validate();
  return cfg;
}

}  // namespace difftse
