#include "difftse/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <sstream>

namespace difftse::nn {

static_assert(std::endian::native == std::endian::little, "little-endian host assumed");

void save_params(const ParamSet& params, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("save_params: cannot open " + path.string());
  os << "difftse-params 1\n";
  os << "count " << params.size() << "\n";
  std::size_t offset = 0;
  for (const auto& p : params) {
    if (p.name.find_first_of(" \t\n") != std::string::npos) {
      throw ContractError("save_params: parameter name contains whitespace: " + p.name);
    }
    os << p.name << ' ' << p.value.rows() << ' ' << p.value.cols() << ' ' << offset << "\n";
    offset += static_cast<std::size_t>(p.value.size()) * sizeof(double);
  }
  os << "payload " << offset << "\n";
  for (const auto& p : params) {
    os.write(reinterpret_cast<const char*>(p.value.data()),
             static_cast<std::streamsize>(p.value.size() * sizeof(double)));
  }
  if (!os) throw std::runtime_error("save_params: write failed for " + path.string());
}

ParamSet load_params(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("load_params: cannot open " + path.string());
  auto line = [&]() {
    std::string s;
    if (!std::getline(is, s)) throw CorruptDataError("load_params: truncated header in " + path.string());
    return s;
  };
  if (line() != "difftse-params 1") throw CorruptDataError("load_params: bad magic in " + path.string());

  std::istringstream count_line(line());
  std::string key;
  int count = -1;
  count_line >> key >> count;
  if (key != "count" || count < 0) throw CorruptDataError("load_params: bad count line");

  struct Entry {
    std::string name;
    Index rows, cols;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  std::size_t expected = 0;
  for (int i = 0; i < count; ++i) {
    std::istringstream ls(line());
    Entry e{};
    if (!(ls >> e.name >> e.rows >> e.cols >> e.offset) || e.rows < 0 || e.cols < 0 ||
        e.offset != expected) {
      throw CorruptDataError("load_params: malformed parameter line " + std::to_string(i));
    }
    expected += static_cast<std::size_t>(e.rows * e.cols) * sizeof(double);
    entries.push_back(e);
  }
  std::istringstream payload_line(line());
  std::size_t bytes = 0;
  payload_line >> key >> bytes;
  if (key != "payload" || bytes != expected) throw CorruptDataError("load_params: bad payload line");

  ParamSet params;
  for (const auto& e : entries) {
    Matrix m(e.rows, e.cols);
    is.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (!is) throw CorruptDataError("load_params: truncated payload in " + path.string());
    params.add(e.name, std::move(m));
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw CorruptDataError("load_params: trailing bytes in " + path.string());
  }
  return params;
}

void load_params_into(ParamSet& params, const std::filesystem::path& path) {
  ParamSet loaded = load_params(path);
  if (loaded.size() != params.size()) throw CorruptDataError("load_params_into: parameter count mismatch");
  for (int i = 0; i < params.size(); ++i) {
    const auto& src = loaded[i];
    auto& dst = params[i];
    if (src.name != dst.name || src.value.rows() != dst.value.rows() ||
        src.value.cols() != dst.value.cols()) {
      throw CorruptDataError("load_params_into: mismatch at parameter '" + dst.name + "'");
    }
    dst.value = src.value;
  }
}

}  // namespace difftse::nn
