#include "emag/data.hpp"
#include "emag/errors.hpp"

#include <zlib.h>

#include <fstream>
#include <sstream>

namespace emag::data {

namespace {

bool gzipped(const std::filesystem::path& path) { return path.extension() == ".gz"; }

}  // namespace

std::string read_text(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error("no such file: " + path.string());
  if (!gzipped(path)) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw Error("cannot open " + path.string());
  std::string out;
  char buf[1 << 16];
  int n;
  while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw Error("corrupt gzip stream in " + path.string());
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  if (!gzipped(path)) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << text;
    if (!out) throw Error("write failed for " + path.string());
    return;
  }
  gzFile f = gzopen(path.string().c_str(), "wb6");
  if (!f) throw Error("cannot write " + path.string());
  const bool ok = text.empty() || gzwrite(f, text.data(), static_cast<unsigned>(text.size())) > 0;
  if (gzclose(f) != Z_OK || !ok) throw Error("write failed for " + path.string());
}

void write_dataset(const std::filesystem::path& path, std::span<const SequenceSample> samples) {
  std::string text;
  for (const auto& s : samples) {
    text += nlohmann::json(s).dump();
    text += '\n';
  }
  write_text(path, text);
}

std::vector<SequenceSample> read_dataset(const std::filesystem::path& path) {
  const std::string text = read_text(path);
  std::vector<SequenceSample> out;
  std::istringstream in(text);
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(sample_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    } catch (const ValidationError& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    }
  }
  return out;
}

}  // namespace emag::data
