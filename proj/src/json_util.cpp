#include "mpseq/json_util.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mpseq/random.hpp"

namespace mpseq {

void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context) {
  if (!j.is_object()) {
    throw Error(ErrorKind::InvalidConfig, "'" + (context.empty() ? std::string("<root>") : context) +
                                              "' must be an object");
  }
  for (const auto& item : j.items()) {
    const bool known = std::any_of(allowed.begin(), allowed.end(),
                                   [&](const char* a) { return item.key() == a; });
    if (!known) {
      throw Error(ErrorKind::InvalidConfig,
                  "unknown key '" + (context.empty() ? item.key() : context + "." + item.key()) + "'");
    }
  }
}

std::string hex64(std::uint64_t v) {
  static const char* kDigits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kDigits[v & 0xF];
    v >>= 4;
  }
  return out;
}

std::string fingerprint(const ordered_json& j) {
  const std::string text = j.dump();
  return hex64(fnv1a64(text.data(), text.size()));
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  const std::filesystem::path tmp = path.string() + ".partial";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::Unwritable, "cannot write " + tmp.string());
    out << content;
    if (!out) throw Error(ErrorKind::Unwritable, "short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::Unwritable, "cannot rename to " + path.string() + ": " + ec.message());
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::UnreadableFile, "cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace mpseq
