#pragma once

#include <cstdint>
#include <filesystem>
#include <initializer_list>
#include <string>

#include <json.hpp>

namespace mpseq {

using ordered_json = nlohmann::ordered_json;

/// Throw InvalidConfig naming `<context>.<key>` for the first key of `j`
/// outside `allowed`, or when `j` is not an object.
void reject_unknown_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                         const std::string& context);

/// Read `j[key]` as T, turning type errors into InvalidConfig naming the key.
template <typename T>
T get_field(const nlohmann::json& j, const char* key, const std::string& context);

/// Stable 16-hex-digit fingerprint of a JSON document (FNV-1a over dump()).
std::string fingerprint(const ordered_json& j);

std::string hex64(std::uint64_t v);

/// Write via "<path>.partial" and rename; creates parent directories.
/// Throws Unwritable.
void write_text_file(const std::filesystem::path& path, const std::string& content);

std::string read_text_file(const std::filesystem::path& path);

}  // namespace mpseq

#include "mpseq/error.hpp"

namespace mpseq {

template <typename T>
T get_field(const nlohmann::json& j, const char* key, const std::string& context) {
  const std::string path = context.empty() ? std::string(key) : context + "." + key;
  const auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorKind::InvalidConfig, "missing key '" + path + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error(ErrorKind::InvalidConfig, "bad value for '" + path + "': " + it->dump());
  }
}

}  // namespace mpseq
