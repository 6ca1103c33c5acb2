#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "faultlens/error.hpp"
#include "faultlens/io.hpp"

namespace faultlens {

/// Content hashes of the files a stage produced, keyed by path relative to
/// the stage's output root. Entries are kept sorted so the serialized form
/// depends only on the file contents.
class Manifest {
 public:
  struct Entry {
    std::string sha256;
    std::uintmax_t bytes = 0;
    bool operator==(const Entry&) const = default;
  };

  explicit Manifest(std::string stage = "") : stage_(std::move(stage)) {}

  /// Writes `content` atomically under root/relative and records its hash.
  void write(const std::filesystem::path& root, const std::string& relative,
             std::string_view content) {
    io::write_file_atomic(root / relative, content);
    entries_[relative] = {io::sha256_hex(content), content.size()};
  }

  /// Records an existing file.
  void add(const std::filesystem::path& root, const std::string& relative) {
    const std::string content = io::read_file(root / relative);
    entries_[relative] = {io::sha256_hex(content), content.size()};
  }

  void merge(const Manifest& other, const std::string& prefix = "") {
    for (const auto& [path, e] : other.entries_) entries_[prefix + path] = e;
  }

  [[nodiscard]] const std::map<std::string, Entry>& entries() const {
    return entries_;
  }
  [[nodiscard]] const std::string& stage() const { return stage_; }

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json files = nlohmann::json::array();
    for (const auto& [path, e] : entries_) {
      files.push_back({{"path", path}, {"sha256", e.sha256}, {"bytes", e.bytes}});
    }
    return {{"format", "faultlens-manifest"},
            {"version", 1},
            {"stage", stage_},
            {"files", files}};
  }

  static Manifest from_json(const nlohmann::json& j) {
    try {
      if (j.at("format") != "faultlens-manifest") {
        throw DataError("not a faultlens manifest");
      }
      Manifest m(j.at("stage").get<std::string>());
      for (const auto& f : j.at("files")) {
        m.entries_[f.at("path").get<std::string>()] = {
            f.at("sha256").get<std::string>(),
            f.at("bytes").get<std::uintmax_t>()};
      }
      return m;
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed manifest: " + std::string(e.what()));
    }
  }

  /// Serialized with sorted keys and a trailing newline.
  [[nodiscard]] std::string dump() const { return to_json().dump(2) + "\n"; }

  /// Writes the manifest itself to root/name. The manifest does not list
  /// itself.
  void save(const std::filesystem::path& root,
            const std::string& name = "manifest.json") const {
    io::write_file_atomic(root / name, dump());
  }

  static Manifest load(const std::filesystem::path& path) {
    try {
      return from_json(nlohmann::json::parse(io::read_file(path)));
    } catch (const nlohmann::json::parse_error& e) {
      throw DataError("malformed manifest '" + path.string() + "': " + e.what());
    }
  }

  /// Re-hashes every listed file under `root`; returns the paths whose
  /// content no longer matches.
  [[nodiscard]] std::vector<std::string> verify(
      const std::filesystem::path& root) const {
    std::vector<std::string> bad;
    for (const auto& [path, e] : entries_) {
      std::error_code ec;
      if (!std::filesystem::exists(root / path, ec) ||
          io::sha256_hex(io::read_file(root / path)) != e.sha256) {
        bad.push_back(path);
      }
    }
    return bad;
  }

  bool operator==(const Manifest&) const = default;

 private:
  std::string stage_;
  std::map<std::string, Entry> entries_;
};

}  // namespace faultlens
