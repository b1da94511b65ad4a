#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "asag/alerting.hpp"
#include "asag/common.hpp"
#include "asag/record_store.hpp"

namespace asag {

inline constexpr const char* kToolVersion = "0.3.0";

struct ManifestFile {
  std::filesystem::path path;
  std::string content_hash;  // FNV-1a of the bytes; empty if the file is missing
};

/// Describes one CLI run: enough to rerun it and check its outputs.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  Json config = Json::object();
  std::uint64_t seed = 0;
  std::vector<ManifestFile> inputs;
  std::vector<ManifestFile> outputs;
  std::string started_at;
  std::string finished_at;

  std::string config_hash() const { return hex64(fnv1a64(config.dump())); }

  static ManifestFile describe(const std::filesystem::path& p) {
    ManifestFile f{p, ""};
    if (std::filesystem::is_regular_file(p)) f.content_hash = hex64(fnv1a64(read_file(p)));
    return f;
  }

  Json to_json() const {
    auto files = [](const std::vector<ManifestFile>& v) {
      Json a = Json::array();
      for (const auto& f : v) a.push_back(Json{{"path", f.path.string()}, {"fnv1a64", f.content_hash}});
      return a;
    };
    Json j = Json::object();
    j["command"] = command;
    j["argv"] = argv;
    j["config"] = config;
    j["config_hash"] = config_hash();
    j["seed"] = seed;
    j["inputs"] = files(inputs);
    j["outputs"] = files(outputs);
    j["started_at"] = started_at;
    j["finished_at"] = finished_at;
    j["tool_version"] = kToolVersion;
    return j;
  }
};

}  // namespace asag
