#pragma once

#include <cstdlib>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "asag/alerting.hpp"
#include "asag/common.hpp"
#include "asag/record_store.hpp"
#include "asag/remote_grader.hpp"

namespace asag {

/// Files backing one report dataset served under GET /reports/{kind}.
struct DatasetSpec {
  std::optional<std::filesystem::path> predictions;
  std::optional<std::filesystem::path> split;
  std::optional<std::filesystem::path> triples;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::filesystem::path store_dir = "store";
  int workers = 2;
  RemoteGraderConfig grader;  // empty endpoint selects the offline baseline grader
  AlertPolicy policy;
  std::optional<std::filesystem::path> policy_file;
  std::map<std::string, DatasetSpec> datasets;

  void set_listen(const std::string& listen) {
    const auto colon = listen.rfind(':');
    if (colon == std::string::npos) throw Error(ErrorCode::InvalidConfig, "listen must be host:port, got " + listen);
    host = listen.substr(0, colon);
    port = std::atoi(listen.substr(colon + 1).c_str());
  }

  /// Reads the config file (paths relative to its directory), then applies
  /// ASAG_LISTEN, ASAG_STORE, ASAG_WORKERS, ASAG_POLICY_FILE and the
  /// ASAG_GRADER_* variables.
  static ServiceConfig load(const std::optional<std::filesystem::path>& file) {
    ServiceConfig c;
    std::filesystem::path base = ".";
    if (file) {
      base = file->has_parent_path() ? file->parent_path() : ".";
      Json j;
      try {
        j = Json::parse(read_file(*file));
      } catch (const Json::parse_error& e) {
        throw Error(ErrorCode::InvalidConfig, file->string() + ": " + e.what());
      }
      c.apply(j, base);
    }
    c.apply_env();
    if (c.policy_file) c.policy = AlertPolicy::from_json(Json::parse(read_file(*c.policy_file)));
    c.policy.validate();
    if (c.workers < 1) c.workers = 1;
    return c;
  }

  void apply(const Json& j, const std::filesystem::path& base) {
    auto resolve = [&](const std::string& p) { return std::filesystem::path(p).is_absolute() ? std::filesystem::path(p) : base / p; };
    if (j.contains("listen")) set_listen(j["listen"].get<std::string>());
    if (j.contains("store")) store_dir = resolve(j["store"].get<std::string>());
    workers = j.value("workers", workers);
    if (j.contains("grader")) grader = RemoteGraderConfig::from_json(j["grader"]);
    if (j.contains("policy")) policy = AlertPolicy::from_json(j["policy"]);
    if (j.contains("policy_file")) policy_file = resolve(j["policy_file"].get<std::string>());
    if (j.contains("datasets")) {
      for (const auto& [id, d] : j["datasets"].items()) {
        DatasetSpec spec;
        if (d.contains("predictions")) spec.predictions = resolve(d["predictions"].get<std::string>());
        if (d.contains("split")) spec.split = resolve(d["split"].get<std::string>());
        if (d.contains("triples")) spec.triples = resolve(d["triples"].get<std::string>());
        datasets[id] = spec;
      }
    }
  }

  void apply_env() {
    if (const char* v = std::getenv("ASAG_LISTEN")) set_listen(v);
    if (const char* v = std::getenv("ASAG_STORE")) store_dir = v;
    if (const char* v = std::getenv("ASAG_WORKERS")) workers = std::atoi(v);
    if (const char* v = std::getenv("ASAG_POLICY_FILE")) policy_file = std::filesystem::path(v);
    grader.apply_env();
  }
};

}  // namespace asag
