#pragma once

// Run manifests: what a command was run on and what it wrote, with content
// digests so outputs can be checked against their inputs later.

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wordpref/error.hpp"
#include "wordpref/scoring.hpp"
#include "wordpref/util.hpp"

namespace wordpref {

struct RunManifest {
  std::string command;
  std::vector<std::string> arguments;
  std::map<std::string, std::string> inputs;   // path -> digest
  std::map<std::string, std::string> outputs;  // path -> digest
  std::vector<std::string> backend_ids;
  std::string scheme_id;
  std::optional<std::uint64_t> seed;
  std::string tool_version = std::string(kToolVersion);
  std::string started;
  std::string finished;
  nlohmann::ordered_json extra = nlohmann::ordered_json::object();

  void add_input(const std::string& path) { inputs[path] = file_digest(path); }
  void add_output(const std::string& path) { outputs[path] = file_digest(path); }
};

inline nlohmann::ordered_json to_json(const RunManifest& m) {
  nlohmann::ordered_json j;
  j["command"] = m.command;
  j["arguments"] = m.arguments;
  j["inputs"] = m.inputs;
  j["outputs"] = m.outputs;
  j["backend_ids"] = m.backend_ids;
  j["scheme_id"] = m.scheme_id;
  j["seed"] = m.seed ? nlohmann::ordered_json(*m.seed) : nlohmann::ordered_json(nullptr);
  j["tool_version"] = m.tool_version;
  j["started"] = m.started;
  j["finished"] = m.finished;
  for (const auto& [k, v] : m.extra.items()) j[k] = v;
  return j;
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  try {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.arguments = j.at("arguments").get<std::vector<std::string>>();
    m.inputs = j.at("inputs").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::map<std::string, std::string>>();
    m.backend_ids = j.at("backend_ids").get<std::vector<std::string>>();
    m.scheme_id = j.at("scheme_id").get<std::string>();
    if (!j.at("seed").is_null()) m.seed = j.at("seed").get<std::uint64_t>();
    m.tool_version = j.at("tool_version").get<std::string>();
    m.started = j.at("started").get<std::string>();
    m.finished = j.at("finished").get<std::string>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
}

inline void write_manifest(const std::string& path, const RunManifest& m) {
  write_file(path, to_json(m).dump(2) + "\n");
}

inline RunManifest load_manifest(const std::string& path) {
  try {
    return manifest_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

// Files whose current digest differs from the recorded one (or that are
// gone), inputs and outputs alike.
inline std::vector<std::string> stale_files(const RunManifest& m) {
  std::vector<std::string> out;
  for (const auto* files : {&m.inputs, &m.outputs})
    for (const auto& [path, digest] : *files) {
      if (!std::filesystem::exists(path) || file_digest(path) != digest) out.push_back(path);
    }
  return out;
}

}  // namespace wordpref
