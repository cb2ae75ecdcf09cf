#include "respec/manifest.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "respec/errors.hpp"

namespace respec::run {
namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  size_t e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

[[noreturn]] void malformed(const std::string& path, const std::string& what) {
  throw LoadError(LoadError::Kind::malformed, path + ": " + what);
}

}  // namespace

void save_manifest(const std::string& path, const RunManifest& manifest) {
  json j;
  j["artifact_version"] = manifest.artifact_version;
  j["command"] = manifest.command;
  j["config"] = manifest.config;
  j["dataset_digests"] = manifest.dataset_digests;
  j["outputs"] = manifest.outputs;

  std::ofstream os(path, std::ios::binary);
  if (!os) throw SaveError("cannot open for writing: " + path);
  os << j.dump(2) << '\n';
  os.flush();
  if (!os) throw SaveError("write failed: " + path);
}

RunManifest load_manifest(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError(LoadError::Kind::io, "cannot open: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  if (is.bad()) throw LoadError(LoadError::Kind::io, "read failed: " + path);

  json j;
  try {
    j = json::parse(buf.str());
  } catch (const json::exception& e) {
    malformed(path, e.what());
  }

  RunManifest m;
  try {
    m.artifact_version = j.at("artifact_version").get<std::string>();
    m.command = j.at("command").get<std::string>();
    m.config = j.at("config").get<std::map<std::string, std::string>>();
    m.dataset_digests = j.at("dataset_digests").get<std::map<std::string, std::string>>();
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    malformed(path, e.what());
  }
  if (m.artifact_version != kArtifactVersion) {
    malformed(path, "artifact_version '" + m.artifact_version + "' is not '" +
                        kArtifactVersion + "'");
  }
  return m;
}

std::map<std::string, std::string> parse_config_text(std::string_view text) {
  std::map<std::string, std::string> out;
  size_t pos = 0;
  for (int line_no = 1; pos <= text.size(); ++line_no) {
    size_t nl = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, nl == std::string_view::npos ? text.size() - pos : nl - pos);
    pos = nl == std::string_view::npos ? text.size() + 1 : nl + 1;

    size_t hash = line.find('#');
    if (hash != std::string_view::npos) line = line.substr(0, hash);
    if (trim(line).empty()) continue;

    size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": expected key = value");
    }
    std::string key = trim(line.substr(0, eq));
    if (key.empty()) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": empty key");
    }
    if (out.count(key)) {
      throw std::invalid_argument("config line " + std::to_string(line_no) +
                                  ": duplicate key '" + key + "'");
    }
    out[key] = trim(line.substr(eq + 1));
  }
  return out;
}

std::map<std::string, std::string> load_config_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError(LoadError::Kind::io, "cannot open: " + path);
  std::stringstream buf;
  buf << is.rdbuf();
  if (is.bad()) throw LoadError(LoadError::Kind::io, "read failed: " + path);
  return parse_config_text(buf.str());
}

}  // namespace respec::run
