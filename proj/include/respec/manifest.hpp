#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace respec::run {

// Format stamp written into every manifest; readers reject anything else.
inline constexpr const char* kArtifactVersion = "respec/1";

// Everything needed to re-execute a run and get byte-identical outputs:
// the subcommand, every option at its resolved value (no defaults left
// implicit), and digests of the datasets the run consumed and produced.
// Deliberately free of timestamps, hostnames, and other non-reproducible
// fields.
struct RunManifest {
  std::string artifact_version = kArtifactVersion;
  std::string command;                                 // CLI subcommand name
  std::map<std::string, std::string> config;           // option key -> value
  std::map<std::string, std::string> dataset_digests;  // logical name -> hex digest
  std::vector<std::string> outputs;                    // files the run wrote
};

// Stable bytes: sorted keys, two-space indent, trailing newline. Writing the
// same manifest twice produces identical files. Throws SaveError on I/O.
void save_manifest(const std::string& path, const RunManifest& manifest);

// Throws LoadError: kind io when the file is absent or unreadable, kind
// malformed when it is not valid JSON, lacks a required field, or carries a
// different artifact_version.
RunManifest load_manifest(const std::string& path);

// Line-oriented `key = value` text (the CLI config-file format). '#' starts a
// comment, blank lines are skipped, whitespace around key and value is
// trimmed, and the value may be empty. The split is at the first '=', so
// values may themselves contain '='. Throws std::invalid_argument naming the
// 1-based line for a line with no '=', an empty key, or a repeated key.
std::map<std::string, std::string> parse_config_text(std::string_view text);

// parse_config_text over a file; throws LoadError(io) when the file is
// absent or unreadable.
std::map<std::string, std::string> load_config_file(const std::string& path);

}  // namespace respec::run
