#pragma once

#include <map>
#include <string>
#include <vector>

namespace ape {

inline constexpr const char* kToolName = "ape";
inline constexpr const char* kToolVersion = "0.1.0";

// Run provenance written alongside every artifact-producing command's
// outputs: command line, seed, config digest, produced files, timestamps.
struct RunManifest {
  std::string command;
  std::vector<std::string> argv;
  std::uint64_t seed = 0;
  bool has_seed = false;
  std::string config_digest;
  std::vector<std::string> outputs;
  std::map<std::string, std::string> notes;
};

void write_manifest(const RunManifest& manifest, const std::string& path);

}  // namespace ape
