#include "ape/manifest.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include <json.hpp>

#include "ape/errors.hpp"

namespace ape {

namespace {

std::string utc_now() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

void write_manifest(const RunManifest& manifest, const std::string& path) {
  nlohmann::json j;
  j["tool"] = kToolName;
  j["version"] = kToolVersion;
  j["command"] = manifest.command;
  j["command_line"] = manifest.argv;
  if (manifest.has_seed) j["seed"] = manifest.seed;
  if (!manifest.config_digest.empty()) j["config_digest"] = manifest.config_digest;
  j["outputs"] = manifest.outputs;
  if (!manifest.notes.empty()) j["notes"] = manifest.notes;
  j["created"] = utc_now();

  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest " + path);
  out << j.dump(2) << '\n';
  if (!out) throw IoError("write failed for manifest " + path);
}

}  // namespace ape
