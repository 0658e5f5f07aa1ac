#pragma once

#include <map>
#include <string>

#include "ape/model.hpp"
#include "ape/train.hpp"

namespace ape {

// Everything a training run needs, parsed from a key=value config file with
// CLI overrides on top. vocab_size and max sequence bookkeeping come from the
// data, not the file.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

// key=value lines; '#' starts a comment, blank lines ignored.
RunConfig parse_config_file(const std::string& path);

// Applies one key=value pair; unknown keys are config errors.
void apply_config_entry(RunConfig& cfg, const std::string& key, const std::string& value);

// Canonical serialization (sorted keys) used for digests and manifests.
std::string serialize_config(const RunConfig& cfg);

// FNV-1a 64-bit hex digest of the canonical serialization.
std::string config_digest(const RunConfig& cfg);

// Model geometry as checkpoint metadata, so checkpoints are self-describing.
std::map<std::string, std::string> model_config_to_meta(const ModelConfig& cfg);
ModelConfig model_config_from_meta(const std::map<std::string, std::string>& meta);

}  // namespace ape
