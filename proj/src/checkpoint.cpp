#include "ape/checkpoint.hpp"

#include <algorithm>
#include <cinttypes>
#include <cstdio>

namespace ape {

namespace fs = std::filesystem;

CheckpointStore::CheckpointStore(std::string dir, std::int64_t keep_last)
    : dir_(std::move(dir)), keep_last_(keep_last) {
  if (keep_last_ < 1) throw ConfigError("keep_last must be >= 1");
  std::error_code ec;
  fs::create_directories(dir_, ec);
  if (ec) throw IoError("cannot create checkpoint directory " + dir_ + ": " + ec.message());
}

std::string CheckpointStore::checkpoint_path(std::int64_t step) const {
  char name[32];
  std::snprintf(name, sizeof name, "ckpt_%09" PRId64 ".bin", step);
  return (fs::path(dir_) / name).string();
}

std::string CheckpointStore::best_path() const {
  return (fs::path(dir_) / "best_ppl.bin").string();
}

void CheckpointStore::record_saved(std::int64_t step, const std::string& path) {
  if (!saved_.empty() && step <= saved_.back().first) {
    throw DataError("checkpoint steps must increase: " + std::to_string(step) + " after " +
                    std::to_string(saved_.back().first));
  }
  saved_.emplace_back(step, path);
  while (static_cast<std::int64_t>(saved_.size()) > keep_last_) {
    std::error_code ec;
    fs::remove(saved_.front().second, ec);  // eviction failure is not fatal
    saved_.erase(saved_.begin());
  }
}

std::vector<std::string> CheckpointStore::retained() const {
  std::vector<std::string> out;
  out.reserve(saved_.size());
  for (const auto& [_, p] : saved_) out.push_back(p);
  return out;
}

std::vector<std::int64_t> CheckpointStore::steps() const {
  std::vector<std::int64_t> out;
  out.reserve(saved_.size());
  for (const auto& [s, _] : saved_) out.push_back(s);
  return out;
}

void CheckpointStore::scan_existing() {
  saved_.clear();
  for (const auto& entry : fs::directory_iterator(dir_)) {
    const auto name = entry.path().filename().string();
    std::int64_t step = 0;
    if (std::sscanf(name.c_str(), "ckpt_%" SCNd64 ".bin", &step) == 1) {
      saved_.emplace_back(step, entry.path().string());
    }
  }
  std::sort(saved_.begin(), saved_.end());
  while (static_cast<std::int64_t>(saved_.size()) > keep_last_) saved_.erase(saved_.begin());
}

}  // namespace ape
