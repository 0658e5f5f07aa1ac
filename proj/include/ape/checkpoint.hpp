#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "ape/errors.hpp"
#include "ape/model.hpp"

namespace ape {

// Checkpoint files: "#ckpt-v1\n" then little-endian binary — metadata pairs
// followed by named tensors (name, dtype tag, shape, raw data). Round-trips
// are bit-exact.

struct CheckpointMeta {
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  std::string config_digest;
  std::map<std::string, std::string> extra;  // e.g. model geometry
};

namespace detail {

inline void put_u64(std::ofstream& out, std::uint64_t v) {
  unsigned char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(v >> (8 * i));
  out.write(reinterpret_cast<const char*>(buf), 8);
}

inline std::uint64_t get_u64(std::ifstream& in) {
  unsigned char buf[8];
  in.read(reinterpret_cast<char*>(buf), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return v;
}

inline void put_str(std::ofstream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_str(std::ifstream& in) {
  const auto n = get_u64(in);
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

template <class T>
const char* dtype_tag();
template <>
inline const char* dtype_tag<float>() {
  return "f32";
}
template <>
inline const char* dtype_tag<double>() {
  return "f64";
}

}  // namespace detail

template <class T>
void save_checkpoint(const Parameters<T>& params, const CheckpointMeta& meta,
                     const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << "#ckpt-v1\n";
  detail::put_u64(out, 3 + meta.extra.size());
  detail::put_str(out, "step");
  detail::put_str(out, std::to_string(meta.step));
  detail::put_str(out, "epoch");
  detail::put_str(out, std::to_string(meta.epoch));
  detail::put_str(out, "config_digest");
  detail::put_str(out, meta.config_digest);
  for (const auto& [key, value] : meta.extra) {
    detail::put_str(out, key);
    detail::put_str(out, value);
  }

  detail::put_u64(out, params.tensors.size());
  for (const auto& [name, t] : params.tensors) {
    detail::put_str(out, name);
    detail::put_str(out, detail::dtype_tag<T>());
    detail::put_u64(out, static_cast<std::uint64_t>(t.rank()));
    for (auto d : t.shape()) detail::put_u64(out, static_cast<std::uint64_t>(d));
    detail::put_u64(out, static_cast<std::uint64_t>(t.numel()) * sizeof(T));
    out.write(reinterpret_cast<const char*>(t.data()),
              static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(T))));
  }
  if (!out) throw IoError("write failed for checkpoint " + path);
}

template <class T>
std::pair<Parameters<T>, CheckpointMeta> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string header;
  std::getline(in, header);
  if (header != "#ckpt-v1") throw DataError(path + ": missing #ckpt-v1 header");

  CheckpointMeta meta;
  const auto n_meta = detail::get_u64(in);
  for (std::uint64_t i = 0; i < n_meta; ++i) {
    const auto key = detail::get_str(in);
    const auto value = detail::get_str(in);
    if (key == "step") {
      meta.step = std::stoll(value);
    } else if (key == "epoch") {
      meta.epoch = std::stoll(value);
    } else if (key == "config_digest") {
      meta.config_digest = value;
    } else {
      meta.extra.emplace(key, value);
    }
  }

  Parameters<T> params;
  const auto n_tensors = detail::get_u64(in);
  for (std::uint64_t i = 0; i < n_tensors; ++i) {
    const auto name = detail::get_str(in);
    const auto tag = detail::get_str(in);
    if (tag != detail::dtype_tag<T>()) {
      throw DataError(path + ": tensor " + name + " has dtype " + tag + ", expected " +
                      detail::dtype_tag<T>());
    }
    const auto rank = detail::get_u64(in);
    Shape shape;
    for (std::uint64_t d = 0; d < rank; ++d) {
      shape.push_back(static_cast<std::int64_t>(detail::get_u64(in)));
    }
    const auto bytes = detail::get_u64(in);
    Tensor<T> t(shape);
    if (bytes != static_cast<std::uint64_t>(t.numel()) * sizeof(T)) {
      throw DataError(path + ": tensor " + name + " has inconsistent byte length");
    }
    in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(bytes));
    params.tensors.emplace(name, std::move(t));
  }
  if (!in) throw DataError(path + ": truncated checkpoint");
  return {std::move(params), std::move(meta)};
}

// Elementwise arithmetic mean of several parameter sets, accumulated at
// double precision (averaging identical checkpoints reproduces them bitwise).
template <class T>
Parameters<T> average_parameters(const std::vector<const Parameters<T>*>& members) {
  if (members.empty()) throw DataError("average: no parameter sets");
  Parameters<T> out;
  const double count = double(members.size());
  for (const auto& [name, first] : members.front()->tensors) {
    Tensor<T> avg(first.shape());
    std::vector<double> acc(static_cast<std::size_t>(first.numel()), 0.0);
    for (const auto* m : members) {
      const auto& t = m->at(name);
      if (t.shape() != first.shape()) {
        throw DataError("average: shape mismatch for " + name);
      }
      for (std::int64_t i = 0; i < t.numel(); ++i) acc[static_cast<std::size_t>(i)] += t.at(i);
    }
    for (std::int64_t i = 0; i < avg.numel(); ++i) {
      avg.at(i) = static_cast<T>(acc[static_cast<std::size_t>(i)] / count);
    }
    out.tensors.emplace(name, std::move(avg));
  }
  return out;
}

// Ring of the most recent checkpoints on disk, plus a separately tracked
// best-validation-perplexity snapshot.
class CheckpointStore {
 public:
  CheckpointStore(std::string dir, std::int64_t keep_last);

  // Appends ckpt_<step>.bin and evicts the oldest beyond keep_last.
  template <class T>
  void save(const Parameters<T>& params, const CheckpointMeta& meta) {
    const std::string path = checkpoint_path(meta.step);
    save_checkpoint(params, meta, path);
    record_saved(meta.step, path);
  }

  template <class T>
  void save_best(const Parameters<T>& params, const CheckpointMeta& meta) {
    save_checkpoint(params, meta, best_path());
  }

  // Paths of retained checkpoints in increasing step order.
  std::vector<std::string> retained() const;
  std::vector<std::int64_t> steps() const;
  std::string best_path() const;
  const std::string& dir() const { return dir_; }

  // Picks up ckpt_*.bin files already present in the directory.
  void scan_existing();

 private:
  std::string checkpoint_path(std::int64_t step) const;
  void record_saved(std::int64_t step, const std::string& path);

  std::string dir_;
  std::int64_t keep_last_;
  std::vector<std::pair<std::int64_t, std::string>> saved_;  // step-sorted
};

// Partitions the retained checkpoints, oldest first, into adjacent windows of
// `window` and averages each. Short stores yield fewer windows (with a
// warning on stderr); a leftover tail shorter than `window` is dropped.
template <class T>
std::vector<Parameters<T>> average_checkpoints(const std::vector<std::string>& paths,
                                               std::int64_t window,
                                               std::int64_t expected_count = 0) {
  if (window < 1) throw ConfigError("average window must be >= 1");
  const std::int64_t n = static_cast<std::int64_t>(paths.size());
  const std::int64_t windows = n / window;
  if (windows == 0) {
    throw DataError("checkpoint averaging needs at least " + std::to_string(window) +
                    " checkpoints, found " + std::to_string(n));
  }
  if (expected_count > 0 && n < expected_count) {
    std::fprintf(stderr,
                 "warning: %lld checkpoints retained (expected %lld); producing %lld averages\n",
                 static_cast<long long>(n), static_cast<long long>(expected_count),
                 static_cast<long long>(windows));
  }
  std::vector<Parameters<T>> out;
  for (std::int64_t w = 0; w < windows; ++w) {
    std::vector<Parameters<T>> loaded;
    loaded.reserve(static_cast<std::size_t>(window));
    for (std::int64_t i = 0; i < window; ++i) {
      loaded.push_back(load_checkpoint<T>(paths[static_cast<std::size_t>(w * window + i)]).first);
    }
    std::vector<const Parameters<T>*> refs;
    for (const auto& p : loaded) refs.push_back(&p);
    out.push_back(average_parameters(refs));
  }
  return out;
}

}  // namespace ape
