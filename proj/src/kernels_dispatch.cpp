#include <atomic>
#include <cstdlib>
#include <string>

#include "ape/errors.hpp"
#include "ape/kernels.hpp"
#include "kernel_tables.hpp"

namespace ape::kern {

namespace {

Backend detect_default() {
  if (const char* env = std::getenv("APE_KERNEL_BACKEND")) {
    const std::string want(env);
    if (want == "scalar") return Backend::scalar;
    if (want == "avx2") {
      if (!avx2_supported()) {
        throw ConfigError("APE_KERNEL_BACKEND=avx2 but this CPU has no AVX2/FMA");
      }
      return Backend::avx2;
    }
    throw ConfigError("unknown APE_KERNEL_BACKEND value: " + want);
  }
  return avx2_supported() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& backend_slot() {
  static std::atomic<Backend> slot{detect_default()};
  return slot;
}

}  // namespace

bool avx2_supported() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

Backend active_backend() { return backend_slot().load(std::memory_order_relaxed); }

void set_backend(Backend b) {
  if (b == Backend::avx2 && !avx2_supported()) {
    throw ConfigError("AVX2 kernel backend requested but unsupported on this CPU");
  }
  backend_slot().store(b, std::memory_order_relaxed);
}

std::string backend_name(Backend b) {
  return b == Backend::avx2 ? "avx2" : "scalar";
}

template <>
const Table<float>& table<float>(Backend b) {
#if defined(__x86_64__) || defined(__i386__)
  if (b == Backend::avx2) return avx2_table_f32();
#endif
  (void)b;
  return scalar_table_f32();
}

template <>
const Table<double>& table<double>(Backend b) {
#if defined(__x86_64__) || defined(__i386__)
  if (b == Backend::avx2) return avx2_table_f64();
#endif
  (void)b;
  return scalar_table_f64();
}

}  // namespace ape::kern
