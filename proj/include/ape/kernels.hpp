#pragma once

#include <cstddef>
#include <string>

namespace ape::kern {

// Dense-array primitives behind the tensor engine. Every entry point has a
// scalar reference implementation and, on x86-64 with AVX2+FMA, a vectorized
// variant. The backend is picked once at startup from cpuid and can be
// overridden (APE_KERNEL_BACKEND=scalar|avx2 or set_backend) — equivalence
// tests run both and compare.
//
// Elementwise kernels (add/sub/mul/axpy/scale/relu) produce bit-identical
// results on every backend. Reductions and matmuls reassociate, so their
// cross-backend agreement is up to rounding only.

enum class Backend { scalar, avx2 };

bool avx2_supported();
Backend active_backend();
void set_backend(Backend b);  // throws ConfigError if unsupported on this CPU
std::string backend_name(Backend b);

template <class T>
struct Table {
  // out[i] = a[i] (op) b[i]
  void (*add)(const T* a, const T* b, T* out, std::size_t n);
  void (*sub)(const T* a, const T* b, T* out, std::size_t n);
  void (*mul)(const T* a, const T* b, T* out, std::size_t n);
  // y[i] += alpha * x[i]
  void (*axpy)(T alpha, const T* x, T* y, std::size_t n);
  // out[i] = alpha * x[i]
  void (*scale)(const T* x, T alpha, T* out, std::size_t n);
  void (*relu)(const T* x, T* out, std::size_t n);
  // dx[i] += dy[i] where x[i] > 0
  void (*relu_grad)(const T* x, const T* dy, T* dx, std::size_t n);

  T (*dot)(const T* a, const T* b, std::size_t n);
  T (*sum)(const T* x, std::size_t n);
  T (*abs_sum)(const T* x, std::size_t n);
  T (*max)(const T* x, std::size_t n);  // n must be >= 1

  // c[m,n] (+)= a[m,k] * b[k,n]
  void (*matmul_nn)(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                    std::size_t n, bool accumulate);
  // c[m,n] (+)= a[m,k] * b[n,k]^T
  void (*matmul_nt)(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                    std::size_t n, bool accumulate);
  // c[m,n] (+)= a[k,m]^T * b[k,n]
  void (*matmul_tn)(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                    std::size_t n, bool accumulate);
};

template <class T>
const Table<T>& table(Backend b);

// Table for the active backend.
template <class T>
inline const Table<T>& table() {
  return table<T>(active_backend());
}

}  // namespace ape::kern
