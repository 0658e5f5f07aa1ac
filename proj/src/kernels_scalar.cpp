#include <cmath>
#include <cstddef>

#include "ape/kernels.hpp"

// Reference kernels. Plain loops, no manual unrolling; reductions accumulate
// left to right so results are reproducible and easy to reason about.

namespace ape::kern {
namespace {

template <class T>
void add_(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

template <class T>
void sub_(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

template <class T>
void mul_(const T* a, const T* b, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

template <class T>
void axpy_(T alpha, const T* x, T* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

template <class T>
void scale_(const T* x, T alpha, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = alpha * x[i];
}

template <class T>
void relu_(const T* x, T* out, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
}

template <class T>
void relu_grad_(const T* x, const T* dy, T* dx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i] > T(0)) dx[i] += dy[i];
  }
}

template <class T>
T dot_(const T* a, const T* b, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

template <class T>
T sum_(const T* x, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += x[i];
  return acc;
}

template <class T>
T abs_sum_(const T* x, std::size_t n) {
  T acc = 0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(x[i]);
  return acc;
}

template <class T>
T max_(const T* x, std::size_t n) {
  T best = x[0];
  for (std::size_t i = 1; i < n; ++i) {
    if (x[i] > best) best = x[i];
  }
  return best;
}

// ikj order: the k loop broadcasts a[i,k] across row c[i,:]. The AVX2 variant
// keeps the same loop structure, so per-element accumulation order matches.
template <class T>
void matmul_nn_(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    if (!accumulate) {
      for (std::size_t j = 0; j < n; ++j) crow[j] = T(0);
    }
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <class T>
void matmul_nt_(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      const T* brow = b + j * k;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      if (accumulate) {
        c[i * n + j] += acc;
      } else {
        c[i * n + j] = acc;
      }
    }
  }
}

template <class T>
void matmul_tn_(const T* a, const T* b, T* c, std::size_t m, std::size_t k,
                std::size_t n, bool accumulate) {
  if (!accumulate) {
    for (std::size_t i = 0; i < m * n; ++i) c[i] = T(0);
  }
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T api = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += api * brow[j];
    }
  }
}

template <class T>
Table<T> make_table() {
  Table<T> t;
  t.add = add_<T>;
  t.sub = sub_<T>;
  t.mul = mul_<T>;
  t.axpy = axpy_<T>;
  t.scale = scale_<T>;
  t.relu = relu_<T>;
  t.relu_grad = relu_grad_<T>;
  t.dot = dot_<T>;
  t.sum = sum_<T>;
  t.abs_sum = abs_sum_<T>;
  t.max = max_<T>;
  t.matmul_nn = matmul_nn_<T>;
  t.matmul_nt = matmul_nt_<T>;
  t.matmul_tn = matmul_tn_<T>;
  return t;
}

}  // namespace

const Table<float>& scalar_table_f32() {
  static const Table<float> t = make_table<float>();
  return t;
}

const Table<double>& scalar_table_f64() {
  static const Table<double> t = make_table<double>();
  return t;
}

}  // namespace ape::kern
