#pragma once

#include "ape/kernels.hpp"

// Internal: per-backend table constructors, linked by the dispatcher.

namespace ape::kern {

const Table<float>& scalar_table_f32();
const Table<double>& scalar_table_f64();

#if defined(__x86_64__) || defined(__i386__)
const Table<float>& avx2_table_f32();
const Table<double>& avx2_table_f64();
#endif

}  // namespace ape::kern
