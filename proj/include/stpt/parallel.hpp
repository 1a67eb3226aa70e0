// Copyright 2026 The STPT Authors
//
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>

namespace stpt {

/// Worker count used by parallel_for; 1 (the default) runs inline.
void set_thread_count(std::size_t n);
std::size_t thread_count();

/// Runs body(begin, end) over a static partition of [0, n). Every index is
/// handled by exactly one call, so kernels that write disjoint outputs are
/// bit-identical for any thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace stpt
