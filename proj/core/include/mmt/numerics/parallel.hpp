// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>

namespace mmt::num {

/// Worker count from MMT_NUM_THREADS (default 1).
std::size_t configured_threads();

/// Runs body(begin, end) over contiguous chunks of [0, n). Chunks are
/// independent, so results do not depend on the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace mmt::num
