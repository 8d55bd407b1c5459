#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace kam {

// Number of worker threads used by parallel sections. Defaults to the
// KAM_THREADS environment variable when set, else hardware concurrency.
int threadCount();
void setThreadCount(int n);

// Runs body(i) for i in [0, n) on up to threadCount() threads. Iterations are
// split into contiguous chunks; body must only write to per-index state so
// results do not depend on the thread count.
void parallelFor(std::size_t n, const std::function<void(std::size_t)>& body);

// Deterministic 64-bit seed derivation (splitmix64 of seed and stream).
std::uint64_t deriveSeed(std::uint64_t seed, std::uint64_t stream);

} // namespace kam
