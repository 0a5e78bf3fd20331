#ifndef KMPC_PARALLEL_HPP
#define KMPC_PARALLEL_HPP

#include <cstdint>
#include <exception>
#include <algorithm>
#include <functional>
#include <thread>
#include <vector>

namespace kmpc {

/// Runs body(i) for i in [0, count) on up to `jobs` threads. Results must be
/// written to per-index slots so the outcome does not depend on scheduling.
/// The first exception (by index) is rethrown after all workers finish.
inline void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& body) {
  const std::size_t workers = std::min<std::size_t>(count, jobs > 1 ? static_cast<std::size_t>(jobs) : 1);
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) body(i);
    return;
  }
  std::vector<std::exception_ptr> errors(count);
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers) {
        try {
          body(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

/// splitmix64 finalizer; derives independent per-item seeds from a study seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace kmpc

#endif  // KMPC_PARALLEL_HPP
