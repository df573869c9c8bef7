#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace ebtm {

/// Runs `body(block_index, begin, end)` over fixed-size blocks of [0, count).
///
/// The block decomposition depends only on `count` and `block_size`, never on
/// the thread count, and each block writes its own output slot; callers then
/// reduce slots in block order. Under that contract results are bit-identical
/// for any `threads` value.
inline void parallel_blocks(std::size_t count, std::size_t block_size, int threads,
                            const std::function<void(std::size_t, std::size_t, std::size_t)>& body) {
  if (count == 0) return;
  if (block_size == 0) block_size = 1;
  const std::size_t num_blocks = (count + block_size - 1) / block_size;
  auto run_block = [&](std::size_t bi) {
    const std::size_t begin = bi * block_size;
    const std::size_t end = std::min(count, begin + block_size);
    body(bi, begin, end);
  };
  if (threads <= 1 || num_blocks <= 1) {
    for (std::size_t bi = 0; bi < num_blocks; ++bi) run_block(bi);
    return;
  }
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(threads), num_blocks);
  std::atomic<std::size_t> next{0};
  std::exception_ptr first_error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t bi = next.fetch_add(1);
        if (bi >= num_blocks) return;
        try {
          run_block(bi);
        } catch (...) {
          std::lock_guard<std::mutex> lock(error_mutex);
          if (!first_error) first_error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

inline std::size_t num_parallel_blocks(std::size_t count, std::size_t block_size) {
  if (count == 0) return 0;
  if (block_size == 0) block_size = 1;
  return (count + block_size - 1) / block_size;
}

}  // namespace ebtm
