#pragma once

#include <algorithm>
#include <cstddef>
#include <exception>
#include <thread>
#include <vector>

namespace syncnoise {

/// Splits [0, n) into `chunks` contiguous ranges and runs `fn(chunk, begin,
/// end)` on up to `threads` workers. Chunk boundaries depend only on `n` and
/// `chunks`, so per-chunk results merged in chunk order are deterministic.
template <typename Fn>
void parallel_chunks(std::size_t n, std::size_t chunks, int threads, Fn&& fn)
{
  chunks = std::max<std::size_t>(1, std::min(chunks, n));
  auto bounds = [&](std::size_t c) { return c * n / chunks; };
  if (threads <= 1 || chunks == 1)
  {
    for (std::size_t c = 0; c < chunks; ++c)
      fn(c, bounds(c), bounds(c + 1));
    return;
  }
  std::vector<std::exception_ptr> errors(chunks);
  std::vector<std::thread> pool;
  const std::size_t workers = std::min<std::size_t>(threads, chunks);
  for (std::size_t w = 0; w < workers; ++w)
    pool.emplace_back([&, w] {
      for (std::size_t c = w; c < chunks; c += workers)
      {
        try
        {
          fn(c, bounds(c), bounds(c + 1));
        }
        catch (...)
        {
          errors[c] = std::current_exception();
        }
      }
    });
  for (auto& t : pool)
    t.join();
  for (auto& e : errors)
    if (e)
      std::rethrow_exception(e);
}

} // namespace syncnoise
