#pragma once

#include <Eigen/Core>

#include <algorithm>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace bezgraph
{
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Number of worker threads used by the batch kernels. Defaults to the
/// hardware concurrency; set to 1 to force serial execution.
int workerCount();
void setWorkerCount(int count);

/// Runs fn(begin, end) over contiguous chunks of [0, n). Each index is visited
/// exactly once, so kernels that only write to slot i are deterministic
/// regardless of the worker count.
template <typename Fn>
void parallelChunks(std::size_t n, Fn&& fn)
{
  const std::size_t workers = std::min<std::size_t>(
      static_cast<std::size_t>(std::max(1, workerCount())), n);
  if (workers <= 1)
  {
    if (n > 0)
    {
      fn(std::size_t{0}, n);
    }
    return;
  }
  std::vector<std::thread> threads;
  threads.reserve(workers);
  std::exception_ptr error;
  std::mutex error_mutex;
  const std::size_t chunk = (n + workers - 1) / workers;
  for (std::size_t w = 0; w < workers; ++w)
  {
    const std::size_t begin = w * chunk;
    const std::size_t end = std::min(n, begin + chunk);
    if (begin >= end)
    {
      break;
    }
    threads.emplace_back([&, begin, end]() {
      try
      {
        fn(begin, end);
      }
      catch (...)
      {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!error)
        {
          error = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads)
  {
    t.join();
  }
  if (error)
  {
    std::rethrow_exception(error);
  }
}

template <typename Fn>
void parallelFor(std::size_t n, Fn&& fn)
{
  parallelChunks(n, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i)
    {
      fn(i);
    }
  });
}
}  // namespace bezgraph
