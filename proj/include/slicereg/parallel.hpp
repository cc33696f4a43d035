#pragma once

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace slicereg
{

// SLICEREG_THREADS overrides the worker count; 0 or unset uses the hardware concurrency.
inline int thread_count()
{
    if (const char* env = std::getenv("SLICEREG_THREADS"))
    {
        int n = std::atoi(env);
        if (n > 0)
            return n;
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(i) for i in [0, n). Each index is handled by exactly one worker, so
// results written per index are independent of scheduling.
template <typename Fn>
void parallel_for(int n, Fn&& fn, int threads = thread_count())
{
    threads = std::min(threads, n);
    if (threads <= 1)
    {
        for (int i = 0; i < n; ++i)
            fn(i);
        return;
    }

    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    workers.reserve(threads);
    for (int t = 0; t < threads; ++t)
    {
        workers.emplace_back([&, t] {
            for (int i = t; i < n; i += threads)
            {
                try
                {
                    fn(i);
                }
                catch (...)
                {
                    std::lock_guard lock(failure_mutex);
                    if (!failure)
                        failure = std::current_exception();
                }
            }
        });
    }
    for (auto& w : workers)
        w.join();
    if (failure)
        std::rethrow_exception(failure);
}

} // namespace slicereg
