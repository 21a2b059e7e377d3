#include "cubehex/parallel.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace cubehex
{

int thread_count()
{
    static const int count = [] {
        const char* env = std::getenv("CUBEHEX_THREADS");
        if (!env)
            return 1;
        char* end = nullptr;
        long v = std::strtol(env, &end, 10);
        if (end == env || v < 1)
            return 1;
        return static_cast<int>(std::min<long>(v, 256));
    }();
    return count;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn)
{
    std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(thread_count()), n / 256 + 1);
    if (workers <= 1)
    {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> threads;
    std::size_t chunk = (n + workers - 1) / workers;
    for (std::size_t w = 0; w < workers; ++w)
    {
        std::size_t begin = w * chunk, end = std::min(n, begin + chunk);
        if (begin >= end)
            break;
        threads.emplace_back([&, begin, end] {
            try
            {
                for (std::size_t i = begin; i < end; ++i)
                    fn(i);
            }
            catch (...)
            {
                std::lock_guard<std::mutex> lock(failure_mutex);
                if (!failure)
                    failure = std::current_exception();
            }
        });
    }
    for (auto& t : threads)
        t.join();
    if (failure)
        std::rethrow_exception(failure);
}

} // namespace cubehex
