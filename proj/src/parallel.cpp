#include "usr/parallel.hpp"

#include <algorithm>
#include <atomic>

namespace usr {

namespace {
std::atomic<int> g_thread_count{0};  // 0 = follow hardware concurrency
}

void set_thread_count(int n) { g_thread_count.store(std::max(n, 0)); }

int thread_count() {
    const int n = g_thread_count.load();
    if (n > 0) return n;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

}  // namespace usr
