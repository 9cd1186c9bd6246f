#include "tsim/common.hpp"

#include <atomic>
#include <thread>

namespace tsim {

namespace {
std::atomic<int> g_max_workers{0};  // 0 = hardware default
}

void set_max_workers(int n) { g_max_workers.store(n > 0 ? n : 0); }

int max_workers() {
  int n = g_max_workers.load();
  if (n > 0) return n;
  unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? static_cast<int>(hw) : 1;
}

}  // namespace tsim
