#include "pide/parallel.hpp"

#include <cstdlib>
#include <string>

namespace pide {

namespace {

int threads_from_env() {
  if (const char* env = std::getenv("SOLVER_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n > 0) return n;
    } catch (...) {
    }
  }
  return 1;
}

std::atomic<int>& thread_setting() {
  static std::atomic<int> value{threads_from_env()};
  return value;
}

}  // namespace

int default_threads() { return thread_setting().load(); }

void set_default_threads(int threads) { thread_setting().store(threads > 0 ? threads : 1); }

}  // namespace pide
