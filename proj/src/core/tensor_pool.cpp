#include <cstddef>
#include <unordered_map>
#include <vector>

#include "realtalk/tensor.hpp"

namespace rt::detail {

namespace {

// POD flag with no destructor: safe to read even while thread-local objects
// are being torn down.
thread_local bool g_pool_alive = false;

struct Pool {
  std::unordered_map<size_t, std::vector<double*>> buckets;
  size_t held_bytes = 0;
  static constexpr size_t kMaxHeldBytes = size_t(3) << 30;
  static constexpr size_t kMaxPerBucket = 128;

  Pool() { g_pool_alive = true; }
  ~Pool() {
    g_pool_alive = false;
    for (auto& [n, vec] : buckets)
      for (double* p : vec) delete[] p;
  }
};

Pool& pool() {
  thread_local Pool p;
  return p;
}

}  // namespace

double* pool_acquire(size_t n) {
  if (n == 0) n = 1;
  Pool& p = pool();
  auto it = p.buckets.find(n);
  if (it != p.buckets.end() && !it->second.empty()) {
    double* buf = it->second.back();
    it->second.pop_back();
    p.held_bytes -= n * sizeof(double);
    return buf;
  }
  return new double[n];
}

void pool_release(double* buf, size_t n) {
  if (!buf) return;
  if (n == 0) n = 1;
  if (!g_pool_alive) {
    delete[] buf;
    return;
  }
  Pool& p = pool();
  auto& bucket = p.buckets[n];
  if (bucket.size() >= Pool::kMaxPerBucket ||
      p.held_bytes + n * sizeof(double) > Pool::kMaxHeldBytes) {
    delete[] buf;
    return;
  }
  bucket.push_back(buf);
  p.held_bytes += n * sizeof(double);
}

}  // namespace rt::detail
