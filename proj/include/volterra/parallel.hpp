#pragma once

// Path-parallel scaffolding. Work is split into fixed-size chunks so partial reductions can be
// combined in chunk order, which keeps every result independent of the thread count.

#include <algorithm>
#include <cstddef>
#include <exception>
#include <mutex>
#include <vector>

namespace volterra::par {

inline constexpr std::size_t kChunk = 64;

inline std::size_t chunk_count(std::size_t n_items) { return (n_items + kChunk - 1) / kChunk; }

// Calls f(begin, end, chunk) for every chunk; the first exception thrown by a worker is
// rethrown on the calling thread.
template <class F>
void for_chunks(std::size_t n_items, F&& f, bool parallel = true) {
  const long nc = static_cast<long>(chunk_count(n_items));
  std::exception_ptr err;
  std::mutex mu;
#pragma omp parallel for schedule(dynamic, 1) if (parallel)
  for (long c = 0; c < nc; ++c) {
    const std::size_t b = static_cast<std::size_t>(c) * kChunk;
    const std::size_t e = std::min(n_items, b + kChunk);
    try {
      f(b, e, static_cast<std::size_t>(c));
    } catch (...) {
      std::lock_guard<std::mutex> lock(mu);
      if (!err) err = std::current_exception();
    }
  }
  if (err) std::rethrow_exception(err);
}

// Per-chunk accumulators of a fixed width, reduced in chunk order.
class OrderedSum {
 public:
  OrderedSum(std::size_t n_items, std::size_t width)
      : width_(width), parts_(chunk_count(n_items) * width, 0.0) {}
  double* part(std::size_t chunk) { return parts_.data() + chunk * width_; }
  std::vector<double> total() const {
    std::vector<double> out(width_, 0.0);
    for (std::size_t c = 0; c * width_ < parts_.size(); ++c)
      for (std::size_t k = 0; k < width_; ++k) out[k] += parts_[c * width_ + k];
    return out;
  }

 private:
  std::size_t width_;
  std::vector<double> parts_;
};

// Caps OpenMP workers from VOLTERRA_SMP_THREADS when set; returns the cap in force.
int configure_threads_from_env();

}  // namespace volterra::par
