#pragma once

#include <atomic>
#include <cstdint>

namespace lightvit {

// Runtime instrumentation. Multiply-accumulate pairs are counted by the
// matmul and conv2d kernels; the census counts module-level paths taken.
// The analyzer's closed-form counts must match `macs` exactly.
struct OpCensus {
  int64_t local_attention = 0;
  int64_t global_aggregate = 0;
  int64_t global_broadcast = 0;
  int64_t channel_gate = 0;
  int64_t spatial_gate = 0;
};

class MacCounter {
 public:
  std::atomic<int64_t> matmul_macs{0};
  std::atomic<int64_t> conv_macs{0};
  OpCensus census;

  int64_t macs() const { return matmul_macs.load() + conv_macs.load(); }

  static MacCounter* active();
};

// Activates a counter for the enclosing scope. Scopes do not nest.
class CounterScope {
 public:
  CounterScope();
  ~CounterScope();
  CounterScope(const CounterScope&) = delete;
  CounterScope& operator=(const CounterScope&) = delete;

  MacCounter& counter() { return counter_; }

 private:
  MacCounter counter_;
};

inline void count_matmul_macs(int64_t n) {
  if (MacCounter* c = MacCounter::active()) {
    c->matmul_macs.fetch_add(n, std::memory_order_relaxed);
  }
}

inline void count_conv_macs(int64_t n) {
  if (MacCounter* c = MacCounter::active()) {
    c->conv_macs.fetch_add(n, std::memory_order_relaxed);
  }
}

}  // namespace lightvit
