#include "lightvit/counter.hpp"

#include "lightvit/common.hpp"

namespace lightvit {

namespace {
MacCounter* g_active = nullptr;
}

MacCounter* MacCounter::active() { return g_active; }

CounterScope::CounterScope() {
  if (g_active != nullptr) {
    throw ContractError("CounterScope: a counter is already active");
  }
  g_active = &counter_;
}

CounterScope::~CounterScope() { g_active = nullptr; }

}  // namespace lightvit
