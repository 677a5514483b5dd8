#pragma once

#include <string>
#include <vector>

#include "lightvit/config.hpp"
#include "lightvit/model.hpp"

namespace lightvit {

// One costed leaf; totals and module subtotals are prefix sums over leaves,
// so parent/child consistency holds by construction in integer arithmetic.
struct CostEntry {
  std::string path;
  int64_t params = 0;
  int64_t macs = 0;
};

struct CostReport {
  std::vector<CostEntry> leaves;  // sorted, unique paths
  int64_t height = 0;             // input resolution behind the mac counts
  int64_t width = 0;

  void add(const std::string& path, int64_t params, int64_t macs);
  void finalize();  // sort + merge duplicate paths

  int64_t total_params() const;
  int64_t total_macs() const;
  int64_t params_under(const std::string& prefix) const;
  int64_t macs_under(const std::string& prefix) const;
};

// Exact weight-element census grouped by parameter path.
template <typename T>
CostReport count_params(const Model<T>& model);

// Analytical multiply-accumulate counts for one classify() pass. Mirrors the
// executed kernels one-to-one: the instrumented runtime counter reports the
// same total exactly.
CostReport count_flops(const ModelConfig& cfg, int64_t h, int64_t w);

// Merge of params and flops entries into a single report.
template <typename T>
CostReport analyze_model(const Model<T>& model, int64_t h, int64_t w);

// Closed-form attention cost on one h x w grid.
//   local_core  = 2 * h*w * s^2 * c          (QK^T + AV inside windows)
//   global_core = 4 * h*w * t * c            (aggregate + broadcast passes)
// Projection costs are reported separately from the cores.
struct AttentionCost {
  int64_t local_core = 0;
  int64_t global_core = 0;
  int64_t projections = 0;
};
AttentionCost attention_cost(int64_t h, int64_t w, int64_t s, int64_t t, int64_t c, int64_t heads);

// Sum of attention-core macs (local + global) over every block of the model.
int64_t attention_core_macs(const ModelConfig& cfg, int64_t h, int64_t w);

// Model-total macs for each global-token count in t_list.
struct OverheadRow {
  int64_t tokens = 0;
  int64_t macs = 0;
};
std::vector<OverheadRow> global_token_overhead(const ModelConfig& cfg,
                                               const std::vector<int64_t>& t_list, int64_t h,
                                               int64_t w);

// Rendering. The kv dump has a stable key order for golden-file tests.
std::string render_table(const CostReport& report, bool verbose = false);
std::string render_kv(const CostReport& report);

// --- micro-benchmark ---------------------------------------------------------

struct BenchRow {
  std::string name;
  double seconds = 0.0;  // median wall time
  int64_t macs = 0;
  double macs_per_sec = 0.0;
  int64_t tokens = 0;
  int samples = 0;
};

// Median-of-repeats per-segment timing of one classify() pass, with one
// warmup run. Requires repeats >= 3. Segment macs partition the model total.
std::vector<BenchRow> bench_stage_throughput(const Model<float>& model, int64_t resolution,
                                             int repeats);

std::string render_bench_table(const std::vector<BenchRow>& rows);

const std::vector<std::string>& bench_segments();

}  // namespace lightvit
