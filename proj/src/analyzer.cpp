#include "lightvit/analyzer.hpp"

#include <algorithm>
#include <iomanip>
#include <map>
#include <sstream>

#include "lightvit/init.hpp"

namespace lightvit {

void CostReport::add(const std::string& path, int64_t params, int64_t macs) {
  leaves.push_back(CostEntry{path, params, macs});
}

void CostReport::finalize() {
  std::sort(leaves.begin(), leaves.end(),
            [](const CostEntry& a, const CostEntry& b) { return a.path < b.path; });
  std::vector<CostEntry> merged;
  for (const auto& e : leaves) {
    if (!merged.empty() && merged.back().path == e.path) {
      merged.back().params += e.params;
      merged.back().macs += e.macs;
    } else {
      merged.push_back(e);
    }
  }
  leaves = std::move(merged);
}

int64_t CostReport::total_params() const {
  int64_t n = 0;
  for (const auto& e : leaves) n += e.params;
  return n;
}

int64_t CostReport::total_macs() const {
  int64_t n = 0;
  for (const auto& e : leaves) n += e.macs;
  return n;
}

namespace {

bool under(const std::string& path, const std::string& prefix) {
  if (path == prefix) return true;
  return path.size() > prefix.size() && path.compare(0, prefix.size(), prefix) == 0 &&
         path[prefix.size()] == '.';
}

}  // namespace

int64_t CostReport::params_under(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& e : leaves) {
    if (under(e.path, prefix)) n += e.params;
  }
  return n;
}

int64_t CostReport::macs_under(const std::string& prefix) const {
  int64_t n = 0;
  for (const auto& e : leaves) {
    if (under(e.path, prefix)) n += e.macs;
  }
  return n;
}

template <typename T>
CostReport count_params(const Model<T>& model) {
  CostReport rep;
  for (const auto& p : model.parameters()) rep.add(p.name, p.tensor.numel(), 0);
  rep.finalize();
  return rep;
}

CostReport count_flops(const ModelConfig& cfg, int64_t h, int64_t w) {
  cfg.validate();
  if (h % 32 != 0 || w % 32 != 0 || h <= 0 || w <= 0) {
    throw ConfigError("count_flops: resolution " + std::to_string(h) + "x" + std::to_string(w) +
                      " must be divisible by 32");
  }
  CostReport rep;
  rep.height = h;
  rep.width = w;

  const int64_t c0 = cfg.stem_width;
  const int64_t cs = c0 / 2 > 0 ? c0 / 2 : 1;
  rep.add("stem.conv1", 0, cs * 3 * 9 * (h / 2) * (w / 2));
  rep.add("stem.conv2", 0, cs * cs * 9 * (h / 4) * (w / 4));
  rep.add("stem.conv3", 0, c0 * cs * 9 * (h / 8) * (w / 8));

  const bool glob = cfg.global_path_enabled();
  const int64_t t = glob ? cfg.global_tokens : 0;
  int64_t gh = h / 8, gw = w / 8;

  for (size_t s = 0; s < 3; ++s) {
    const StageSpec& spec = cfg.stages[s];
    const int64_t c = spec.width;
    const int64_t n = gh * gw;
    const int64_t ntot = n + t;
    const int64_t s_eff = cfg.effective_window(gh, gw);
    if (gh % s_eff != 0 || gw % s_eff != 0) {
      throw ConfigError("count_flops: window size " + std::to_string(s_eff) +
                        " must divide the stage " + std::to_string(s + 1) + " token grid " +
                        std::to_string(gh) + "x" + std::to_string(gw) +
                        "; pick a resolution whose /8, /16 and /32 grids are divisible by the window");
    }
    const int64_t hidden = cfg.expansion * c;
    const int64_t gate_w = cfg.insertion == BiDimInsertion::hidden ? hidden : c;
    const int64_t gate_r = gate_w / cfg.reduction;

    for (int64_t b = 0; b < spec.depth; ++b) {
      const std::string px =
          "stage" + std::to_string(s + 1) + ".block" + std::to_string(b) + ".";
      rep.add(px + "attn.q_proj", 0, ntot * c * c);
      rep.add(px + "attn.kv_proj", 0, 2 * n * c * c);
      if (cfg.toggles.local) {
        rep.add(px + "attn.local_core", 0, 2 * n * s_eff * s_eff * c);
        rep.add(px + "attn.local_out", 0, n * c * c);
      }
      if (glob) {
        rep.add(px + "attn.aggregate_core", 0, 2 * t * n * c);
        rep.add(px + "attn.aggregate_out", 0, t * c * c);
        rep.add(px + "attn.ghat_kv_proj", 0, 2 * t * c * c);
        rep.add(px + "attn.broadcast_core", 0, 2 * n * t * c);
        rep.add(px + "attn.broadcast_out", 0, n * c * c);
      }
      rep.add(px + "ffn.fc1", 0, ntot * c * hidden);
      rep.add(px + "ffn.fc2", 0, ntot * hidden * c);
      if (cfg.toggles.channel) {
        rep.add(px + "ffn.bidim.channel", 0, gate_w * gate_r + gate_r * gate_w);
      }
      if (cfg.toggles.spatial) {
        rep.add(px + "ffn.bidim.spatial", 0,
                gate_w * gate_r + ntot * gate_w * gate_r + ntot * 2 * gate_r);
      }
    }

    if (s < 2) {
      const std::string mx = "merge" + std::to_string(s + 1) + ".";
      const int64_t half = (gh / 2) * (gw / 2);
      rep.add(mx + "main", 0, half * 4 * c * 2 * c);
      rep.add(mx + "residual", 0, half * c * 2 * c);
      if (glob) rep.add(mx + "global_proj", 0, t * c * 2 * c);
      gh /= 2;
      gw /= 2;
    }
  }

  rep.add("head.linear", 0, cfg.stages[2].width * cfg.num_classes);
  rep.finalize();
  return rep;
}

template <typename T>
CostReport analyze_model(const Model<T>& model, int64_t h, int64_t w) {
  CostReport rep = count_flops(model.config(), h, w);
  for (const auto& p : model.parameters()) rep.add(p.name, p.tensor.numel(), 0);
  rep.finalize();
  return rep;
}

AttentionCost attention_cost(int64_t h, int64_t w, int64_t s, int64_t t, int64_t c,
                             int64_t heads) {
  if (s <= 0 || h % s != 0 || w % s != 0) {
    throw ConfigError("attention_cost: window size " + std::to_string(s) +
                      " must divide the grid " + std::to_string(h) + "x" + std::to_string(w));
  }
  if (heads < 1 || c % heads != 0) {
    throw ConfigError("attention_cost: heads must divide the width");
  }
  const int64_t n = h * w;
  AttentionCost cost;
  cost.local_core = 2 * n * s * s * c;
  cost.global_core = 4 * n * t * c;
  cost.projections = (n + t) * c * c + 2 * n * c * c + 2 * t * c * c + (2 * n + t) * c * c;
  return cost;
}

int64_t attention_core_macs(const ModelConfig& cfg, int64_t h, int64_t w) {
  const CostReport rep = count_flops(cfg, h, w);
  int64_t total = 0;
  for (const auto& e : rep.leaves) {
    if (e.path.find("_core") != std::string::npos) total += e.macs;
  }
  return total;
}

std::vector<OverheadRow> global_token_overhead(const ModelConfig& cfg,
                                               const std::vector<int64_t>& t_list, int64_t h,
                                               int64_t w) {
  std::vector<OverheadRow> rows;
  for (int64_t t : t_list) {
    ModelConfig c = cfg;
    c.global_tokens = t;
    rows.push_back(OverheadRow{t, count_flops(c, h, w).total_macs()});
  }
  return rows;
}

// --- rendering ----------------------------------------------------------------

namespace {

std::string top_group(const std::string& path) {
  const auto dot = path.find('.');
  return dot == std::string::npos ? path : path.substr(0, dot);
}

std::string human_count(int64_t v) {
  std::ostringstream os;
  if (v >= 1000000000) {
    os << std::fixed << std::setprecision(3) << static_cast<double>(v) / 1e9 << "G";
  } else if (v >= 1000000) {
    os << std::fixed << std::setprecision(3) << static_cast<double>(v) / 1e6 << "M";
  } else {
    os << v;
  }
  return os.str();
}

}  // namespace

std::string render_table(const CostReport& report, bool verbose) {
  // Stable component order; anything unexpected lands at the end.
  const std::vector<std::string> order = {"stem",   "stage1", "merge1", "stage2", "merge2",
                                          "stage3", "head",   "global"};
  std::map<std::string, std::pair<int64_t, int64_t>> groups;
  for (const auto& e : report.leaves) {
    auto& g = groups[top_group(e.path)];
    g.first += e.params;
    g.second += e.macs;
  }
  std::ostringstream os;
  os << std::left << std::setw(34) << "component" << std::right << std::setw(14) << "params"
     << std::setw(16) << "macs" << "\n";
  auto row = [&](const std::string& name, int64_t p, int64_t m) {
    os << std::left << std::setw(34) << name << std::right << std::setw(14) << p << std::setw(16)
       << m << "\n";
  };
  std::vector<std::string> printed;
  for (const auto& name : order) {
    auto it = groups.find(name);
    if (it == groups.end()) continue;
    row(name, it->second.first, it->second.second);
    printed.push_back(name);
    if (verbose) {
      for (const auto& e : report.leaves) {
        if (top_group(e.path) == name) row("  " + e.path, e.params, e.macs);
      }
    }
  }
  for (const auto& [name, pm] : groups) {
    if (std::find(printed.begin(), printed.end(), name) == printed.end()) {
      row(name, pm.first, pm.second);
      if (verbose) {
        for (const auto& e : report.leaves) {
          if (top_group(e.path) == name) row("  " + e.path, e.params, e.macs);
        }
      }
    }
  }
  row("total", report.total_params(), report.total_macs());
  os << "total params " << human_count(report.total_params()) << ", total macs "
     << human_count(report.total_macs());
  if (report.height > 0) os << " at " << report.height << "x" << report.width;
  os << "\n";
  return os.str();
}

std::string render_kv(const CostReport& report) {
  std::ostringstream os;
  os << "resolution=" << report.height << "x" << report.width << "\n";
  os << "total.params=" << report.total_params() << "\n";
  os << "total.macs=" << report.total_macs() << "\n";
  for (const auto& e : report.leaves) {
    os << e.path << ".params=" << e.params << "\n";
    os << e.path << ".macs=" << e.macs << "\n";
  }
  return os.str();
}

// --- micro-benchmark ------------------------------------------------------------

const std::vector<std::string>& bench_segments() {
  static const std::vector<std::string> segments = {"stem",   "stage1", "merge1", "stage2",
                                                    "merge2", "stage3", "head"};
  return segments;
}

std::vector<BenchRow> bench_stage_throughput(const Model<float>& model, int64_t resolution,
                                             int repeats) {
  if (repeats < 3) {
    throw ConfigError("bench: need at least 3 repeats plus warmup, got " +
                      std::to_string(repeats));
  }
  const CostReport flops = count_flops(model.config(), resolution, resolution);

  Rng rng(17);
  std::vector<float> img(static_cast<size_t>(3 * resolution * resolution));
  for (auto& v : img) v = static_cast<float>(rng.normal() * 0.5);
  Tensor<float> image = Tensor<float>::from_data({3, resolution, resolution}, std::move(img));

  std::vector<StageTiming> warmup;
  model.classify(image, &warmup);

  std::map<std::string, std::vector<double>> samples;
  std::map<std::string, int64_t> tokens;
  for (int rep = 0; rep < repeats; ++rep) {
    std::vector<StageTiming> run;
    model.classify(image, &run);
    for (const auto& seg : run) {
      samples[seg.name].push_back(seg.seconds);
      tokens[seg.name] = seg.tokens;
    }
  }

  std::vector<BenchRow> rows;
  for (const auto& name : bench_segments()) {
    auto it = samples.find(name);
    if (it == samples.end()) continue;
    std::vector<double> v = it->second;
    std::sort(v.begin(), v.end());
    const double median = v[v.size() / 2];
    BenchRow row;
    row.name = name;
    row.seconds = median;
    row.macs = flops.macs_under(name);
    row.macs_per_sec = median > 0 ? static_cast<double>(row.macs) / median : 0.0;
    row.tokens = tokens[name];
    row.samples = static_cast<int>(v.size());
    rows.push_back(row);
  }
  return rows;
}

std::string render_bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "segment" << std::right << std::setw(10) << "tokens"
     << std::setw(14) << "median_ms" << std::setw(16) << "macs" << std::setw(16) << "macs/s"
     << "\n";
  int64_t total_macs = 0;
  double total_s = 0.0;
  for (const auto& r : rows) {
    os << std::left << std::setw(10) << r.name << std::right << std::setw(10) << r.tokens
       << std::setw(14) << std::fixed << std::setprecision(3) << r.seconds * 1e3 << std::setw(16)
       << r.macs << std::setw(16) << std::scientific << std::setprecision(3) << r.macs_per_sec
       << "\n";
    total_macs += r.macs;
    total_s += r.seconds;
  }
  os << std::left << std::setw(10) << "total" << std::right << std::setw(10) << "" << std::setw(14)
     << std::fixed << std::setprecision(3) << total_s * 1e3 << std::setw(16) << total_macs << "\n";
  return os.str();
}

template CostReport count_params(const Model<float>&);
template CostReport count_params(const Model<double>&);
template CostReport analyze_model(const Model<float>&, int64_t, int64_t);
template CostReport analyze_model(const Model<double>&, int64_t, int64_t);

}  // namespace lightvit
