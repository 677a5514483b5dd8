#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "lightvit/common.hpp"
#include "lightvit/ffn.hpp"

namespace lightvit {

struct StageSpec {
  int64_t depth = 0;
  int64_t width = 0;
  int64_t heads = 0;
};

struct Toggles {
  bool local = true;
  bool global_attn = true;
  bool spatial = true;
  bool channel = true;
};

// Every hyperparameter of one model variant. Canonical text form is the
// single source of truth for digests and weight-file compatibility.
struct ModelConfig {
  std::string variant = "custom";
  int64_t stem_width = 0;
  std::array<StageSpec, 3> stages{};
  int64_t window = 7;
  int64_t global_tokens = 8;
  int64_t expansion = 4;  // FFN hidden = expansion * width
  int64_t reduction = 4;  // gate reduction ratio r
  Act act = Act::gelu;
  BiDimInsertion insertion = BiDimInsertion::input;
  Toggles toggles;
  int64_t num_classes = 1000;

  static ModelConfig variant_t();
  static ModelConfig variant_s();
  static ModelConfig variant_b();
  // Accepts "T", "S", "B" (case-insensitive); lists valid names on failure.
  static ModelConfig named(const std::string& name);
  // Small end-to-end configuration used by gradient checks.
  static ModelConfig reduced_test();

  // Throws ConfigError listing every violation.
  void validate() const;

  // Window size actually used on an h x w grid: min(window, h, w). Grids
  // smaller than the window fall back to one full-grid window.
  int64_t effective_window(int64_t h, int64_t w) const;

  std::string canonical_text() const;
  static ModelConfig parse(const std::string& text);
  uint64_t digest() const;
  std::string digest_hex() const;

  // Human-readable stage table for the `describe` command.
  std::string describe_table() const;

  bool global_path_enabled() const { return toggles.global_attn && global_tokens > 0; }
};

uint64_t fnv1a64(const std::string& text);

}  // namespace lightvit
