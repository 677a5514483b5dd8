#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "lightvit/attention.hpp"
#include "lightvit/config.hpp"
#include "lightvit/ffn.hpp"
#include "lightvit/tensor.hpp"

namespace lightvit {

template <typename T>
struct PatchMergeParams {
  Tensor<T> ln_gamma, ln_beta;  // over 4C
  Tensor<T> w_main;             // [4C, 2C], bias-free
  Tensor<T> w_res;              // [C, 2C], bias-free

  static PatchMergeParams make(int64_t c, Rng& rng, GradTape<T>* tape = nullptr);
};

// Swin-style 2x2 merge (neighbor concat -> LN -> linear) plus a cheap
// residual (2x2 average pool -> linear). x: [H, W, C] -> [H/2, W/2, 2C].
template <typename T>
Tensor<T> residual_patch_merging(const Tensor<T>& x3d, const PatchMergeParams<T>& p);

// Learnable width change for global tokens at a stage boundary: [T,C] -> [T,2C].
template <typename T>
Tensor<T> project_global_tokens(const Tensor<T>& g2d, const Tensor<T>& w, const Tensor<T>& b);

template <typename T>
struct BlockParams {
  Tensor<T> ln_gamma, ln_beta;  // pre-attention norm
  AttentionParams<T> attn;
  FfnParams<T> ffn;  // carries its own pre-norm
};

template <typename T>
struct BlockOut {
  Tensor<T> tokens;
  Tensor<T> globals;
};

// Pre-norm block: attention sublayer with residuals on both token sets,
// then the gated FFN over the concatenated token axis. Global tokens are
// gated like image tokens; spatial gate means run over image rows only.
template <typename T>
BlockOut<T> lightvit_block(const Tensor<T>& x2d, const WindowLayout& layout, const Tensor<T>& g2d,
                           const BlockParams<T>& p, const Toggles& toggles);

template <typename T>
struct StageOutput {
  Tensor<T> stage1, stage2, stage3;  // [H, W, C] at strides 8/16/32
  Tensor<T> globals;                 // final [T, C3]; undefined when disabled
};

struct StageTiming {
  std::string name;
  double seconds = 0.0;
  int64_t tokens = 0;
};

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
class Model {
 public:
  // Deterministic initialization: truncated-normal weights (std 0.02),
  // zero biases, zero gate heads, parameters drawn in registry order.
  static Model build(const ModelConfig& cfg, uint64_t seed, GradTape<T>* tape = nullptr);

  const ModelConfig& config() const { return cfg_; }
  GradTape<T>* tape() const { return tape_; }

  // image: [3, H, W] with 8 | H and 8 | W -> [H/8, W/8, C0].
  Tensor<T> stem(const Tensor<T>& image) const;

  // image extents must be divisible by 32.
  StageOutput<T> forward_features(const Tensor<T>& image,
                                  std::vector<StageTiming>* timings = nullptr) const;

  Tensor<T> classify(const Tensor<T>& image, std::vector<StageTiming>* timings = nullptr) const;

  const std::vector<NamedParam<T>>& parameters() const { return registry_; }
  int64_t param_count() const;
  Tensor<T> parameter(const std::string& name) const;

  const BlockParams<T>& block(int stage, int index) const {
    return stages_[static_cast<size_t>(stage)][static_cast<size_t>(index)];
  }
  const PatchMergeParams<T>& merge(int index) const {
    return merges_[static_cast<size_t>(index)];
  }
  const Tensor<T>& global_embedding() const { return global_embed_; }

 private:
  ModelConfig cfg_;
  GradTape<T>* tape_ = nullptr;
  struct StemParams {
    Tensor<T> w1, b1, n1_gamma, n1_beta;
    Tensor<T> w2, b2, n2_gamma, n2_beta;
    Tensor<T> w3, b3, n3_gamma, n3_beta;
  } stem_;
  Tensor<T> global_embed_;  // [T, C1] when the global path is enabled
  std::array<std::vector<BlockParams<T>>, 3> stages_;
  std::array<PatchMergeParams<T>, 2> merges_;
  std::array<Tensor<T>, 2> gproj_w_, gproj_b_;
  Tensor<T> head_ln_gamma_, head_ln_beta_, head_w_, head_b_;
  std::vector<NamedParam<T>> registry_;

  void reg(const std::string& name, const Tensor<T>& t);
};

}  // namespace lightvit
