#pragma once

#include "lightvit/rng.hpp"
#include "lightvit/tensor.hpp"
#include "lightvit/window.hpp"

namespace lightvit {

// One shared Q/K/V/output projection set per block, applied to image and
// global tokens alike. Logits are scaled by 1/sqrt(head_dim) unless
// scale_logits is cleared (which reproduces the unscaled attention form).
template <typename T>
struct AttentionParams {
  int64_t width = 0;
  int64_t heads = 1;
  bool scale_logits = true;
  Tensor<T> wq, bq, wk, bk, wv, bv, wo, bo;

  int64_t head_dim() const { return width / heads; }

  static AttentionParams make(int64_t width, int64_t heads, Rng& rng, GradTape<T>* tape = nullptr,
                              bool scale_logits = true);
};

// T learnable rows threaded through every block of a stage.
template <typename T>
struct GlobalTokens {
  int64_t count = 0;
  Tensor<T> embedding;  // [T, C]
};

struct AttnToggles {
  bool local = true;
  bool global_attn = true;
};

template <typename T>
struct AttentionOut {
  Tensor<T> tokens;   // [N, C]
  Tensor<T> globals;  // [T, C]; pass-through when the global path is inactive
};

// Full multi-head attention: projects q/k/v, runs scaled softmax attention
// per head, concatenates heads, applies the output projection.
// q: [n_q, C] or [B, n_q, C]; k, v: [n_k, C] or [B, n_k, C].
template <typename T>
Tensor<T> scaled_mha(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                     const AttentionParams<T>& p);

// Windowed self-attention over an [N, C] token grid; equals scaled_mha applied
// independently inside each window.
template <typename T>
Tensor<T> local_attention(const Tensor<T>& x2d, const WindowLayout& layout,
                          const AttentionParams<T>& p);

// Global tokens query the whole image: g_hat = Attention(G_q, X_k, X_v).
template <typename T>
Tensor<T> global_aggregate(const Tensor<T>& g2d, const Tensor<T>& x2d,
                           const AttentionParams<T>& p);

// Image tokens query the aggregated globals: Attention(X_q, G_k, G_v).
template <typename T>
Tensor<T> global_broadcast(const Tensor<T>& x2d, const Tensor<T>& g_hat,
                           const AttentionParams<T>& p);

// Local and global paths fused over one shared projection evaluation:
// tokens = local_attention(x) + global_broadcast(x, global_aggregate(g, x)).
// Bitwise identical to composing the standalone operations above.
template <typename T>
AttentionOut<T> lightvit_attention(const Tensor<T>& x2d, const WindowLayout& layout,
                                   const Tensor<T>& g2d, const AttentionParams<T>& p,
                                   AttnToggles toggles = {});

}  // namespace lightvit
