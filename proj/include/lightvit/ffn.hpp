#pragma once

#include "lightvit/rng.hpp"
#include "lightvit/tensor.hpp"

namespace lightvit {

enum class Act { gelu, relu };

// Where the bi-dimensional gates act inside the FFN:
//   input  — at the block width C, gating the FC2 output before the residual;
//   hidden — at the expanded width alpha*C, gating between FC1's activation
//            and FC2.
enum class BiDimInsertion { input, hidden };

// Gate weights for the channel and spatial branches. One shared reduction
// layer feeds both; its parameter overhead over a plain FFN is exactly
// 2*C_h^2/r + 3*C_h/r + C_h + 1.
template <typename T>
struct BiDimParams {
  int64_t width = 0;      // C_h, the width at the insertion point
  int64_t reduction = 4;  // r
  Act act = Act::gelu;
  Tensor<T> w_reduce, b_reduce;    // C_h -> C_h/r, shared by both branches
  Tensor<T> w_channel, b_channel;  // C_h/r -> C_h
  Tensor<T> w_spatial, b_spatial;  // 2*C_h/r -> 1

  int64_t reduced() const { return width / reduction; }
  int64_t param_count() const;

  // Gate heads start at zero so a fresh model opens every gate at 0.5.
  // Disabled branches allocate no weights.
  static BiDimParams make(int64_t width, int64_t reduction, Act act, Rng& rng,
                          GradTape<T>* tape = nullptr, bool with_channel = true,
                          bool with_spatial = true);
};

struct FfnToggles {
  bool spatial = true;
  bool channel = true;
};

template <typename T>
struct FfnParams {
  int64_t width = 0;   // C
  int64_t hidden = 0;  // alpha * C
  Act act = Act::gelu;
  BiDimInsertion insertion = BiDimInsertion::input;
  Tensor<T> ln_gamma, ln_beta;
  Tensor<T> w1, b1;  // C -> hidden
  Tensor<T> w2, b2;  // hidden -> C
  BiDimParams<T> bidim;

  static FfnParams make(int64_t width, int64_t expansion, int64_t reduction, Act act,
                        BiDimInsertion insertion, Rng& rng, GradTape<T>* tape = nullptr,
                        FfnToggles toggles = {});
};

// Per-channel gates in (0,1): sigmoid(W2 . act(W1 . mean(x))).
// The mean runs over rows [mean_begin, mean_end); mean_end < 0 means all rows.
template <typename T>
Tensor<T> channel_attention(const Tensor<T>& x2d, const BiDimParams<T>& p, int64_t mean_begin = 0,
                            int64_t mean_end = -1);

// Per-token gates in (0,1): sigmoid(V . [act(W1 . x_i), act(W1 . mean(x))]).
template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x2d, const BiDimParams<T>& p, int64_t mean_begin = 0,
                            int64_t mean_end = -1);

// x + FFN(x) with the enabled gates applied at the configured insertion
// point. With both toggles off this is bit-for-bit a plain two-layer FFN.
template <typename T>
Tensor<T> bidim_ffn(const Tensor<T>& x2d, const FfnParams<T>& p, FfnToggles toggles = {},
                    int64_t mean_begin = 0, int64_t mean_end = -1);

}  // namespace lightvit
