#include "lightvit/attention.hpp"

#include <cmath>

#include "lightvit/counter.hpp"
#include "lightvit/init.hpp"

namespace lightvit {

namespace {

// [n, C] -> [heads, n, d]
template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int64_t heads) {
  const int64_t n = x.dim(0), c = x.dim(1);
  return transpose(reshape(x, {n, heads, c / heads}), {1, 0, 2});
}

// [heads, n, d] -> [n, C]
template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  const int64_t h = x.dim(0), n = x.dim(1), d = x.dim(2);
  return reshape(transpose(x, {1, 0, 2}), {n, h * d});
}

// [B, n, C] -> [B, heads, n, d]
template <typename T>
Tensor<T> split_heads_batched(const Tensor<T>& x, int64_t heads) {
  const int64_t b = x.dim(0), n = x.dim(1), c = x.dim(2);
  return transpose(reshape(x, {b, n, heads, c / heads}), {0, 2, 1, 3});
}

// [B, heads, n, d] -> [B, n, C]
template <typename T>
Tensor<T> merge_heads_batched(const Tensor<T>& x) {
  const int64_t b = x.dim(0), h = x.dim(1), n = x.dim(2), d = x.dim(3);
  return reshape(transpose(x, {0, 2, 1, 3}), {b, n, h * d});
}

// Scaled softmax attention over head-split tensors [..., n, d].
template <typename T>
Tensor<T> attention_core(const Tensor<T>& qh, const Tensor<T>& kh, const Tensor<T>& vh,
                         double logit_scale) {
  std::vector<int64_t> swap_last(static_cast<size_t>(kh.rank()));
  for (int64_t i = 0; i < kh.rank(); ++i) swap_last[static_cast<size_t>(i)] = i;
  std::swap(swap_last[static_cast<size_t>(kh.rank() - 2)],
            swap_last[static_cast<size_t>(kh.rank() - 1)]);
  Tensor<T> logits = matmul(qh, transpose(kh, swap_last));
  if (logit_scale != 1.0) logits = scale(logits, logit_scale);
  Tensor<T> weights = softmax(logits, logits.rank() - 1);
  return matmul(weights, vh);
}

template <typename T>
void check_width(const char* op, const Tensor<T>& t, const AttentionParams<T>& p) {
  if (t.dim(t.rank() - 1) != p.width) {
    throw ConfigError(std::string(op) + ": token width " + std::to_string(t.dim(t.rank() - 1)) +
                      " does not match attention width " + std::to_string(p.width));
  }
}

template <typename T>
double logit_scale_of(const AttentionParams<T>& p) {
  return p.scale_logits ? 1.0 / std::sqrt(static_cast<double>(p.head_dim())) : 1.0;
}

}  // namespace

template <typename T>
AttentionParams<T> AttentionParams<T>::make(int64_t width, int64_t heads, Rng& rng,
                                            GradTape<T>* tape, bool scale_logits) {
  if (heads < 1 || width < 1 || width % heads != 0) {
    throw ConfigError("attention heads " + std::to_string(heads) + " must divide width " +
                      std::to_string(width));
  }
  AttentionParams<T> p;
  p.width = width;
  p.heads = heads;
  p.scale_logits = scale_logits;
  p.wq = init_trunc_normal<T>({width, width}, 0.02, rng, tape);
  p.bq = init_zeros<T>({width}, tape);
  p.wk = init_trunc_normal<T>({width, width}, 0.02, rng, tape);
  p.bk = init_zeros<T>({width}, tape);
  p.wv = init_trunc_normal<T>({width, width}, 0.02, rng, tape);
  p.bv = init_zeros<T>({width}, tape);
  p.wo = init_trunc_normal<T>({width, width}, 0.02, rng, tape);
  p.bo = init_zeros<T>({width}, tape);
  return p;
}

template <typename T>
Tensor<T> scaled_mha(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                     const AttentionParams<T>& p) {
  if (q.rank() != k.rank() || k.rank() != v.rank() || (q.rank() != 2 && q.rank() != 3)) {
    throw ConfigError("scaled_mha: expected rank-2 or rank-3 operands of equal rank");
  }
  check_width("scaled_mha", q, p);
  check_width("scaled_mha", k, p);
  check_width("scaled_mha", v, p);
  if (k.shape() != v.shape()) {
    throw ConfigError("scaled_mha: key/value shapes disagree: " + shape_str(k.shape()) + " vs " +
                      shape_str(v.shape()));
  }
  if (q.rank() == 3 && q.dim(0) != k.dim(0)) {
    throw ConfigError("scaled_mha: query/key batch extents disagree");
  }

  Tensor<T> qp = linear(q, p.wq, p.bq);
  Tensor<T> kp = linear(k, p.wk, p.bk);
  Tensor<T> vp = linear(v, p.wv, p.bv);

  Tensor<T> ctx;
  if (q.rank() == 2) {
    ctx = merge_heads(attention_core(split_heads(qp, p.heads), split_heads(kp, p.heads),
                                     split_heads(vp, p.heads), logit_scale_of(p)));
  } else {
    ctx = merge_heads_batched(attention_core(split_heads_batched(qp, p.heads),
                                             split_heads_batched(kp, p.heads),
                                             split_heads_batched(vp, p.heads), logit_scale_of(p)));
  }
  return linear(ctx, p.wo, p.bo);
}

namespace {

// Window attention core on pre-projected [N, C] maps; shared by the
// standalone op and the fused block path.
template <typename T>
Tensor<T> windowed_core(const Tensor<T>& qp, const Tensor<T>& kp, const Tensor<T>& vp,
                        const WindowLayout& layout, const AttentionParams<T>& p) {
  const int64_t s2 = layout.s * layout.s;
  const int64_t nw = layout.windows();
  const int64_t d = p.head_dim();
  auto to_windows = [&](const Tensor<T>& t) {
    return transpose(reshape(partition_tokens(t, layout), {nw, s2, p.heads, d}), {0, 2, 1, 3});
  };
  Tensor<T> ctx = attention_core(to_windows(qp), to_windows(kp), to_windows(vp),
                                 logit_scale_of(p));
  Tensor<T> merged = reshape(transpose(ctx, {0, 2, 1, 3}), {layout.tokens(), p.width});
  return reverse_tokens(merged, layout);
}

}  // namespace

template <typename T>
Tensor<T> local_attention(const Tensor<T>& x2d, const WindowLayout& layout,
                          const AttentionParams<T>& p) {
  if (x2d.rank() != 2 || x2d.dim(0) != layout.tokens()) {
    throw ShapeError("local_attention: expected [" + std::to_string(layout.tokens()) +
                     ", C], got " + shape_str(x2d.shape()));
  }
  check_width("local_attention", x2d, p);
  if (MacCounter* c = MacCounter::active()) c->census.local_attention++;
  Tensor<T> qp = linear(x2d, p.wq, p.bq);
  Tensor<T> kp = linear(x2d, p.wk, p.bk);
  Tensor<T> vp = linear(x2d, p.wv, p.bv);
  return linear(windowed_core(qp, kp, vp, layout, p), p.wo, p.bo);
}

template <typename T>
Tensor<T> global_aggregate(const Tensor<T>& g2d, const Tensor<T>& x2d,
                           const AttentionParams<T>& p) {
  if (!g2d.defined() || g2d.rank() != 2 || g2d.dim(0) < 1) {
    throw ContractError("global_aggregate: requires at least one global token");
  }
  if (MacCounter* c = MacCounter::active()) c->census.global_aggregate++;
  return scaled_mha(g2d, x2d, x2d, p);
}

template <typename T>
Tensor<T> global_broadcast(const Tensor<T>& x2d, const Tensor<T>& g_hat,
                           const AttentionParams<T>& p) {
  if (!g_hat.defined() || g_hat.rank() != 2 || g_hat.dim(0) < 1) {
    throw ContractError("global_broadcast: requires at least one global token");
  }
  if (MacCounter* c = MacCounter::active()) c->census.global_broadcast++;
  return scaled_mha(x2d, g_hat, g_hat, p);
}

template <typename T>
AttentionOut<T> lightvit_attention(const Tensor<T>& x2d, const WindowLayout& layout,
                                   const Tensor<T>& g2d, const AttentionParams<T>& p,
                                   AttnToggles toggles) {
  if (!toggles.local && !toggles.global_attn) {
    throw ConfigError("lightvit_attention: both attention paths disabled");
  }
  if (x2d.rank() != 2 || x2d.dim(0) != layout.tokens()) {
    throw ShapeError("lightvit_attention: expected [" + std::to_string(layout.tokens()) +
                     ", C], got " + shape_str(x2d.shape()));
  }
  check_width("lightvit_attention", x2d, p);
  const bool use_global = toggles.global_attn && g2d.defined() && g2d.dim(0) > 0;
  if (!toggles.local && !use_global) {
    throw ConfigError("lightvit_attention: local path disabled and no global tokens available");
  }

  // Shared projections: image q/k/v evaluated once and reused by both paths.
  Tensor<T> qx = linear(x2d, p.wq, p.bq);
  Tensor<T> kx = linear(x2d, p.wk, p.bk);
  Tensor<T> vx = linear(x2d, p.wv, p.bv);

  Tensor<T> x_local;
  if (toggles.local) {
    if (MacCounter* c = MacCounter::active()) c->census.local_attention++;
    x_local = linear(windowed_core(qx, kx, vx, layout, p), p.wo, p.bo);
  }

  Tensor<T> x_global, g_hat;
  if (use_global) {
    if (MacCounter* c = MacCounter::active()) c->census.global_aggregate++;
    Tensor<T> qg = linear(g2d, p.wq, p.bq);
    Tensor<T> agg = attention_core(split_heads(qg, p.heads), split_heads(kx, p.heads),
                                   split_heads(vx, p.heads), logit_scale_of(p));
    g_hat = linear(merge_heads(agg), p.wo, p.bo);

    if (MacCounter* c = MacCounter::active()) c->census.global_broadcast++;
    Tensor<T> kg = linear(g_hat, p.wk, p.bk);
    Tensor<T> vg = linear(g_hat, p.wv, p.bv);
    Tensor<T> bc = attention_core(split_heads(qx, p.heads), split_heads(kg, p.heads),
                                  split_heads(vg, p.heads), logit_scale_of(p));
    x_global = linear(merge_heads(bc), p.wo, p.bo);
  }

  AttentionOut<T> out;
  if (toggles.local && use_global) {
    out.tokens = add(x_local, x_global);
  } else if (toggles.local) {
    out.tokens = x_local;
  } else {
    out.tokens = x_global;
  }
  out.globals = use_global ? g_hat : g2d;
  return out;
}

#define LIGHTVIT_INSTANTIATE_ATTENTION(T)                                                          \
  template struct AttentionParams<T>;                                                             \
  template Tensor<T> scaled_mha(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                                const AttentionParams<T>&);                                       \
  template Tensor<T> local_attention(const Tensor<T>&, const WindowLayout&,                       \
                                     const AttentionParams<T>&);                                  \
  template Tensor<T> global_aggregate(const Tensor<T>&, const Tensor<T>&,                         \
                                      const AttentionParams<T>&);                                 \
  template Tensor<T> global_broadcast(const Tensor<T>&, const Tensor<T>&,                         \
                                      const AttentionParams<T>&);                                 \
  template AttentionOut<T> lightvit_attention(const Tensor<T>&, const WindowLayout&,              \
                                              const Tensor<T>&, const AttentionParams<T>&,        \
                                              AttnToggles);

LIGHTVIT_INSTANTIATE_ATTENTION(float)
LIGHTVIT_INSTANTIATE_ATTENTION(double)

#undef LIGHTVIT_INSTANTIATE_ATTENTION

}  // namespace lightvit
