#include "lightvit/ffn.hpp"

#include "lightvit/counter.hpp"
#include "lightvit/init.hpp"

namespace lightvit {

namespace {

template <typename T>
Tensor<T> apply_act(const Tensor<T>& x, Act act) {
  return act == Act::gelu ? gelu(x) : relu(x);
}

// act(W1 . mean of selected rows), shaped [1, C_h/r].
template <typename T>
Tensor<T> reduced_mean(const Tensor<T>& x2d, const BiDimParams<T>& p, int64_t mean_begin,
                       int64_t mean_end) {
  const int64_t n = x2d.dim(0);
  if (mean_end < 0) mean_end = n;
  if (mean_begin < 0 || mean_begin >= mean_end || mean_end > n) {
    throw ShapeError("bidim: invalid mean range [" + std::to_string(mean_begin) + ", " +
                     std::to_string(mean_end) + ") over " + std::to_string(n) + " rows");
  }
  Tensor<T> pooled = (mean_begin == 0 && mean_end == n)
                         ? mean(x2d, 0)
                         : mean(slice(x2d, 0, mean_begin, mean_end), 0);
  Tensor<T> row = reshape(pooled, {1, p.width});
  return apply_act(linear(row, p.w_reduce, p.b_reduce), p.act);
}

template <typename T>
void check_bidim_width(const char* op, const Tensor<T>& x2d, const BiDimParams<T>& p) {
  if (x2d.rank() != 2 || x2d.dim(1) != p.width) {
    throw ShapeError(std::string(op) + ": expected [N, " + std::to_string(p.width) + "], got " +
                     shape_str(x2d.shape()));
  }
}

}  // namespace

template <typename T>
int64_t BiDimParams<T>::param_count() const {
  const int64_t r = reduced();
  return width * r + r        // shared reduction
         + r * width + width  // channel head
         + 2 * r + 1;         // spatial head
}

template <typename T>
BiDimParams<T> BiDimParams<T>::make(int64_t width, int64_t reduction, Act act, Rng& rng,
                                    GradTape<T>* tape, bool with_channel, bool with_spatial) {
  if (reduction < 1 || width < 1 || width % reduction != 0) {
    throw ConfigError("bidim reduction " + std::to_string(reduction) + " must divide width " +
                      std::to_string(width));
  }
  BiDimParams<T> p;
  p.width = width;
  p.reduction = reduction;
  p.act = act;
  const int64_t r = p.reduced();
  if (with_channel || with_spatial) {
    p.w_reduce = init_trunc_normal<T>({width, r}, 0.02, rng, tape);
    p.b_reduce = init_zeros<T>({r}, tape);
  }
  if (with_channel) {
    p.w_channel = init_zeros<T>({r, width}, tape);
    p.b_channel = init_zeros<T>({width}, tape);
  }
  if (with_spatial) {
    p.w_spatial = init_zeros<T>({2 * r, 1}, tape);
    p.b_spatial = init_zeros<T>({1}, tape);
  }
  return p;
}

template <typename T>
FfnParams<T> FfnParams<T>::make(int64_t width, int64_t expansion, int64_t reduction, Act act,
                                BiDimInsertion insertion, Rng& rng, GradTape<T>* tape,
                                FfnToggles toggles) {
  if (width < 1 || expansion < 1) {
    throw ConfigError("ffn: width and expansion must be positive");
  }
  FfnParams<T> p;
  p.width = width;
  p.hidden = width * expansion;
  p.act = act;
  p.insertion = insertion;
  p.ln_gamma = init_ones<T>({width}, tape);
  p.ln_beta = init_zeros<T>({width}, tape);
  p.w1 = init_trunc_normal<T>({width, p.hidden}, 0.02, rng, tape);
  p.b1 = init_zeros<T>({p.hidden}, tape);
  p.w2 = init_trunc_normal<T>({p.hidden, width}, 0.02, rng, tape);
  p.b2 = init_zeros<T>({width}, tape);
  const int64_t gate_width = insertion == BiDimInsertion::hidden ? p.hidden : width;
  p.bidim = BiDimParams<T>::make(gate_width, reduction, act, rng, tape, toggles.channel,
                                 toggles.spatial);
  return p;
}

template <typename T>
Tensor<T> channel_attention(const Tensor<T>& x2d, const BiDimParams<T>& p, int64_t mean_begin,
                            int64_t mean_end) {
  check_bidim_width("channel_attention", x2d, p);
  if (MacCounter* c = MacCounter::active()) c->census.channel_gate++;
  Tensor<T> rm = reduced_mean(x2d, p, mean_begin, mean_end);
  Tensor<T> gates = sigmoid(linear(rm, p.w_channel, p.b_channel));
  return reshape(gates, {p.width});
}

template <typename T>
Tensor<T> spatial_attention(const Tensor<T>& x2d, const BiDimParams<T>& p, int64_t mean_begin,
                            int64_t mean_end) {
  check_bidim_width("spatial_attention", x2d, p);
  if (MacCounter* c = MacCounter::active()) c->census.spatial_gate++;
  const int64_t n = x2d.dim(0);
  Tensor<T> rm = reduced_mean(x2d, p, mean_begin, mean_end);
  Tensor<T> local = apply_act(linear(x2d, p.w_reduce, p.b_reduce), p.act);
  Tensor<T> paired = concat<T>({local, repeat_rows(rm, n)}, 1);
  Tensor<T> gates = sigmoid(linear(paired, p.w_spatial, p.b_spatial));
  return reshape(gates, {n});
}

template <typename T>
Tensor<T> bidim_ffn(const Tensor<T>& x2d, const FfnParams<T>& p, FfnToggles toggles,
                    int64_t mean_begin, int64_t mean_end) {
  if (x2d.rank() != 2 || x2d.dim(1) != p.width) {
    throw ShapeError("bidim_ffn: expected [N, " + std::to_string(p.width) + "], got " +
                     shape_str(x2d.shape()));
  }
  Tensor<T> h = apply_act(linear(layer_norm(x2d, p.ln_gamma, p.ln_beta), p.w1, p.b1), p.act);

  // Both gate vectors are computed from the same ungated source.
  auto gate = [&](const Tensor<T>& z) {
    Tensor<T> cg, sg;
    if (toggles.channel) cg = channel_attention(z, p.bidim, mean_begin, mean_end);
    if (toggles.spatial) sg = spatial_attention(z, p.bidim, mean_begin, mean_end);
    Tensor<T> out = z;
    if (cg.defined()) out = mul_channels(out, cg);
    if (sg.defined()) out = mul_rows(out, sg);
    return out;
  };

  Tensor<T> y;
  if (p.insertion == BiDimInsertion::hidden && (toggles.channel || toggles.spatial)) {
    y = linear(gate(h), p.w2, p.b2);
  } else {
    y = linear(h, p.w2, p.b2);
    if (toggles.channel || toggles.spatial) y = gate(y);
  }
  return add(x2d, y);
}

#define LIGHTVIT_INSTANTIATE_FFN(T)                                                              \
  template struct BiDimParams<T>;                                                                \
  template struct FfnParams<T>;                                                                  \
  template Tensor<T> channel_attention(const Tensor<T>&, const BiDimParams<T>&, int64_t,         \
                                       int64_t);                                                 \
  template Tensor<T> spatial_attention(const Tensor<T>&, const BiDimParams<T>&, int64_t,         \
                                       int64_t);                                                 \
  template Tensor<T> bidim_ffn(const Tensor<T>&, const FfnParams<T>&, FfnToggles, int64_t,       \
                               int64_t);

LIGHTVIT_INSTANTIATE_FFN(float)
LIGHTVIT_INSTANTIATE_FFN(double)

#undef LIGHTVIT_INSTANTIATE_FFN

}  // namespace lightvit
