#include "lightvit/model.hpp"

#include <chrono>

#include "lightvit/init.hpp"

namespace lightvit {

namespace {

template <typename T>
Tensor<T> apply_act(const Tensor<T>& x, Act act) {
  return act == Act::gelu ? gelu(x) : relu(x);
}

// LayerNorm over channels of a [C, H, W] map, per spatial position.
template <typename T>
Tensor<T> norm_chw(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  const int64_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  Tensor<T> tokens = transpose(reshape(x, {c, h * w}), {1, 0});
  Tensor<T> normed = layer_norm(tokens, gamma, beta);
  return reshape(transpose(normed, {1, 0}), {c, h, w});
}

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

template <typename T>
PatchMergeParams<T> PatchMergeParams<T>::make(int64_t c, Rng& rng, GradTape<T>* tape) {
  PatchMergeParams<T> p;
  p.ln_gamma = init_ones<T>({4 * c}, tape);
  p.ln_beta = init_zeros<T>({4 * c}, tape);
  p.w_main = init_trunc_normal<T>({4 * c, 2 * c}, 0.02, rng, tape);
  p.w_res = init_trunc_normal<T>({c, 2 * c}, 0.02, rng, tape);
  return p;
}

template <typename T>
Tensor<T> residual_patch_merging(const Tensor<T>& x3d, const PatchMergeParams<T>& p) {
  if (x3d.rank() != 3) {
    throw ShapeError("residual_patch_merging: expected [H,W,C], got " + shape_str(x3d.shape()));
  }
  const int64_t h = x3d.dim(0), w = x3d.dim(1), c = x3d.dim(2);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ConfigError("residual_patch_merging: grid " + std::to_string(h) + "x" +
                      std::to_string(w) + " must have even extents");
  }
  // 2x2 neighborhoods, row-major within each window.
  auto [neigh, layout] = window_partition(x3d, 2);  // [nW, 4, C]
  const int64_t nw = layout.windows();
  Tensor<T> main_in = layer_norm(reshape(neigh, {nw, 4 * c}), p.ln_gamma, p.ln_beta);
  Tensor<T> main = matmul(main_in, p.w_main);
  Tensor<T> res = matmul(mean(neigh, 1), p.w_res);
  return reshape(add(main, res), {h / 2, w / 2, 2 * c});
}

template <typename T>
Tensor<T> project_global_tokens(const Tensor<T>& g2d, const Tensor<T>& w, const Tensor<T>& b) {
  if (g2d.rank() != 2 || g2d.dim(1) != w.dim(0)) {
    throw ShapeError("project_global_tokens: tokens " + shape_str(g2d.shape()) +
                     " do not match projection " + shape_str(w.shape()));
  }
  return linear(g2d, w, b);
}

template <typename T>
BlockOut<T> lightvit_block(const Tensor<T>& x2d, const WindowLayout& layout, const Tensor<T>& g2d,
                           const BlockParams<T>& p, const Toggles& toggles) {
  const bool has_g = toggles.global_attn && g2d.defined() && g2d.dim(0) > 0;
  const int64_t n = x2d.dim(0);
  const int64_t t = has_g ? g2d.dim(0) : 0;

  // Attention sublayer (pre-norm shared across image and global tokens).
  Tensor<T> xn, gn;
  if (has_g) {
    Tensor<T> zn = layer_norm(concat<T>({g2d, x2d}, 0), p.ln_gamma, p.ln_beta);
    gn = slice(zn, 0, 0, t);
    xn = slice(zn, 0, t, t + n);
  } else {
    xn = layer_norm(x2d, p.ln_gamma, p.ln_beta);
  }
  AttentionOut<T> att =
      lightvit_attention(xn, layout, gn, p.attn, AttnToggles{toggles.local, toggles.global_attn});
  Tensor<T> x1 = add(x2d, att.tokens);
  Tensor<T> g1 = has_g ? add(g2d, att.globals) : g2d;

  // FFN sublayer over the concatenated token axis; spatial-gate statistics
  // come from image tokens only.
  const FfnToggles ffn_toggles{toggles.spatial, toggles.channel};
  BlockOut<T> out;
  if (has_g) {
    Tensor<T> y = bidim_ffn(concat<T>({g1, x1}, 0), p.ffn, ffn_toggles, t, t + n);
    out.globals = slice(y, 0, 0, t);
    out.tokens = slice(y, 0, t, t + n);
  } else {
    out.tokens = bidim_ffn(x1, p.ffn, ffn_toggles);
    out.globals = g2d;
  }
  return out;
}

// --- Model -------------------------------------------------------------------

template <typename T>
void Model<T>::reg(const std::string& name, const Tensor<T>& t) {
  registry_.push_back(NamedParam<T>{name, t});
}

template <typename T>
Model<T> Model<T>::build(const ModelConfig& cfg, uint64_t seed, GradTape<T>* tape) {
  cfg.validate();
  Model<T> m;
  m.cfg_ = cfg;
  m.tape_ = tape;
  Rng rng(seed);

  const int64_t c0 = cfg.stem_width;
  const int64_t cs = c0 / 2 > 0 ? c0 / 2 : 1;  // stem inner width

  auto& st = m.stem_;
  st.w1 = init_trunc_normal<T>({cs, 3, 3, 3}, 0.02, rng, tape);
  st.b1 = init_zeros<T>({cs}, tape);
  st.n1_gamma = init_ones<T>({cs}, tape);
  st.n1_beta = init_zeros<T>({cs}, tape);
  st.w2 = init_trunc_normal<T>({cs, cs, 3, 3}, 0.02, rng, tape);
  st.b2 = init_zeros<T>({cs}, tape);
  st.n2_gamma = init_ones<T>({cs}, tape);
  st.n2_beta = init_zeros<T>({cs}, tape);
  st.w3 = init_trunc_normal<T>({c0, cs, 3, 3}, 0.02, rng, tape);
  st.b3 = init_zeros<T>({c0}, tape);
  st.n3_gamma = init_ones<T>({c0}, tape);
  st.n3_beta = init_zeros<T>({c0}, tape);
  m.reg("stem.conv1.weight", st.w1);
  m.reg("stem.conv1.bias", st.b1);
  m.reg("stem.norm1.gamma", st.n1_gamma);
  m.reg("stem.norm1.beta", st.n1_beta);
  m.reg("stem.conv2.weight", st.w2);
  m.reg("stem.conv2.bias", st.b2);
  m.reg("stem.norm2.gamma", st.n2_gamma);
  m.reg("stem.norm2.beta", st.n2_beta);
  m.reg("stem.conv3.weight", st.w3);
  m.reg("stem.conv3.bias", st.b3);
  m.reg("stem.norm3.gamma", st.n3_gamma);
  m.reg("stem.norm3.beta", st.n3_beta);

  const bool with_global = cfg.global_path_enabled();
  if (with_global) {
    m.global_embed_ = init_trunc_normal<T>({cfg.global_tokens, cfg.stages[0].width}, 0.02, rng,
                                           tape);
    m.reg("global.embedding", m.global_embed_);
  }

  const FfnToggles ffn_toggles{cfg.toggles.spatial, cfg.toggles.channel};
  for (size_t s = 0; s < 3; ++s) {
    const StageSpec& spec = cfg.stages[s];
    for (int64_t b = 0; b < spec.depth; ++b) {
      BlockParams<T> blk;
      blk.ln_gamma = init_ones<T>({spec.width}, tape);
      blk.ln_beta = init_zeros<T>({spec.width}, tape);
      blk.attn = AttentionParams<T>::make(spec.width, spec.heads, rng, tape);
      blk.ffn = FfnParams<T>::make(spec.width, cfg.expansion, cfg.reduction, cfg.act,
                                   cfg.insertion, rng, tape, ffn_toggles);
      const std::string px = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b) + ".";
      m.reg(px + "norm1.gamma", blk.ln_gamma);
      m.reg(px + "norm1.beta", blk.ln_beta);
      m.reg(px + "attn.wq", blk.attn.wq);
      m.reg(px + "attn.bq", blk.attn.bq);
      m.reg(px + "attn.wk", blk.attn.wk);
      m.reg(px + "attn.bk", blk.attn.bk);
      m.reg(px + "attn.wv", blk.attn.wv);
      m.reg(px + "attn.bv", blk.attn.bv);
      m.reg(px + "attn.wo", blk.attn.wo);
      m.reg(px + "attn.bo", blk.attn.bo);
      m.reg(px + "ffn.norm.gamma", blk.ffn.ln_gamma);
      m.reg(px + "ffn.norm.beta", blk.ffn.ln_beta);
      m.reg(px + "ffn.fc1.weight", blk.ffn.w1);
      m.reg(px + "ffn.fc1.bias", blk.ffn.b1);
      m.reg(px + "ffn.fc2.weight", blk.ffn.w2);
      m.reg(px + "ffn.fc2.bias", blk.ffn.b2);
      if (blk.ffn.bidim.w_reduce.defined()) {
        m.reg(px + "ffn.bidim.reduce.weight", blk.ffn.bidim.w_reduce);
        m.reg(px + "ffn.bidim.reduce.bias", blk.ffn.bidim.b_reduce);
      }
      if (blk.ffn.bidim.w_channel.defined()) {
        m.reg(px + "ffn.bidim.channel.weight", blk.ffn.bidim.w_channel);
        m.reg(px + "ffn.bidim.channel.bias", blk.ffn.bidim.b_channel);
      }
      if (blk.ffn.bidim.w_spatial.defined()) {
        m.reg(px + "ffn.bidim.spatial.weight", blk.ffn.bidim.w_spatial);
        m.reg(px + "ffn.bidim.spatial.bias", blk.ffn.bidim.b_spatial);
      }
      m.stages_[s].push_back(std::move(blk));
    }
    if (s < 2) {
      const int64_t c = spec.width;
      m.merges_[s] = PatchMergeParams<T>::make(c, rng, tape);
      const std::string px = "merge" + std::to_string(s + 1) + ".";
      m.reg(px + "norm.gamma", m.merges_[s].ln_gamma);
      m.reg(px + "norm.beta", m.merges_[s].ln_beta);
      m.reg(px + "main.weight", m.merges_[s].w_main);
      m.reg(px + "residual.weight", m.merges_[s].w_res);
      if (with_global) {
        m.gproj_w_[s] = init_trunc_normal<T>({c, 2 * c}, 0.02, rng, tape);
        m.gproj_b_[s] = init_zeros<T>({2 * c}, tape);
        m.reg(px + "global_proj.weight", m.gproj_w_[s]);
        m.reg(px + "global_proj.bias", m.gproj_b_[s]);
      }
    }
  }

  const int64_t c3 = cfg.stages[2].width;
  m.head_ln_gamma_ = init_ones<T>({c3}, tape);
  m.head_ln_beta_ = init_zeros<T>({c3}, tape);
  m.head_w_ = init_trunc_normal<T>({c3, cfg.num_classes}, 0.02, rng, tape);
  m.head_b_ = init_zeros<T>({cfg.num_classes}, tape);
  m.reg("head.norm.gamma", m.head_ln_gamma_);
  m.reg("head.norm.beta", m.head_ln_beta_);
  m.reg("head.linear.weight", m.head_w_);
  m.reg("head.linear.bias", m.head_b_);
  return m;
}

template <typename T>
int64_t Model<T>::param_count() const {
  int64_t n = 0;
  for (const auto& p : registry_) n += p.tensor.numel();
  return n;
}

template <typename T>
Tensor<T> Model<T>::parameter(const std::string& name) const {
  for (const auto& p : registry_) {
    if (p.name == name) return p.tensor;
  }
  throw ContractError("unknown parameter '" + name + "'");
}

template <typename T>
Tensor<T> Model<T>::stem(const Tensor<T>& image) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("stem: expected [3,H,W], got " + shape_str(image.shape()));
  }
  const int64_t h = image.dim(1), w = image.dim(2);
  if (h % 8 != 0 || w % 8 != 0) {
    throw ConfigError("stem: image extents " + std::to_string(h) + "x" + std::to_string(w) +
                      " must be divisible by 8");
  }
  const auto& st = stem_;
  Tensor<T> a = conv2d(image, st.w1, st.b1, 2, 1);
  a = apply_act(norm_chw(a, st.n1_gamma, st.n1_beta), cfg_.act);
  a = conv2d(a, st.w2, st.b2, 2, 1);
  a = apply_act(norm_chw(a, st.n2_gamma, st.n2_beta), cfg_.act);
  a = conv2d(a, st.w3, st.b3, 2, 1);
  const int64_t ho = a.dim(1), wo = a.dim(2);
  Tensor<T> tokens = transpose(reshape(a, {cfg_.stem_width, ho * wo}), {1, 0});
  tokens = layer_norm(tokens, st.n3_gamma, st.n3_beta);
  return reshape(tokens, {ho, wo, cfg_.stem_width});
}

template <typename T>
StageOutput<T> Model<T>::forward_features(const Tensor<T>& image,
                                          std::vector<StageTiming>* timings) const {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("forward_features: expected [3,H,W], got " + shape_str(image.shape()));
  }
  if (image.dim(1) % 32 != 0 || image.dim(2) % 32 != 0) {
    throw ConfigError("forward_features: image extents " + std::to_string(image.dim(1)) + "x" +
                      std::to_string(image.dim(2)) + " must be divisible by 32");
  }

  auto t0 = Clock::now();
  Tensor<T> grid = stem(image);
  int64_t h = grid.dim(0), w = grid.dim(1);
  if (timings) timings->push_back({"stem", seconds_since(t0), h * w});

  Tensor<T> x = reshape(grid, {h * w, cfg_.stem_width});
  Tensor<T> g = cfg_.global_path_enabled() ? global_embed_ : Tensor<T>();

  StageOutput<T> out;
  for (size_t s = 0; s < 3; ++s) {
    t0 = Clock::now();
    const WindowLayout layout = WindowLayout::make(h, w, cfg_.effective_window(h, w));
    for (const auto& blk : stages_[s]) {
      BlockOut<T> r = lightvit_block(x, layout, g, blk, cfg_.toggles);
      x = r.tokens;
      g = r.globals;
    }
    Tensor<T> feature = reshape(x, {h, w, cfg_.stages[s].width});
    if (timings) {
      timings->push_back({"stage" + std::to_string(s + 1), seconds_since(t0), h * w});
    }
    if (s == 0) out.stage1 = feature;
    if (s == 1) out.stage2 = feature;
    if (s == 2) out.stage3 = feature;

    if (s < 2) {
      t0 = Clock::now();
      Tensor<T> merged = residual_patch_merging(feature, merges_[s]);
      h = merged.dim(0);
      w = merged.dim(1);
      x = reshape(merged, {h * w, cfg_.stages[s + 1].width});
      if (g.defined()) g = project_global_tokens(g, gproj_w_[s], gproj_b_[s]);
      if (timings) {
        timings->push_back({"merge" + std::to_string(s + 1), seconds_since(t0), h * w});
      }
    }
  }
  out.globals = g;
  return out;
}

template <typename T>
Tensor<T> Model<T>::classify(const Tensor<T>& image, std::vector<StageTiming>* timings) const {
  StageOutput<T> ff = forward_features(image, timings);
  auto t0 = Clock::now();
  const int64_t h = ff.stage3.dim(0), w = ff.stage3.dim(1);
  const int64_t c3 = cfg_.stages[2].width;
  Tensor<T> tokens = layer_norm(reshape(ff.stage3, {h * w, c3}), head_ln_gamma_, head_ln_beta_);
  Tensor<T> pooled = reshape(mean(tokens, 0), {1, c3});
  Tensor<T> logits = linear(pooled, head_w_, head_b_);
  if (timings) timings->push_back({"head", seconds_since(t0), h * w});
  return reshape(logits, {cfg_.num_classes});
}

#define LIGHTVIT_INSTANTIATE_MODEL(T)                                                            \
  template struct PatchMergeParams<T>;                                                           \
  template Tensor<T> residual_patch_merging(const Tensor<T>&, const PatchMergeParams<T>&);       \
  template Tensor<T> project_global_tokens(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&); \
  template BlockOut<T> lightvit_block(const Tensor<T>&, const WindowLayout&, const Tensor<T>&,   \
                                      const BlockParams<T>&, const Toggles&);                    \
  template class Model<T>;

LIGHTVIT_INSTANTIATE_MODEL(float)
LIGHTVIT_INSTANTIATE_MODEL(double)

#undef LIGHTVIT_INSTANTIATE_MODEL

}  // namespace lightvit
