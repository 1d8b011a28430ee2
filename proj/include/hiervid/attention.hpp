#pragma once

#include <cmath>
#include <deque>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiervid/autograd.hpp"
#include "hiervid/masks.hpp"

namespace hiervid {

// ---------------------------------------------------------------------------
// Dual-channel attention: a frozen spatial channel (own frame + text) and a
// trainable spatio-temporal channel (3D local box or shifted-window),
// mixed per hidden dimension by alpha = sigmoid(a), wrapped in Sandwich-LN,
// plus the shared frozen FFN.
// ---------------------------------------------------------------------------

enum class ChannelKind : std::uint8_t { local3d = 0, swin3d = 1 };

struct ChannelConfig {
  ChannelKind kind = ChannelKind::swin3d;
  LocalExtent extent;   // used by local3d
  WindowConfig window;  // used by swin3d
};

// One transformer layer's weights. base/ffn/layer norms come from the frozen
// spatial model; plus and the mixture pre-activation a are the trainable
// temporal additions.
struct LayerParams {
  Parameter* base_wq = nullptr;
  Parameter* base_wk = nullptr;
  Parameter* base_wv = nullptr;
  Parameter* base_wo = nullptr;
  Parameter* plus_wq = nullptr;
  Parameter* plus_wk = nullptr;
  Parameter* plus_wv = nullptr;
  Parameter* plus_wo = nullptr;
  Parameter* mix_a = nullptr;
  Parameter* attn_pre_gain = nullptr;
  Parameter* attn_pre_bias = nullptr;
  Parameter* attn_post_gain = nullptr;
  Parameter* attn_post_bias = nullptr;
  Parameter* ffn_w1 = nullptr;
  Parameter* ffn_b1 = nullptr;
  Parameter* ffn_w2 = nullptr;
  Parameter* ffn_b2 = nullptr;
  Parameter* ffn_pre_gain = nullptr;
  Parameter* ffn_pre_bias = nullptr;
  Parameter* ffn_post_gain = nullptr;
  Parameter* ffn_post_bias = nullptr;

  bool has_plus() const { return plus_wq != nullptr; }
};

// Allocates a layer's parameters into `store` (stable addresses). The plus
// channel is initialized as an exact copy of the base channel and a starts at
// zero, so the block's output matches the base-only block wherever the two
// channel masks coincide.
inline LayerParams alloc_layer_params(std::deque<Parameter>& store, const std::string& prefix,
                                      int d, Rng& rng, double init_std, bool freeze_base,
                                      bool with_plus) {
  auto add = [&store](const std::string& name, Tensor t, bool frozen) {
    store.emplace_back(name, std::move(t), frozen);
    return &store.back();
  };
  LayerParams lp;
  lp.attn_pre_gain = add(prefix + ".attn.pre_ln.gain", Tensor::full({d}, 1.0), freeze_base);
  lp.attn_pre_bias = add(prefix + ".attn.pre_ln.bias", Tensor::zeros({d}), freeze_base);
  lp.base_wq = add(prefix + ".base.wq", Tensor::randn({d, d}, rng, init_std), freeze_base);
  lp.base_wk = add(prefix + ".base.wk", Tensor::randn({d, d}, rng, init_std), freeze_base);
  lp.base_wv = add(prefix + ".base.wv", Tensor::randn({d, d}, rng, init_std), freeze_base);
  lp.base_wo = add(prefix + ".base.wo", Tensor::randn({d, d}, rng, init_std), freeze_base);
  if (with_plus) {
    lp.plus_wq = add(prefix + ".plus.wq", lp.base_wq->value, false);
    lp.plus_wk = add(prefix + ".plus.wk", lp.base_wk->value, false);
    lp.plus_wv = add(prefix + ".plus.wv", lp.base_wv->value, false);
    lp.plus_wo = add(prefix + ".plus.wo", lp.base_wo->value, false);
    lp.mix_a = add(prefix + ".mix.a", Tensor::zeros({d}), false);
  }
  lp.attn_post_gain = add(prefix + ".attn.post_ln.gain", Tensor::full({d}, 1.0), freeze_base);
  lp.attn_post_bias = add(prefix + ".attn.post_ln.bias", Tensor::zeros({d}), freeze_base);
  lp.ffn_pre_gain = add(prefix + ".ffn.pre_ln.gain", Tensor::full({d}, 1.0), freeze_base);
  lp.ffn_pre_bias = add(prefix + ".ffn.pre_ln.bias", Tensor::zeros({d}), freeze_base);
  lp.ffn_w1 = add(prefix + ".ffn.w1", Tensor::randn({d, 4 * d}, rng, init_std), freeze_base);
  lp.ffn_b1 = add(prefix + ".ffn.b1", Tensor::zeros({4 * d}), freeze_base);
  lp.ffn_w2 = add(prefix + ".ffn.w2", Tensor::randn({4 * d, d}, rng, init_std), freeze_base);
  lp.ffn_b2 = add(prefix + ".ffn.b2", Tensor::zeros({d}), freeze_base);
  lp.ffn_post_gain = add(prefix + ".ffn.post_ln.gain", Tensor::full({d}, 1.0), freeze_base);
  lp.ffn_post_bias = add(prefix + ".ffn.post_ln.bias", Tensor::zeros({d}), freeze_base);
  return lp;
}

// --- channel masks ----------------------------------------------------------

// Spatial channel key set: own frame plus the text/rate/[B] block,
// intersected with the region mask. Text-query rows keep region permissions.
inline AttentionMask base_channel_mask(const TokenSequence& seq, const AttentionMask& region) {
  AttentionMask m = region;
  for (int q = seq.frame_begin(); q < seq.length(); ++q) {
    const Coord3 cq = seq.coord(q);
    for (int k = seq.frame_begin(); k < seq.length(); ++k) {
      if (m.at(q, k) && seq.coord(k).t != cq.t) m.set(q, k, false);
    }
  }
  return m;
}

// Temporal channel mask for one layer. local3d applies the 3D box; swin3d
// applies the (possibly half-shifted) window partition. Both keep text keys
// and the region rule; in a stage-1 layout the union over layer parities
// stays inside swin_ar_mask, which is what the wavefront scheduler assumes.
inline AttentionMask plus_channel_mask(const TokenSequence& seq, const ChannelConfig& cc,
                                       bool shifted_layer, const AttentionMask& region) {
  if (cc.kind == ChannelKind::local3d) return local_rf_mask(seq, cc.extent, region);
  WindowConfig w = cc.window;
  w.x = seq.fx;
  w.y = seq.fy;
  return swin_partition_mask(seq, w, shifted_layer, region);
}

// --- forward blocks on the tape ---------------------------------------------

// Sink for one layer/head/channel attention matrix (post-softmax).
struct AttnCapture {
  int layer = -1;
  int head = -1;
  int channel = 0;  // 0 = base, 1 = plus
  Tensor probs;
  bool filled = false;
};

inline Var multihead_attention(Tape& tp, Var x, const AttentionMask* mask, int heads, Var wq,
                               Var wk, Var wv, Var wo, AttnCapture* cap = nullptr, int layer = -1,
                               int channel = 0) {
  const int d = tp.val(x).shape[1];
  if (heads < 1 || d % heads != 0)
    throw std::invalid_argument("multihead_attention: hidden size not divisible by heads");
  const int dh = d / heads;
  Var q = tp.matmul(x, wq);
  Var k = tp.matmul(x, wk);
  Var v = tp.matmul(x, wv);
  std::vector<Var> ctx;
  ctx.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Var qh = tp.slice_cols(q, h * dh, dh);
    Var kh = tp.slice_cols(k, h * dh, dh);
    Var vh = tp.slice_cols(v, h * dh, dh);
    Var sc = tp.scale(tp.matmul_nt(qh, kh), 1.0 / std::sqrt(static_cast<double>(dh)));
    Var pr = tp.masked_softmax(sc, mask);
    if (cap && cap->layer == layer && cap->head == h && cap->channel == channel) {
      cap->probs = tp.val(pr);
      cap->filled = true;
    }
    ctx.push_back(tp.matmul(pr, vh));
  }
  return tp.matmul(tp.concat_cols(ctx), wo);
}

// x_out = x_in + LN(alpha . base(LN(x_in)) + (1-alpha) . plus(LN(x_in)))
inline Var dual_channel_block(Tape& tp, Var x_in, const LayerParams& lp, int heads,
                              const AttentionMask* base_mask, const AttentionMask* plus_mask,
                              AttnCapture* cap = nullptr, int layer = -1) {
  Var y = tp.layer_norm(x_in, tp.param(*lp.attn_pre_gain), tp.param(*lp.attn_pre_bias));
  Var base_out = multihead_attention(tp, y, base_mask, heads, tp.param(*lp.base_wq),
                                     tp.param(*lp.base_wk), tp.param(*lp.base_wv),
                                     tp.param(*lp.base_wo), cap, layer, 0);
  Var mixed = base_out;
  if (lp.has_plus()) {
    Var plus_out = multihead_attention(tp, y, plus_mask, heads, tp.param(*lp.plus_wq),
                                       tp.param(*lp.plus_wk), tp.param(*lp.plus_wv),
                                       tp.param(*lp.plus_wo), cap, layer, 1);
    mixed = tp.mix(base_out, plus_out, tp.param(*lp.mix_a));
  }
  Var z = tp.layer_norm(mixed, tp.param(*lp.attn_post_gain), tp.param(*lp.attn_post_bias));
  return tp.add(x_in, z);
}

// x_out = x_in + LN(W2 gelu(W1 LN(x_in) + b1) + b2); both channels share it.
inline Var shared_ffn_block(Tape& tp, Var x_in, const LayerParams& lp) {
  Var u = tp.layer_norm(x_in, tp.param(*lp.ffn_pre_gain), tp.param(*lp.ffn_pre_bias));
  Var h = tp.gelu(tp.add_bias_row(tp.matmul(u, tp.param(*lp.ffn_w1)), tp.param(*lp.ffn_b1)));
  Var f = tp.add_bias_row(tp.matmul(h, tp.param(*lp.ffn_w2)), tp.param(*lp.ffn_b2));
  Var z = tp.layer_norm(f, tp.param(*lp.ffn_post_gain), tp.param(*lp.ffn_post_bias));
  return tp.add(x_in, z);
}

// --- eager, single-block entry points ---------------------------------------

inline Tensor attention_base_forward(const Tensor& x, const TokenSequence& seq,
                                     const LayerParams& lp, int heads) {
  if (x.shape.size() != 2 || x.shape[0] != seq.length())
    throw std::invalid_argument("attention_base_forward: x rows must match sequence length");
  const AttentionMask region = coglm_mask(seq);
  const AttentionMask mask = base_channel_mask(seq, region);
  Tape tp(false);
  Var out = multihead_attention(tp, tp.input(x), &mask, heads, tp.param(*lp.base_wq),
                                tp.param(*lp.base_wk), tp.param(*lp.base_wv),
                                tp.param(*lp.base_wo));
  return tp.val(out);
}

inline Tensor attention_plus_forward(const Tensor& x, const TokenSequence& seq,
                                     const LayerParams& lp, int heads, const ChannelConfig& cc,
                                     bool shifted_layer = false) {
  if (!lp.has_plus()) throw std::invalid_argument("attention_plus_forward: layer has no plus channel");
  const AttentionMask region = coglm_mask(seq);
  const AttentionMask mask = plus_channel_mask(seq, cc, shifted_layer, region);
  Tape tp(false);
  Var out = multihead_attention(tp, tp.input(x), &mask, heads, tp.param(*lp.plus_wq),
                                tp.param(*lp.plus_wk), tp.param(*lp.plus_wv),
                                tp.param(*lp.plus_wo));
  return tp.val(out);
}

inline Tensor dual_channel_forward(const Tensor& x, const TokenSequence& seq,
                                   const LayerParams& lp, int heads, const ChannelConfig& cc,
                                   bool shifted_layer = false) {
  const AttentionMask region = coglm_mask(seq);
  const AttentionMask bmask = base_channel_mask(seq, region);
  const AttentionMask pmask = plus_channel_mask(seq, cc, shifted_layer, region);
  Tape tp(false);
  Var out = dual_channel_block(tp, tp.input(x), lp, heads, &bmask, &pmask);
  return tp.val(out);
}

inline Tensor shared_ffn_forward(const Tensor& x, const LayerParams& lp) {
  Tape tp(false);
  Var out = shared_ffn_block(tp, tp.input(x), lp);
  return tp.val(out);
}

}  // namespace hiervid
