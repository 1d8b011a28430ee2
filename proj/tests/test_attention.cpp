#include <catch2/catch_amalgamated.hpp>

#include <deque>

#include "hiervid/attention.hpp"

using namespace hiervid;

namespace {

Vocab test_vocab() { return Vocab{16, kTextVocab, 5}; }

TokenSequence stage1_seq(int ts, int f, int n_text, std::uint64_t seed) {
  const Vocab voc = test_vocab();
  Rng rng(seed);
  std::vector<TokenGrid> frames;
  for (int t = 0; t < ts; ++t) {
    TokenGrid g(f);
    for (auto& tok : g.tokens) tok = rng.uniform_int(16);
    frames.push_back(g);
  }
  return build_stage1_sequence(voc.rate_id(0), {voc.text_id(1)}, frames, n_text, 1.0, voc);
}

struct LayerFixture {
  std::deque<Parameter> store;
  LayerParams lp;
  LayerFixture(int d, std::uint64_t seed, bool with_plus = true, double std = 0.08) {
    Rng rng(seed);
    lp = alloc_layer_params(store, "t", d, rng, std, false, with_plus);
  }
};

ChannelConfig swin_cfg(int a, int f) {
  ChannelConfig cc;
  cc.kind = ChannelKind::swin3d;
  cc.window = WindowConfig{a, a, f, f};
  return cc;
}

ChannelConfig local_cfg(int lt, int lx, int ly) {
  ChannelConfig cc;
  cc.kind = ChannelKind::local3d;
  cc.extent = LocalExtent{lt, lx, ly};
  return cc;
}

}  // namespace

TEST_CASE("base forward with a single frame equals plain region-masked attention") {
  const int d = 16, heads = 2;
  TokenSequence seq = stage1_seq(1, 4, 8, 3);
  LayerFixture fx(d, 7);
  Rng xr(9);
  Tensor x = Tensor::randn({seq.length(), d}, xr, 0.7);
  Tensor base = attention_base_forward(x, seq, fx.lp, heads);

  AttentionMask cog = coglm_mask(seq);
  Tape tp(false);
  Var out = multihead_attention(tp, tp.input(x), &cog, heads, tp.param(*fx.lp.base_wq),
                                tp.param(*fx.lp.base_wk), tp.param(*fx.lp.base_wv),
                                tp.param(*fx.lp.base_wo));
  REQUIRE(base.data == tp.val(out).data);
}

TEST_CASE("base forward at frame t ignores permutations of other frames") {
  const int d = 16, heads = 2;
  TokenSequence seq = stage1_seq(3, 2, 4, 11);
  LayerFixture fx(d, 13);
  Rng xr(15);
  Tensor x = Tensor::randn({seq.length(), d}, xr, 0.7);
  Tensor y0 = attention_base_forward(x, seq, fx.lp, heads);

  // swap two rows inside frame 2's block
  Tensor xp = x;
  const int a = seq.pos_of(2, 0, 0), b = seq.pos_of(2, 1, 1);
  for (int j = 0; j < d; ++j) std::swap(xp.at(a, j), xp.at(b, j));
  Tensor y1 = attention_base_forward(xp, seq, fx.lp, heads);
  for (int p = seq.frame_begin(); p < seq.length(); ++p) {
    if (seq.coord(p).t == 2) continue;
    for (int j = 0; j < d; ++j) REQUIRE(y0.at(p, j) == y1.at(p, j));
  }
}

TEST_CASE("zero value projection gives zero attention output") {
  const int d = 8, heads = 2;
  TokenSequence seq = stage1_seq(2, 2, 4, 17);
  LayerFixture fx(d, 19);
  for (auto& v : fx.lp.base_wv->value.data) v = 0.0;
  Rng xr(21);
  Tensor x = Tensor::randn({seq.length(), d}, xr, 1.0);
  Tensor y = attention_base_forward(x, seq, fx.lp, heads);
  for (double v : y.data) REQUIRE(v == 0.0);
}

TEST_CASE("plus channel with full-extent 3D box equals the base channel on one frame") {
  const int d = 16, heads = 2;
  TokenSequence seq = stage1_seq(1, 4, 8, 23);
  LayerFixture fx(d, 25);
  Rng xr(27);
  Tensor x = Tensor::randn({seq.length(), d}, xr, 0.7);
  Tensor base = attention_base_forward(x, seq, fx.lp, heads);
  Tensor plus = attention_plus_forward(x, seq, fx.lp, heads, local_cfg(1, 4, 4));
  REQUIRE(base.data == plus.data);
}

TEST_CASE("swin plus channel with frame-sized window sees strictly more than base for t>0") {
  TokenSequence seq = stage1_seq(3, 4, 8, 29);
  AttentionMask region = coglm_mask(seq);
  AttentionMask base = base_channel_mask(seq, region);
  AttentionMask plus = plus_channel_mask(seq, swin_cfg(4, 4), false, region);
  bool strictly_more = false;
  for (int q = seq.frame_begin(); q < seq.length(); ++q) {
    for (int k = 0; k < seq.length(); ++k) {
      if (base.at(q, k)) REQUIRE(plus.at(q, k));  // superset
      if (seq.coord(q).t > 0 && plus.at(q, k) && !base.at(q, k)) strictly_more = true;
    }
  }
  REQUIRE(strictly_more);
}

TEST_CASE("temporally isolated plus channel equals base given identical weights") {
  const int d = 16, heads = 2;
  TokenSequence seq = stage1_seq(3, 4, 8, 31);
  LayerFixture fx(d, 33);  // plus weights are copies of base
  Rng xr(35);
  Tensor x = Tensor::randn({seq.length(), d}, xr, 0.7);
  Tensor base = attention_base_forward(x, seq, fx.lp, heads);
  Tensor plus = attention_plus_forward(x, seq, fx.lp, heads, local_cfg(1, 4, 4));
  REQUIRE(base.data == plus.data);
}

TEST_CASE("dual block saturates to the base-only block as a -> +inf") {
  const int d = 16, heads = 2;
  TokenSequence seq = stage1_seq(3, 4, 8, 37);
  LayerFixture with_plus(d, 41);
  LayerFixture base_only(d, 41, false);  // same seed, same base weights
  for (auto& v : with_plus.lp.mix_a->value.data) v = 20.0;
  // make the channels genuinely different so the test is not vacuous
  for (auto& v : with_plus.lp.plus_wv->value.data) v = -v;
  Rng xr(43);
  Tensor x = Tensor::randn({seq.length(), d}, xr, 0.7);
  Tensor dual = dual_channel_forward(x, seq, with_plus.lp, heads, swin_cfg(2, 4));
  Tensor base = dual_channel_forward(x, seq, base_only.lp, heads, swin_cfg(2, 4));
  for (int i = 0; i < dual.numel(); ++i) REQUIRE(std::abs(dual.at(i) - base.at(i)) < 1e-6);
}

TEST_CASE("init equivalence: copied plus weights on a single frame match base-only exactly") {
  const int d = 16, heads = 2;
  LayerFixture with_plus(d, 47);
  LayerFixture base_only(d, 47, false);
  for (int trial = 0; trial < 5; ++trial) {
    TokenSequence seq = stage1_seq(1, 4, 8, 100 + trial);
    Rng xr(200 + trial);
    Tensor x = Tensor::randn({seq.length(), d}, xr, 0.7);
    Tensor dual = dual_channel_forward(x, seq, with_plus.lp, heads, local_cfg(1, 4, 4));
    Tensor base = dual_channel_forward(x, seq, base_only.lp, heads, local_cfg(1, 4, 4));
    for (int i = 0; i < dual.numel(); ++i)
      REQUIRE(std::abs(dual.at(i) - base.at(i)) <= 1e-9);
  }
}

TEST_CASE("with weight- and mask-identical channels the output is exactly independent of a") {
  const int d = 16, heads = 2;
  TokenSequence seq = stage1_seq(1, 4, 8, 51);
  LayerFixture fx(d, 53);
  Rng xr(55);
  Tensor x = Tensor::randn({seq.length(), d}, xr, 0.7);
  Tensor out_zero = dual_channel_forward(x, seq, fx.lp, heads, local_cfg(1, 4, 4));
  Rng ar(57);
  for (auto& v : fx.lp.mix_a->value.data) v = ar.uniform(-7.0, 7.0);
  Tensor out_rand = dual_channel_forward(x, seq, fx.lp, heads, local_cfg(1, 4, 4));
  REQUIRE(out_zero.data == out_rand.data);  // bitwise
}

TEST_CASE("mix with a=0 averages the channels") {
  Tape tp(false);
  Var b = tp.input(Tensor::from({2, 2}, {1, 2, 3, 4}));
  Var p = tp.input(Tensor::from({2, 2}, {5, 6, 7, 8}));
  Var a = tp.input(Tensor::zeros({2}));
  Tensor out = tp.val(tp.mix(b, p, a));
  REQUIRE(out.at(0, 0) == Catch::Approx(3.0).margin(1e-15));
  REQUIRE(out.at(1, 1) == Catch::Approx(6.0).margin(1e-15));
}

TEST_CASE("shared FFN with zero weights and biases is the identity") {
  const int d = 8;
  LayerFixture fx(d, 61);
  for (Parameter* p : {fx.lp.ffn_w1, fx.lp.ffn_b1, fx.lp.ffn_w2, fx.lp.ffn_b2})
    for (auto& v : p->value.data) v = 0.0;
  Rng xr(63);
  Tensor x = Tensor::randn({5, d}, xr, 1.0);
  Tensor y = shared_ffn_forward(x, fx.lp);
  REQUIRE(y.data == x.data);
}

TEST_CASE("shared FFN is position-wise: permuting rows permutes outputs") {
  const int d = 8;
  LayerFixture fx(d, 65);
  Rng xr(67);
  Tensor x = Tensor::randn({4, d}, xr, 1.0);
  Tensor y = shared_ffn_forward(x, fx.lp);
  Tensor xp(std::vector<int>{4, d});
  const int perm[4] = {2, 0, 3, 1};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < d; ++j) xp.at(i, j) = x.at(perm[i], j);
  Tensor yp = shared_ffn_forward(xp, fx.lp);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < d; ++j) REQUIRE(yp.at(i, j) == y.at(perm[i], j));
}

TEST_CASE("full dual-channel block passes the gradient check") {
  const int d = 16, heads = 2;
  TokenSequence seq = stage1_seq(2, 2, 4, 71);
  LayerFixture fx(d, 73);
  // decorrelate the channels so every gradient path is live
  Rng pr(75);
  for (auto& v : fx.lp.plus_wq->value.data) v += pr.normal() * 0.02;
  for (auto& v : fx.lp.mix_a->value.data) v = pr.normal();
  AttentionMask region = coglm_mask(seq);
  AttentionMask bmask = base_channel_mask(seq, region);
  AttentionMask pmask = plus_channel_mask(seq, swin_cfg(2, 2), false, region);
  Rng xr(77);
  Tensor x = Tensor::randn({seq.length(), d}, xr, 0.7);
  std::vector<Parameter*> params;
  for (auto& p : fx.store) params.push_back(&p);
  auto f = [&](bool with_grad) {
    Tape tp(with_grad);
    Var out = dual_channel_block(tp, tp.input(x), fx.lp, heads, &bmask, &pmask);
    Var loss = tp.mean_all(tp.gelu(out));
    if (with_grad) tp.backward(loss);
    return tp.val(loss).at(0);
  };
  Rng cr(79);
  REQUIRE(grad_check(f, params, 1e-5, 64, cr) <= 1e-4);
}

TEST_CASE("alternating window shift lets information cross windows over two layers") {
  const int d = 8, heads = 2, f = 4, ts = 3, a = 2;
  TokenSequence seq = stage1_seq(ts, f, 4, 81);
  LayerFixture l0(d, 83);
  LayerFixture l1(d, 85);
  AttentionMask region = coglm_mask(seq);
  AttentionMask bmask = base_channel_mask(seq, region);
  AttentionMask p_aligned = plus_channel_mask(seq, swin_cfg(a, f), false, region);
  AttentionMask p_shifted = plus_channel_mask(seq, swin_cfg(a, f), true, region);

  Parameter x("x", Tensor::zeros({seq.length(), d}), false);
  Rng xr(87);
  x.value = Tensor::randn({seq.length(), d}, xr, 0.7);
  x.grad = Tensor::zeros(x.value.shape);

  const int src = seq.pos_of(0, 0, 0);
  const int dst = seq.pos_of(2, a, a);

  auto input_grad = [&](bool two_layers) {
    x.zero_grad();
    Tape tp(true);
    Var v = tp.param(x);
    Var h = dual_channel_block(tp, v, l0.lp, heads, &bmask, &p_aligned);
    if (two_layers) h = dual_channel_block(tp, h, l1.lp, heads, &bmask, &p_shifted);
    Var row = tp.slice_rows(h, dst, 1);
    Var loss = tp.mean_all(row);
    tp.backward(loss);
    double g = 0.0;
    for (int j = 0; j < d; ++j) g += std::abs(x.grad.at(src, j));
    return g;
  };

  REQUIRE(input_grad(false) == 0.0);  // one aligned layer cannot reach across windows
  REQUIRE(input_grad(true) > 0.0);    // aligned + shifted composition can
}
