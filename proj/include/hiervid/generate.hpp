#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiervid/model.hpp"

namespace hiervid {

// ---------------------------------------------------------------------------
// Sampling and the two-stage hierarchical generation pipeline.
// ---------------------------------------------------------------------------

// greedy: argmax, ties broken toward the lowest token id.
// topk: top-k by logit with temperature; the random stream is derived from
// (seed, t, x, y), so draws are identical no matter the decoding order.
struct Sampler {
  enum class Kind { greedy, topk };
  Kind kind = Kind::greedy;
  int top_k = 8;
  double temperature = 1.0;
  std::uint64_t seed = 0;

  int sample(const double* logits, int n, const Coord3& pos) const {
    if (kind == Kind::greedy) {
      int best = 0;
      for (int i = 1; i < n; ++i)
        if (logits[i] > logits[best]) best = i;
      return best;
    }
    const int k = std::min(top_k < 1 ? 1 : top_k, n);
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return logits[a] > logits[b]; });
    order.resize(static_cast<std::size_t>(k));
    const double temp = temperature > 0.0 ? temperature : 1.0;
    double mx = logits[order[0]] / temp;
    double sum = 0.0;
    std::vector<double> w(static_cast<std::size_t>(k));
    for (int i = 0; i < k; ++i) {
      w[static_cast<std::size_t>(i)] = std::exp(logits[order[static_cast<std::size_t>(i)]] / temp - mx);
      sum += w[static_cast<std::size_t>(i)];
    }
    Rng stream(hash_coords(seed, pos.t, pos.x, pos.y));
    double u = stream.uniform() * sum;
    for (int i = 0; i < k; ++i) {
      u -= w[static_cast<std::size_t>(i)];
      if (u <= 0.0) return order[static_cast<std::size_t>(i)];
    }
    return order[static_cast<std::size_t>(k - 1)];
  }
};

// Decodes every frame token of `seq` in raster order, one forward pass per
// token; the prediction site for position p is p-1.
inline void sequential_decode(const Model& model, TokenSequence& seq, const Sampler& sampler,
                              int threads = 1) {
  const int v = model.config().v_img();
  for (int p = seq.frame_begin(); p < seq.length(); ++p) {
    const Tensor logits = model.forward_logits(seq, nullptr, threads);
    const int site = model.prediction_site(seq, p);
    const double* row = logits.data.data() + static_cast<std::size_t>(site) * v;
    seq.tokens[static_cast<std::size_t>(p)] = sampler.sample(row, v, seq.coord(p));
  }
}

inline TokenSequence make_stage1_prompt(const Model& model, const std::vector<int>& text,
                                        int rate_token, double rate_fps) {
  const ModelConfig& mc = model.config();
  std::vector<TokenGrid> blanks(static_cast<std::size_t>(mc.ts), TokenGrid(mc.f));
  return build_stage1_sequence(rate_token, text, blanks, mc.n_text, rate_fps, mc.vocab());
}

// Stage 1: sequential key-frame generation from text and the rate token.
inline std::vector<TokenGrid> stage1_generate(const Model& model, const std::vector<int>& text,
                                              int rate_token, double rate_fps,
                                              const Sampler& sampler, int threads = 1) {
  if (model.config().stage != 1)
    throw std::invalid_argument("stage1_generate: model is not a stage-1 model");
  TokenSequence seq = make_stage1_prompt(model, text, rate_token, rate_fps);
  sequential_decode(model, seq, sampler, threads);
  std::vector<TokenGrid> out;
  out.reserve(static_cast<std::size_t>(seq.ts));
  for (int t = 0; t < seq.ts; ++t) out.push_back(seq.frame(t));
  return out;
}

namespace detail {

// Decode the even-slot frames of one stage-2 block sequence, in CogLM order.
inline void decode_stage2_targets(const Model& model, TokenSequence& seq, const Sampler& sampler,
                                  int threads) {
  const int v = model.config().v_img();
  for (int p = seq.frame_begin(); p < seq.length(); ++p) {
    if (seq.region[static_cast<std::size_t>(p)] != Region::unidirectional) continue;
    const Tensor logits = model.forward_logits(seq, nullptr, threads);
    const int site = model.prediction_site(seq, p);
    const double* row = logits.data.data() + static_cast<std::size_t>(site) * v;
    seq.tokens[static_cast<std::size_t>(p)] = sampler.sample(row, v, seq.coord(p));
  }
}

}  // namespace detail

// One interpolation round: n known frames in, 2n-1 frames out. Knowns are
// split into 3-frame blocks overlapping by one ([f0 f1 f2], [f2 f3 f4], ...);
// each block becomes a ts=5 stage-2 sequence with knowns at the odd slots. A
// trailing 2-known block (even n) uses the ts=3 variant.
inline std::vector<TokenGrid> interpolate_round(const std::vector<TokenGrid>& frames,
                                                const std::vector<int>& text, int rate_token,
                                                double rate_fps, const Model& stage2,
                                                const Sampler& sampler, int threads = 1) {
  const int n = static_cast<int>(frames.size());
  if (n < 2) throw std::invalid_argument("interpolate_round: need at least 2 frames");
  if (stage2.config().stage != 2)
    throw std::invalid_argument("interpolate_round: model is not a stage-2 model");
  const ModelConfig& mc = stage2.config();
  if (mc.ts < 3 || mc.ts % 2 == 0)
    throw std::invalid_argument("interpolate_round: stage-2 model needs odd ts >= 3");
  const Vocab voc = mc.vocab();
  std::vector<TokenGrid> out(static_cast<std::size_t>(2 * n - 1));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(2 * i)] = frames[static_cast<std::size_t>(i)];
  const int block = (mc.ts + 1) / 2;  // knowns per full block
  for (int j = 0; j + 1 < n; j += block - 1) {
    const int take = std::min(block, n - j);  // trailing blocks may be short
    std::vector<std::pair<int, TokenGrid>> known;
    for (int i = 0; i < take; ++i)
      known.emplace_back(2 * i + 1, frames[static_cast<std::size_t>(j + i)]);
    const int ts_block = 2 * take - 1;
    TokenSequence seq =
        build_stage2_sequence(rate_token, text, known, ts_block, mc.n_text, rate_fps, voc);
    detail::decode_stage2_targets(stage2, seq, sampler, threads);
    for (int i = 0; i + 1 < take; ++i)
      out[static_cast<std::size_t>(2 * (j + i) + 1)] = seq.frame(2 * i + 1);
  }
  return out;
}

struct GeneratedVideo {
  std::vector<TokenGrid> frames;
  double fps = 0.0;
  std::vector<std::string> provenance;  // "stage1" or "interp_round_k" per frame
};

// Nearest trained rate for a requested fps; warns when it has to snap.
inline double nearest_rate(const std::vector<double>& allowed, double fps, std::ostream* warn) {
  double best = allowed[0];
  for (double r : allowed)
    if (std::abs(r - fps) < std::abs(best - fps)) best = r;
  if (best != fps && warn)
    *warn << "generate: rate " << fps << " fps is outside the trained set, using " << best
          << " fps token\n";
  return best;
}

// Stage-1 keyframes at base_fps, then `rounds` interpolation rounds, each
// doubling fps; round k conditions stage 2 on the rate token for
// base_fps * 2^k. Frame count is (ts-1) * 2^rounds + 1.
inline GeneratedVideo hierarchical_generate(const std::vector<int>& text, double base_fps,
                                            int rounds, const Model& stage1, const Model& stage2,
                                            const Sampler& sampler, int threads = 1,
                                            std::ostream* warn = &std::cerr) {
  if (rounds < 0) throw std::invalid_argument("hierarchical_generate: rounds must be >= 0");
  const ModelConfig& mc = stage1.config();
  const Vocab voc = mc.vocab();
  GeneratedVideo video;
  const double r1 = nearest_rate(mc.allowed_rates, base_fps, warn);
  video.frames = stage1_generate(stage1, text, voc.rate_id(rate_index(mc.allowed_rates, r1)),
                                 base_fps, sampler, threads);
  video.fps = base_fps;
  video.provenance.assign(video.frames.size(), "stage1");
  for (int round = 1; round <= rounds; ++round) {
    const double target = base_fps * std::pow(2.0, round);
    const double rr = nearest_rate(stage2.config().allowed_rates, target, warn);
    const int rate_tok = stage2.config().vocab().rate_id(rate_index(stage2.config().allowed_rates, rr));
    video.frames = interpolate_round(video.frames, text, rate_tok, target, stage2, sampler, threads);
    video.fps = target;
    std::vector<std::string> prov(video.frames.size());
    for (std::size_t i = 0; i < video.frames.size(); ++i)
      prov[i] = i % 2 == 0 ? video.provenance[i / 2] : "interp_round_" + std::to_string(round);
    video.provenance = std::move(prov);
  }
  return video;
}

}  // namespace hiervid
