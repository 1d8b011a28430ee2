#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "hiervid/generate.hpp"

using namespace hiervid;

namespace {

ModelConfig gen_config(int stage) {
  ModelConfig mc;
  mc.d = 16;
  mc.layers = 1;
  mc.heads = 2;
  mc.f = 4;
  mc.ts = 5;
  mc.stage = stage;
  return mc;
}

std::vector<TokenGrid> random_grids(int n, int f, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<TokenGrid> out;
  for (int i = 0; i < n; ++i) {
    TokenGrid g(f);
    for (auto& tok : g.tokens) tok = rng.uniform_int(16);
    out.push_back(g);
  }
  return out;
}

}  // namespace

TEST_CASE("greedy stage-1 generation is deterministic and has ts*f*f tokens") {
  ModelConfig mc = gen_config(1);
  Model model(mc, 3);
  const Vocab voc = mc.vocab();
  Sampler greedy;
  auto a = stage1_generate(model, {voc.text_id(2)}, voc.rate_id(0), 1.0, greedy);
  auto b = stage1_generate(model, {voc.text_id(2)}, voc.rate_id(0), 1.0, greedy);
  REQUIRE(a.size() == 5);
  int tokens = 0;
  for (const auto& g : a) tokens += static_cast<int>(g.tokens.size());
  REQUIRE(tokens == mc.ts * mc.f * mc.f);
  for (std::size_t i = 0; i < a.size(); ++i) REQUIRE(a[i] == b[i]);
}

TEST_CASE("stage1_generate rejects a stage-2 model") {
  ModelConfig mc = gen_config(2);
  Model model(mc, 5);
  const Vocab voc = mc.vocab();
  Sampler greedy;
  REQUIRE_THROWS_AS(stage1_generate(model, {}, voc.rate_id(0), 1.0, greedy),
                    std::invalid_argument);
}

TEST_CASE("interpolate_round frame counts follow 2n-1") {
  ModelConfig mc = gen_config(2);
  Model model(mc, 7);
  const Vocab voc = mc.vocab();
  Sampler greedy;
  for (int n : {2, 5, 9}) {
    auto in = random_grids(n, mc.f, 100 + n);
    auto out = interpolate_round(in, {voc.text_id(3)}, voc.rate_id(1), 2.0, model, greedy);
    REQUIRE(static_cast<int>(out.size()) == 2 * n - 1);
    // knowns preserved verbatim at even indices
    for (int i = 0; i < n; ++i) REQUIRE(out[static_cast<std::size_t>(2 * i)] == in[static_cast<std::size_t>(i)]);
  }
  REQUIRE_THROWS_AS(
      interpolate_round(random_grids(1, mc.f, 1), {}, voc.rate_id(1), 2.0, model, greedy),
      std::invalid_argument);
}

TEST_CASE("hierarchical generation: frame counts, fps doubling and provenance") {
  ModelConfig s1 = gen_config(1);
  ModelConfig s2 = gen_config(2);
  Model stage1(s1, 11), stage2(s2, 13);
  const Vocab voc = s1.vocab();
  Sampler greedy;
  std::ostringstream warn;

  GeneratedVideo v0 = hierarchical_generate({voc.text_id(1)}, 1.0, 0, stage1, stage2, greedy, 1,
                                            &warn);
  REQUIRE(v0.frames.size() == 5);
  REQUIRE(v0.fps == 1.0);
  for (const auto& p : v0.provenance) REQUIRE(p == "stage1");

  GeneratedVideo v2 = hierarchical_generate({voc.text_id(1)}, 1.0, 2, stage1, stage2, greedy, 1,
                                            &warn);
  REQUIRE(v2.frames.size() == 17);
  REQUIRE(v2.fps == 4.0);
  // stage-1 keyframes survive at stride-4 indices
  for (int i = 0; i < 5; ++i) {
    REQUIRE(v2.provenance[static_cast<std::size_t>(4 * i)] == "stage1");
    REQUIRE(v2.frames[static_cast<std::size_t>(4 * i)] == v0.frames[static_cast<std::size_t>(i)]);
  }
  int round1 = 0, round2 = 0;
  for (const auto& p : v2.provenance) {
    if (p == "interp_round_1") ++round1;
    if (p == "interp_round_2") ++round2;
  }
  REQUIRE(round1 == 4);
  REQUIRE(round2 == 8);
}

TEST_CASE("rates outside the trained set snap to the nearest with a warning") {
  std::ostringstream warn;
  REQUIRE(nearest_rate({1, 2, 4, 8}, 3.0, &warn) == Catch::Approx(2.0));
  REQUIRE(warn.str().find("outside the trained set") != std::string::npos);
  std::ostringstream quiet;
  REQUIRE(nearest_rate({1, 2, 4, 8}, 4.0, &quiet) == 4.0);
  REQUIRE(quiet.str().empty());
}

TEST_CASE("top-k with k=1 equals greedy and per-position draws ignore order") {
  const double logits[4] = {0.5, 2.0, -1.0, 2.0};
  Sampler greedy;
  Sampler topk1;
  topk1.kind = Sampler::Kind::topk;
  topk1.top_k = 1;
  REQUIRE(greedy.sample(logits, 4, {0, 1, 2}) == 1);  // tie broken toward lower id
  REQUIRE(topk1.sample(logits, 4, {0, 1, 2}) == 1);
  Sampler topk;
  topk.kind = Sampler::Kind::topk;
  topk.top_k = 3;
  topk.seed = 7;
  const int first = topk.sample(logits, 4, {1, 2, 3});
  REQUIRE(topk.sample(logits, 4, {1, 2, 3}) == first);
}

TEST_CASE("stage-2 decoding fills evens in CogLM order and keeps knowns intact") {
  ModelConfig mc = gen_config(2);
  Model model(mc, 17);
  const Vocab voc = mc.vocab();
  auto in = random_grids(3, mc.f, 23);
  Sampler greedy;
  auto out = interpolate_round(in, {voc.text_id(5)}, voc.rate_id(2), 4.0, model, greedy);
  REQUIRE(out.size() == 5);
  REQUIRE(out[0] == in[0]);
  REQUIRE(out[2] == in[1]);
  REQUIRE(out[4] == in[2]);
}
