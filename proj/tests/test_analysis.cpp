#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "hiervid/analysis.hpp"

using namespace hiervid;
namespace fs = std::filesystem;

namespace {

ModelConfig small_config() {
  ModelConfig mc;
  mc.d = 16;
  mc.layers = 2;
  mc.heads = 2;
  mc.f = 2;
  mc.ts = 3;
  mc.n_text = 4;
  return mc;
}

TokenSequence probe_seq(const ModelConfig& mc, std::uint64_t seed) {
  const Vocab voc = mc.vocab();
  Rng rng(seed);
  std::vector<TokenGrid> frames;
  for (int t = 0; t < mc.ts; ++t) {
    TokenGrid g(mc.f);
    for (auto& tok : g.tokens) tok = rng.uniform_int(mc.v_img());
    frames.push_back(g);
  }
  return build_stage1_sequence(voc.rate_id(0), {voc.text_id(1)}, frames, mc.n_text, 1.0, voc);
}

}  // namespace

TEST_CASE("attention summary rows sum to the frame token count on every head") {
  ModelConfig mc = small_config();
  Model model(mc, 3);
  TokenSequence seq = probe_seq(mc, 5);
  for (int l = 0; l < mc.layers; ++l)
    for (int h = 0; h < mc.heads; ++h)
      for (int ch = 0; ch < 2; ++ch) {
        AttentionSummary s = attention_summary(model, seq, l, h, static_cast<AttnChannel>(ch));
        for (int i = 0; i < seq.ts; ++i) {
          double sum = 0.0;
          for (int j = 0; j <= seq.ts; ++j) sum += s.at(i, j);
          REQUIRE(std::abs(sum - seq.tokens_per_frame()) <= 1e-6);
        }
      }
}

TEST_CASE("base channel has exactly zero cross-frame attention mass") {
  ModelConfig mc = small_config();
  Model model(mc, 7);
  TokenSequence seq = probe_seq(mc, 9);
  for (int l = 0; l < mc.layers; ++l)
    for (int h = 0; h < mc.heads; ++h) {
      AttentionSummary s = attention_summary(model, seq, l, h, AttnChannel::base);
      for (int i = 0; i < seq.ts; ++i)
        for (int j = 0; j < seq.ts; ++j)
          if (i != j) REQUIRE(s.at(i, j) == 0.0);
    }
}

TEST_CASE("zero-score attention distributes uniformly over visible keys") {
  ModelConfig mc = small_config();
  Model model(mc, 11);
  // zero query/key projections -> scores 0 -> uniform over the mask row
  for (int l = 0; l < mc.layers; ++l) {
    for (const char* n : {"base.wq", "base.wk", "plus.wq", "plus.wk"}) {
      Parameter* p = model.find("layer" + std::to_string(l) + "." + n);
      for (auto& v : p->value.data) v = 0.0;
    }
  }
  TokenSequence seq = probe_seq(mc, 13);
  const Model::MaskSet& ms = model.masks_for(seq);
  AttentionSummary s = attention_summary(model, seq, 0, 0, AttnChannel::base);
  // enumeration oracle from the mask
  for (int i = 0; i < seq.ts; ++i) {
    for (int j = 0; j <= seq.ts; ++j) {
      double want = 0.0;
      for (int q = seq.frame_begin(); q < seq.length(); ++q) {
        if (seq.coord(q).t != i) continue;
        const int visible = ms.base.row_count(q);
        int in_col = 0;
        for (int k = 0; k < seq.length(); ++k) {
          if (!ms.base.at(q, k)) continue;
          const bool is_text = k < seq.frame_begin();
          if ((j == seq.ts && is_text) || (j < seq.ts && !is_text && seq.coord(k).t == j)) ++in_col;
        }
        want += static_cast<double>(in_col) / visible;
      }
      REQUIRE(std::abs(s.at(i, j) - want) <= 1e-9);
    }
  }
}

TEST_CASE("attention summary validates layer and head indices") {
  ModelConfig mc = small_config();
  Model model(mc, 15);
  TokenSequence seq = probe_seq(mc, 17);
  REQUIRE_THROWS_AS(attention_summary(model, seq, 99, 0, AttnChannel::base),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(attention_summary(model, seq, 0, 99, AttnChannel::base),
                    std::invalid_argument);
}

TEST_CASE("alpha statistics: zero pre-activation and saturated alternation") {
  ModelConfig mc = small_config();
  Model model(mc, 19);
  auto stats0 = alpha_stats(model);  // a initializes to zero
  REQUIRE(stats0.size() == static_cast<std::size_t>(mc.layers));
  for (const AlphaStats& st : stats0) {
    REQUIRE(st.mean == Catch::Approx(0.5).margin(1e-12));
    REQUIRE(st.variance == 0.0);
  }
  for (int l = 0; l < mc.layers; ++l) {
    Parameter* a = model.find("layer" + std::to_string(l) + ".mix.a");
    for (int i = 0; i < a->value.numel(); ++i) a->value.at(i) = (i % 2 == 0) ? 20.0 : -20.0;
  }
  auto stats = alpha_stats(model);
  for (const AlphaStats& st : stats) {
    REQUIRE(st.mean == Catch::Approx(0.5).margin(1e-8));
    REQUIRE(st.variance == Catch::Approx(0.25).margin(1e-8));
    REQUIRE(st.mean > 0.0);
    REQUIRE(st.mean < 1.0);
  }
}

TEST_CASE("summary and alpha files are written") {
  ModelConfig mc = small_config();
  Model model(mc, 21);
  TokenSequence seq = probe_seq(mc, 23);
  AttentionSummary s = attention_summary(model, seq, 0, 1, AttnChannel::plus);
  const fs::path csv = fs::temp_directory_path() / "hiervid_sum.csv";
  const fs::path pgm = fs::temp_directory_path() / "hiervid_sum.pgm";
  const fs::path acsv = fs::temp_directory_path() / "hiervid_alpha.csv";
  write_summary_csv(s, csv);
  write_summary_pgm(s, pgm);
  write_alpha_csv(alpha_stats(model), acsv);
  REQUIRE(fs::file_size(csv) > 0);
  REQUIRE(fs::file_size(pgm) > 0);
  REQUIRE(fs::file_size(acsv) > 0);
  fs::remove(csv);
  fs::remove(pgm);
  fs::remove(acsv);
}
