#include <catch2/catch_amalgamated.hpp>

#include "hiervid/masks.hpp"
#include "hiervid/scheduler.hpp"

using namespace hiervid;

namespace {

Vocab test_vocab() { return Vocab{16, kTextVocab, 5}; }

TokenSequence stage1_seq(int ts = 5, int f = 4, int n_text = 8) {
  const Vocab voc = test_vocab();
  std::vector<TokenGrid> frames(static_cast<std::size_t>(ts), TokenGrid(f));
  return build_stage1_sequence(voc.rate_id(0), {voc.text_id(1)}, frames, n_text, 1.0, voc);
}

TokenSequence stage2_seq(int ts = 5, int f = 4, int n_text = 8) {
  const Vocab voc = test_vocab();
  std::vector<std::pair<int, TokenGrid>> known;
  for (int t = 0; t < ts; t += 2) known.emplace_back(t + 1, TokenGrid(f));
  return build_stage2_sequence(voc.rate_id(1), {voc.text_id(1)}, known, ts, n_text, 2.0, voc);
}

bool coglm_rule(const TokenSequence& s, int q, int k) {
  const bool qu = s.region[static_cast<std::size_t>(q)] == Region::unidirectional;
  const bool ku = s.region[static_cast<std::size_t>(k)] == Region::unidirectional;
  return qu ? (!ku || k <= q) : !ku;
}

}  // namespace

TEST_CASE("coglm mask: all-bidirectional sequence gives the full matrix") {
  const Vocab voc = test_vocab();
  TokenSequence s = make_layout_sequence(2, 2, 2, 4, voc);
  for (auto& r : s.region) r = Region::bidirectional;
  AttentionMask m = coglm_mask(s);
  for (int q = 0; q < m.n; ++q)
    for (int k = 0; k < m.n; ++k) REQUIRE(m.at(q, k));
}

TEST_CASE("coglm mask matches the pairwise rule on stage-1 and stage-2 sequences") {
  for (const TokenSequence& s : {stage1_seq(), stage2_seq()}) {
    AttentionMask m = coglm_mask(s);
    for (int q = 0; q < s.length(); ++q)
      for (int k = 0; k < s.length(); ++k) REQUIRE(m.at(q, k) == coglm_rule(s, q, k));
  }
}

TEST_CASE("coglm mask: stage-1 frame block is lower triangular with full text access") {
  TokenSequence s = stage1_seq();
  AttentionMask m = coglm_mask(s);
  for (int q = s.frame_begin(); q < s.length(); ++q) {
    for (int k = 0; k < s.frame_begin(); ++k) REQUIRE(m.at(q, k));
    for (int k = s.frame_begin(); k < s.length(); ++k) REQUIRE(m.at(q, k) == (k <= q));
  }
}

TEST_CASE("coglm mask: stage-2 interpolation targets see knowns but not later targets") {
  TokenSequence s = stage2_seq();
  AttentionMask m = coglm_mask(s);
  const int f2 = s.pos_of(1, 0, 0);  // frame 2 (0-indexed t=1) is a target
  REQUIRE(m.at(f2, s.pos_of(0, 3, 3)));   // frame 1 known
  REQUIRE(m.at(f2, s.pos_of(2, 0, 0)));   // frame 3 known
  REQUIRE(m.at(f2, s.pos_of(4, 2, 2)));   // frame 5 known
  REQUIRE(!m.at(f2, s.pos_of(3, 0, 0)));  // frame 4 is a later target
  // never a later unidirectional key
  for (int q = 0; q < s.length(); ++q)
    for (int k = q + 1; k < s.length(); ++k)
      if (s.region[static_cast<std::size_t>(k)] == Region::unidirectional) REQUIRE(!m.at(q, k));
}

TEST_CASE("local_rf_mask with full extent equals the region mask") {
  TokenSequence s = stage1_seq();
  AttentionMask base = coglm_mask(s);
  REQUIRE(local_rf_mask(s, LocalExtent{s.ts, s.fx, s.fy}, base) == base);
  // oversized extents behave as the full extent
  REQUIRE(local_rf_mask(s, LocalExtent{99, 99, 99}, base) == base);
}

TEST_CASE("local_rf_mask with l_t=1 isolates frames temporally") {
  TokenSequence s = stage1_seq();
  AttentionMask base = coglm_mask(s);
  AttentionMask m = local_rf_mask(s, LocalExtent{1, s.fx, s.fy}, base);
  for (int q = s.frame_begin(); q < s.length(); ++q)
    for (int k = s.frame_begin(); k < s.length(); ++k)
      if (m.at(q, k)) REQUIRE(s.coord(q).t == s.coord(k).t);
}

TEST_CASE("local_rf_mask box enumeration at token (0,2,2) with 2x2 extent") {
  TokenSequence s = stage1_seq();
  // full-permission base over frames isolates the pure box geometry
  AttentionMask base(s.length());
  for (auto& b : base.allow) b = 1;
  AttentionMask m = local_rf_mask(s, LocalExtent{1, 2, 2}, base);
  const int q = s.pos_of(0, 2, 2);
  int frame_keys = 0;
  for (int k = s.frame_begin(); k < s.length(); ++k)
    if (m.at(q, k)) {
      ++frame_keys;
      const Coord3 c = s.coord(k);
      REQUIRE(c.t == 0);
      REQUIRE(std::abs(c.x - 2) <= 1);
      REQUIRE(std::abs(c.y - 2) <= 1);
    }
  REQUIRE(frame_keys == 9);
}

TEST_CASE("swin_ar_mask: window covering the frame reduces to the autoregressive mask") {
  TokenSequence s = stage1_seq();
  AttentionMask m = swin_ar_mask(s, WindowConfig{s.fx, s.fy, s.fx, s.fy});
  AttentionMask cog = coglm_mask(s);
  // over frame tokens both are the raster-order triangle
  for (int q = s.frame_begin(); q < s.length(); ++q)
    for (int k = s.frame_begin(); k < s.length(); ++k) REQUIRE(m.at(q, k) == cog.at(q, k));
}

TEST_CASE("swin_ar_mask 2x2 window at token (1,0,0): previous-frame window plus itself") {
  TokenSequence s = stage1_seq();
  AttentionMask m = swin_ar_mask(s, WindowConfig{2, 2, s.fx, s.fy});
  const int q = s.pos_of(1, 0, 0);
  std::vector<Coord3> expect{{0, 0, 0}, {0, 0, 1}, {0, 1, 0}, {0, 1, 1}, {1, 0, 0}};
  int count = 0;
  for (int k = s.frame_begin(); k < s.length(); ++k)
    if (m.at(q, k)) {
      const Coord3 c = s.coord(k);
      bool found = false;
      for (const Coord3& e : expect) found = found || (e == c);
      REQUIRE(found);
      ++count;
    }
  REQUIRE(count == static_cast<int>(expect.size()));
  // text stays visible
  for (int k = 0; k < s.frame_begin(); ++k) REQUIRE(m.at(q, k));
}

TEST_CASE("swin_ar_mask never allows attending a later frame") {
  TokenSequence s = stage1_seq(3, 4, 8);
  AttentionMask m = swin_ar_mask(s, WindowConfig{2, 2, 4, 4});
  for (int q = s.frame_begin(); q < s.length(); ++q)
    for (int k = s.frame_begin(); k < s.length(); ++k)
      if (m.at(q, k)) REQUIRE(s.coord(k).t <= s.coord(q).t);
}

TEST_CASE("swin partition masks stay inside the static swin mask") {
  TokenSequence s = stage1_seq(3, 4, 8);
  const WindowConfig w{2, 2, 4, 4};
  AttentionMask region = coglm_mask(s);
  AttentionMask statik = swin_ar_mask(s, w).intersect(region);
  for (bool shifted : {false, true}) {
    AttentionMask part = swin_partition_mask(s, w, shifted, region);
    for (int q = 0; q < s.length(); ++q)
      for (int k = 0; k < s.length(); ++k)
        if (part.at(q, k) && s.is_frame_position(q) && s.is_frame_position(k))
          REQUIRE(statik.at(q, k));
  }
}

TEST_CASE("reachability oracle contains the relation and nothing for an empty mask") {
  const Vocab voc = test_vocab();
  TokenSequence s = make_layout_sequence(2, 2, 2, 4, voc);
  AttentionMask m = swin_ar_mask(s, WindowConfig{1, 1, 2, 2});
  AttentionMask closure = reachability_oracle(m, s);
  for (int q = s.frame_begin(); q < s.length(); ++q)
    for (int k = s.frame_begin(); k < s.length(); ++k)
      if (m.at(q, k)) REQUIRE(closure.at(q, k));

  AttentionMask empty(s.length());
  AttentionMask c2 = reachability_oracle(empty, s);
  for (int q = 0; q < s.length(); ++q)
    for (int k = 0; k < s.length(); ++k) REQUIRE(!c2.at(q, k));
}

TEST_CASE("reachability includes transitive two-hop paths") {
  const Vocab voc = test_vocab();
  TokenSequence s = make_layout_sequence(3, 4, 4, 4, voc);
  AttentionMask m = swin_ar_mask(s, WindowConfig{2, 2, 4, 4});
  AttentionMask closure = reachability_oracle(m, s);
  // (2,0,0) -> (1,1,1) -> (0,2,2) is a two-hop path; the direct edge is not in
  // the mask (|dx| = 2) but the closure must contain it.
  const int q = s.pos_of(2, 0, 0);
  const int mid = s.pos_of(1, 1, 1);
  const int far = s.pos_of(0, 2, 2);
  REQUIRE(m.at(q, mid));
  REQUIRE(m.at(mid, far));
  REQUIRE(!m.at(q, far));
  REQUIRE(closure.at(q, far));
}

TEST_CASE("independence inequality is sound against the closure on the small grid") {
  const Vocab voc = test_vocab();
  long long violations = 0;
  for (int X : {2, 4, 6})
    for (int Y : {2, 4, 6})
      for (int a : {1, 2, 3})
        for (int ts : {2, 3}) {
          if (a > X || a > Y) continue;
          TokenSequence s = make_layout_sequence(ts, X, Y, 4, voc);
          const WindowConfig w{a, a, X, Y};
          AttentionMask closure = reachability_oracle(swin_ar_mask(s, w), s);
          for (int q = s.frame_begin(); q < s.length(); ++q)
            for (int k = s.frame_begin(); k < s.length(); ++k) {
              const Coord3 cq = s.coord(q), ck = s.coord(k);
              if (ck.t >= cq.t) continue;
              if (!may_depend(ck, cq, w) && closure.at(q, k)) ++violations;
            }
        }
  REQUIRE(violations == 0);
}

TEST_CASE("mask PBM export writes a parseable header") {
  TokenSequence s = stage1_seq(2, 2, 4);
  AttentionMask m = coglm_mask(s);
  const auto path = std::filesystem::temp_directory_path() / "hiervid_mask.pbm";
  write_pbm(m, path);
  std::ifstream in(path, std::ios::binary);
  std::string magic;
  int w = 0, h = 0;
  in >> magic >> w >> h;
  REQUIRE(magic == "P4");
  REQUIRE(w == m.n);
  REQUIRE(h == m.n);
  std::filesystem::remove(path);
}
