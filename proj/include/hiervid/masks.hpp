#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "hiervid/sequence.hpp"

namespace hiervid {

// ---------------------------------------------------------------------------
// Attention-permission structures: region (CogLM) masks, 3D local receptive
// fields, shifted-window autoregressive masks, and the reachability oracle
// used to validate parallel decoding schedules.
// ---------------------------------------------------------------------------

struct AttentionMask {
  int n = 0;
  std::vector<std::uint8_t> allow;  // n*n row-major, query x key

  AttentionMask() = default;
  explicit AttentionMask(int size) : n(size), allow(static_cast<std::size_t>(size) * size, 0) {}

  bool at(int q, int k) const { return allow[static_cast<std::size_t>(q) * n + k] != 0; }
  void set(int q, int k, bool v) { allow[static_cast<std::size_t>(q) * n + k] = v ? 1 : 0; }

  int row_count(int q) const {
    int c = 0;
    for (int k = 0; k < n; ++k) c += at(q, k) ? 1 : 0;
    return c;
  }

  AttentionMask intersect(const AttentionMask& o) const {
    if (o.n != n) throw std::invalid_argument("mask intersect: size mismatch");
    AttentionMask out(n);
    for (std::size_t i = 0; i < allow.size(); ++i) out.allow[i] = allow[i] & o.allow[i];
    return out;
  }

  bool operator==(const AttentionMask& o) const { return n == o.n && allow == o.allow; }
};

struct WindowConfig {
  int a_x = 2, a_y = 2;  // shifted-window height / width
  int x = 4, y = 4;      // frame height / width in tokens
};

struct LocalExtent {
  int l_t = 1, l_x = 1, l_y = 1;
};

// Region rule: bidirectional queries see all bidirectional keys;
// unidirectional queries see all bidirectional keys plus unidirectional keys
// at or before their own position.
inline AttentionMask coglm_mask(const TokenSequence& seq) {
  const int L = seq.length();
  AttentionMask m(L);
  for (int q = 0; q < L; ++q) {
    const bool q_uni = seq.region[static_cast<std::size_t>(q)] == Region::unidirectional;
    for (int k = 0; k < L; ++k) {
      const bool k_uni = seq.region[static_cast<std::size_t>(k)] == Region::unidirectional;
      bool ok;
      if (!q_uni)
        ok = !k_uni;
      else
        ok = !k_uni || k <= q;
      m.set(q, k, ok);
    }
  }
  return m;
}

// Eq-style 3D box restriction on frame-frame pairs; keys outside the frame
// volume (text, rate, [B]) keep the base permissions. Extents larger than the
// frame volume act as the full extent.
inline AttentionMask local_rf_mask(const TokenSequence& seq, const LocalExtent& extent,
                                   const AttentionMask& base) {
  if (base.n != seq.length()) throw std::invalid_argument("local_rf_mask: base size mismatch");
  if (extent.l_t < 1 || extent.l_x < 1 || extent.l_y < 1)
    throw std::invalid_argument("local_rf_mask: extents must be >= 1");
  AttentionMask m = base;
  for (int q = seq.frame_begin(); q < seq.length(); ++q) {
    const Coord3 cq = seq.coord(q);
    for (int k = seq.frame_begin(); k < seq.length(); ++k) {
      if (!m.at(q, k)) continue;
      const Coord3 ck = seq.coord(k);
      const bool in_box = std::abs(cq.x - ck.x) < extent.l_x &&
                          std::abs(cq.y - ck.y) < extent.l_y &&
                          std::abs(cq.t - ck.t) < extent.l_t;
      if (!in_box) m.set(q, k, false);
    }
  }
  return m;
}

// Static shifted-window autoregressive mask for a stage-1 layout: window
// locality |dx| < a_x, |dy| < a_y plus the autoregressive order over frames
// and raster positions. Text is always visible to frame queries; text queries
// keep the bidirectional text block.
inline AttentionMask swin_ar_mask(const TokenSequence& seq, const WindowConfig& w) {
  if (w.x != seq.fx || w.y != seq.fy)
    throw std::invalid_argument("swin_ar_mask: window config frame dims disagree with sequence");
  if (w.a_x < 1 || w.a_x > w.x || w.a_y < 1 || w.a_y > w.y)
    throw std::invalid_argument("swin_ar_mask: window outside [1, frame dim]");
  const int L = seq.length();
  const int fb = seq.frame_begin();
  AttentionMask m(L);
  for (int q = 0; q < fb; ++q)
    for (int k = 0; k < fb; ++k) m.set(q, k, true);
  for (int q = fb; q < L; ++q) {
    for (int k = 0; k < fb; ++k) m.set(q, k, true);
    const Coord3 cq = seq.coord(q);
    const int fq = cq.x * seq.fy + cq.y;
    for (int k = fb; k < L; ++k) {
      const Coord3 ck = seq.coord(k);
      const int fk = ck.x * seq.fy + ck.y;
      const bool window = std::abs(cq.x - ck.x) < w.a_x && std::abs(cq.y - ck.y) < w.a_y;
      const bool ar = ck.t < cq.t || (ck.t == cq.t && fk <= fq);
      m.set(q, k, window && ar);
    }
  }
  return m;
}

// Per-layer swin partition mask: tokens attend within their window of the
// aligned (shifted=false) or half-shifted partition, intersected with the
// region mask. This is what the attention-plus channel actually applies; the
// static swin_ar_mask above is the union-of-dependencies view it stays inside.
inline AttentionMask swin_partition_mask(const TokenSequence& seq, const WindowConfig& w,
                                         bool shifted, const AttentionMask& region) {
  if (region.n != seq.length())
    throw std::invalid_argument("swin_partition_mask: region mask size mismatch");
  if (w.x != seq.fx || w.y != seq.fy)
    throw std::invalid_argument("swin_partition_mask: frame dims disagree with sequence");
  const int off_x = shifted ? w.a_x / 2 : 0;
  const int off_y = shifted ? w.a_y / 2 : 0;
  AttentionMask m = region;
  for (int q = seq.frame_begin(); q < seq.length(); ++q) {
    const Coord3 cq = seq.coord(q);
    for (int k = seq.frame_begin(); k < seq.length(); ++k) {
      if (!m.at(q, k)) continue;
      const Coord3 ck = seq.coord(k);
      const bool same_window = (cq.x + off_x) / w.a_x == (ck.x + off_x) / w.a_x &&
                               (cq.y + off_y) / w.a_y == (ck.y + off_y) / w.a_y;
      if (!same_window) m.set(q, k, false);
    }
  }
  return m;
}

// Transitive closure of the attend relation restricted to frame tokens.
// Row q marks every frame position reachable from q through one or more
// attend edges.
inline AttentionMask reachability_oracle(const AttentionMask& mask, const TokenSequence& seq) {
  if (mask.n != seq.length()) throw std::invalid_argument("reachability_oracle: size mismatch");
  const int L = mask.n;
  const int fb = seq.frame_begin();
  const int nf = L - fb;
  const int words = (nf + 63) / 64;
  // closure over the frame-token subgraph, bitset rows
  std::vector<std::uint64_t> reach(static_cast<std::size_t>(nf) * words, 0);
  for (int q = 0; q < nf; ++q) {
    std::uint64_t* row = reach.data() + static_cast<std::size_t>(q) * words;
    for (int k = 0; k < nf; ++k)
      if (mask.at(fb + q, fb + k)) row[k / 64] |= (1ULL << (k % 64));
  }
  // iterate to fixpoint: row |= row of every reachable node
  bool changed = true;
  while (changed) {
    changed = false;
    for (int q = 0; q < nf; ++q) {
      std::uint64_t* row = reach.data() + static_cast<std::size_t>(q) * words;
      for (int k = 0; k < nf; ++k) {
        if (!(row[k / 64] & (1ULL << (k % 64)))) continue;
        const std::uint64_t* krow = reach.data() + static_cast<std::size_t>(k) * words;
        for (int wi = 0; wi < words; ++wi) {
          const std::uint64_t merged = row[wi] | krow[wi];
          if (merged != row[wi]) {
            row[wi] = merged;
            changed = true;
          }
        }
      }
    }
  }
  AttentionMask out(L);
  for (int q = 0; q < nf; ++q)
    for (int k = 0; k < nf; ++k)
      if (reach[static_cast<std::size_t>(q) * words + k / 64] & (1ULL << (k % 64)))
        out.set(fb + q, fb + k, true);
  return out;
}

inline void write_pbm(const AttentionMask& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pbm: cannot open " + path.string());
  out << "P4\n" << m.n << " " << m.n << "\n";
  for (int q = 0; q < m.n; ++q) {
    int byte = 0, bits = 0;
    for (int k = 0; k < m.n; ++k) {
      byte = (byte << 1) | (m.at(q, k) ? 1 : 0);
      if (++bits == 8) {
        out.put(static_cast<char>(byte));
        byte = 0;
        bits = 0;
      }
    }
    if (bits) out.put(static_cast<char>(byte << (8 - bits)));
  }
}

}  // namespace hiervid
