#pragma once

#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "hiervid/model.hpp"

namespace hiervid {

// ---------------------------------------------------------------------------
// Diagnostics: frame-to-frame attention mass per head and per-layer mixture
// statistics.
// ---------------------------------------------------------------------------

// grid is ts x (ts+1): columns 0..ts-1 are key frames, column ts is the text
// block (rate + text + [B]). Row i sums to the token count of frame i.
struct AttentionSummary {
  int ts = 0;
  std::vector<double> grid;

  double at(int i, int j) const { return grid[static_cast<std::size_t>(i) * (ts + 1) + j]; }
  double& at(int i, int j) { return grid[static_cast<std::size_t>(i) * (ts + 1) + j]; }
};

enum class AttnChannel : int { base = 0, plus = 1 };

inline AttentionSummary attention_summary(const Model& model, const TokenSequence& seq, int layer,
                                          int head, AttnChannel channel, int threads = 1) {
  const ModelConfig& mc = model.config();
  if (layer < 0 || layer >= mc.layers) throw std::invalid_argument("attention_summary: bad layer");
  if (head < 0 || head >= mc.heads) throw std::invalid_argument("attention_summary: bad head");
  if (channel == AttnChannel::plus && mc.spatial_only)
    throw std::invalid_argument("attention_summary: spatial-only model has no plus channel");
  AttnCapture cap;
  cap.layer = layer;
  cap.head = head;
  cap.channel = static_cast<int>(channel);
  model.forward_logits(seq, &cap, threads);
  if (!cap.filled) throw std::runtime_error("attention_summary: capture failed");
  AttentionSummary sum;
  sum.ts = seq.ts;
  sum.grid.assign(static_cast<std::size_t>(seq.ts) * (seq.ts + 1), 0.0);
  const int fb = seq.frame_begin();
  for (int q = fb; q < seq.length(); ++q) {
    const int qi = seq.coord(q).t;
    for (int k = 0; k < seq.length(); ++k) {
      const double p = cap.probs.at(q, k);
      if (p == 0.0) continue;
      if (k < fb)
        sum.at(qi, seq.ts) += p;
      else
        sum.at(qi, seq.coord(k).t) += p;
    }
  }
  return sum;
}

struct AlphaStats {
  double mean = 0.0;
  double variance = 0.0;
};

// alpha = sigmoid(a) per hidden dimension; mean and population variance over
// the dimensions, one entry per layer.
inline std::vector<AlphaStats> alpha_stats(const Model& model) {
  std::vector<AlphaStats> out;
  for (const LayerParams& lp : model.layers()) {
    if (!lp.has_plus()) continue;
    const Tensor& a = lp.mix_a->value;
    AlphaStats st;
    for (double v : a.data) st.mean += sigmoid_scalar(v);
    st.mean /= a.numel();
    for (double v : a.data) {
      const double c = sigmoid_scalar(v) - st.mean;
      st.variance += c * c;
    }
    st.variance /= a.numel();
    out.push_back(st);
  }
  return out;
}

inline void write_summary_csv(const AttentionSummary& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_summary_csv: cannot open " + path.string());
  for (int i = 0; i < s.ts; ++i) {
    for (int j = 0; j <= s.ts; ++j) {
      if (j) out << ",";
      char buf[40];
      std::snprintf(buf, sizeof(buf), "%.17g", s.at(i, j));
      out << buf;
    }
    out << "\n";
  }
}

// Heatmap rendering: one pixel per cell, lighter = larger.
inline void write_summary_pgm(const AttentionSummary& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_summary_pgm: cannot open " + path.string());
  double mx = 0.0;
  for (double v : s.grid) mx = std::max(mx, v);
  out << "P5\n" << (s.ts + 1) << " " << s.ts << "\n255\n";
  for (int i = 0; i < s.ts; ++i)
    for (int j = 0; j <= s.ts; ++j) {
      const double v = mx > 0.0 ? s.at(i, j) / mx : 0.0;
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0))));
    }
}

inline void write_alpha_csv(const std::vector<AlphaStats>& stats,
                            const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_alpha_csv: cannot open " + path.string());
  out << "layer,alpha_mean,alpha_variance\n";
  for (std::size_t l = 0; l < stats.size(); ++l) {
    char buf[96];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g\n", l, stats[l].mean, stats[l].variance);
    out << buf;
  }
}

}  // namespace hiervid
