#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiervid/synthvid.hpp"

namespace hiervid {

// ---------------------------------------------------------------------------
// Token sequences: [ {rate}{text...} [B] {frame 1} ... {frame Ts} ] with
// per-position region labels. The rate token occupies the first text slot,
// so total length = n_text + 1 + ts*fx*fy.
// ---------------------------------------------------------------------------

enum class Region : std::uint8_t { bidirectional = 0, unidirectional = 1 };

struct Coord3 {
  int t = 0, x = 0, y = 0;
  bool operator==(const Coord3& o) const { return t == o.t && x == o.x && y == o.y; }
};

// Unified id space: [ image | text | rate | B ].
struct Vocab {
  int v_img = 16;
  int v_text = kTextVocab;
  int v_rate = 1;

  int text_base() const { return v_img; }
  int rate_base() const { return v_img + v_text; }
  int pad() const { return text_base() + kTextPad; }
  int sep() const { return v_img + v_text + v_rate; }  // [B]
  int total() const { return sep() + 1; }

  int text_id(int local) const {
    if (local < 0 || local >= v_text) throw std::invalid_argument("text id out of range");
    return text_base() + local;
  }
  int rate_id(int index) const {
    if (index < 0 || index >= v_rate) throw std::invalid_argument("rate index out of range");
    return rate_base() + index;
  }
};

struct FrameRateSpec {
  std::vector<double> allowed_rates;  // ascending fps
  double chosen_rate = 0.0;
};

inline int rate_index(const std::vector<double>& allowed_rates, double fps) {
  for (std::size_t i = 0; i < allowed_rates.size(); ++i)
    if (allowed_rates[i] == fps) return static_cast<int>(i);
  throw std::invalid_argument("fps not in allowed rate set");
}

struct TokenSequence {
  int ts = 0;        // frames
  int fx = 0;        // frame height in tokens
  int fy = 0;        // frame width in tokens
  int n_text = 0;    // text slots including the rate token
  double rate_fps = 0.0;
  std::vector<int> tokens;
  std::vector<Region> region;
  std::vector<Coord3> position_coords;  // one per frame token

  int length() const { return static_cast<int>(tokens.size()); }
  int frame_begin() const { return n_text + 1; }
  int frame_token_count() const { return ts * fx * fy; }
  int tokens_per_frame() const { return fx * fy; }

  bool is_frame_position(int pos) const { return pos >= frame_begin() && pos < length(); }

  Coord3 coord(int pos) const {
    if (!is_frame_position(pos)) throw std::out_of_range("coord: not a frame position");
    return position_coords[static_cast<std::size_t>(pos - frame_begin())];
  }

  int pos_of(int t, int x, int y) const {
    if (t < 0 || t >= ts || x < 0 || x >= fx || y < 0 || y >= fy)
      throw std::out_of_range("pos_of: coordinate outside frame volume");
    return frame_begin() + (t * fx + x) * fy + y;
  }

  // flat raster index within the frame
  int flat_index(int pos) const {
    Coord3 c = coord(pos);
    return c.x * fy + c.y;
  }

  void set_frame(int t, const TokenGrid& grid) {
    if (grid.grid_side != fx || fx != fy)
      throw std::invalid_argument("set_frame: grid side does not match sequence layout");
    for (int x = 0; x < fx; ++x)
      for (int y = 0; y < fy; ++y) tokens[static_cast<std::size_t>(pos_of(t, x, y))] = grid.at(x, y);
  }

  TokenGrid frame(int t) const {
    if (fx != fy) throw std::invalid_argument("frame: sequence is not square");
    TokenGrid g(fx);
    for (int x = 0; x < fx; ++x)
      for (int y = 0; y < fy; ++y) g.at(x, y) = tokens[static_cast<std::size_t>(pos_of(t, x, y))];
    return g;
  }

  std::vector<int> target_positions() const {
    std::vector<int> out;
    for (int p = 0; p < length(); ++p)
      if (region[static_cast<std::size_t>(p)] == Region::unidirectional) out.push_back(p);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Frame-rate selection and resampling
// ---------------------------------------------------------------------------

// Smallest allowed rate that still fits min_frames sampling instants
// {0, 1/r, 2/r, ...} inside the clip.
inline double select_frame_rate(double clip_duration_s, const std::vector<double>& allowed_rates,
                                int min_frames) {
  if (allowed_rates.empty()) throw std::invalid_argument("select_frame_rate: empty rate set");
  if (min_frames < 1) throw std::invalid_argument("select_frame_rate: min_frames must be >= 1");
  for (std::size_t i = 0; i + 1 < allowed_rates.size(); ++i)
    if (allowed_rates[i] >= allowed_rates[i + 1])
      throw std::invalid_argument("select_frame_rate: rates must be ascending");
  for (double r : allowed_rates) {
    if (r <= 0.0) throw std::invalid_argument("select_frame_rate: rates must be positive");
    if (static_cast<double>(min_frames - 1) / r <= clip_duration_s) return r;
  }
  throw std::runtime_error("select_frame_rate: no allowed rate fits " + std::to_string(min_frames) +
                           " frames in " + std::to_string(clip_duration_s) + " s");
}

// Nearest native frame index for an instant, round half up.
inline int nearest_frame_index(double instant_s, double native_fps, int n_frames) {
  int idx = static_cast<int>(std::floor(instant_s * native_fps + 0.5));
  if (idx < 0) idx = 0;
  if (idx >= n_frames) idx = n_frames - 1;  // boundary instants clamp to the last frame
  return idx;
}

inline std::vector<TokenGrid> sample_frames_at_rate(const SyntheticClip& clip, double rate,
                                                    int count, double start_s, int grid_side,
                                                    int palette_bits) {
  if (count < 1) throw std::invalid_argument("sample_frames_at_rate: count must be >= 1");
  if (rate <= 0.0) throw std::invalid_argument("sample_frames_at_rate: rate must be positive");
  const double end = start_s + static_cast<double>(count - 1) / rate;
  if (start_s < 0.0 || end > clip.duration_s() + 1e-12)
    throw std::out_of_range("sample_frames_at_rate: window outside clip");
  std::vector<TokenGrid> out;
  out.reserve(static_cast<std::size_t>(count));
  const int n = static_cast<int>(clip.frames.size());
  for (int k = 0; k < count; ++k) {
    const double instant = start_s + static_cast<double>(k) / rate;
    out.push_back(quantize_frame(clip.frames[static_cast<std::size_t>(
                                     nearest_frame_index(instant, clip.native_fps, n))],
                                 grid_side, palette_bits));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Sequence builders
// ---------------------------------------------------------------------------

namespace detail {

inline TokenSequence sequence_skeleton(int rate_token, const std::vector<int>& text_unified,
                                       int ts, int f, int n_text, double rate_fps,
                                       const Vocab& vocab) {
  if (static_cast<int>(text_unified.size()) > n_text - 1)
    throw std::invalid_argument("sequence: caption longer than text budget");
  TokenSequence s;
  s.ts = ts;
  s.fx = s.fy = f;
  s.n_text = n_text;
  s.rate_fps = rate_fps;
  const int L = n_text + 1 + ts * f * f;
  s.tokens.assign(static_cast<std::size_t>(L), vocab.pad());
  s.region.assign(static_cast<std::size_t>(L), Region::bidirectional);
  s.tokens[0] = rate_token;
  for (std::size_t i = 0; i < text_unified.size(); ++i) s.tokens[1 + i] = text_unified[i];
  s.tokens[static_cast<std::size_t>(n_text)] = vocab.sep();
  s.position_coords.reserve(static_cast<std::size_t>(ts) * f * f);
  for (int t = 0; t < ts; ++t)
    for (int x = 0; x < f; ++x)
      for (int y = 0; y < f; ++y) s.position_coords.push_back(Coord3{t, x, y});
  return s;
}

}  // namespace detail

// Stage 1: every frame is an autoregressive target.
inline TokenSequence build_stage1_sequence(int rate_token, const std::vector<int>& text,
                                           const std::vector<TokenGrid>& frames, int n_text,
                                           double rate_fps, const Vocab& vocab) {
  if (frames.empty()) throw std::invalid_argument("stage1: needs at least one frame");
  const int ts = static_cast<int>(frames.size());
  const int f = frames[0].grid_side;
  TokenSequence s = detail::sequence_skeleton(rate_token, text, ts, f, n_text, rate_fps, vocab);
  for (int t = 0; t < ts; ++t) {
    if (frames[static_cast<std::size_t>(t)].grid_side != f)
      throw std::invalid_argument("stage1: frames disagree on grid side");
    s.set_frame(t, frames[static_cast<std::size_t>(t)]);
  }
  for (int p = s.frame_begin(); p < s.length(); ++p)
    s.region[static_cast<std::size_t>(p)] = Region::unidirectional;
  return s;
}

// Stage 2: known frames occupy the odd slots 1,3,...,ts (1-indexed) and stay
// bidirectional; even slots are the interpolation targets. Unknown frames are
// filled with image token 0 until decoded (or overwritten with ground truth
// for teacher forcing).
inline TokenSequence build_stage2_sequence(int rate_token, const std::vector<int>& text,
                                           const std::vector<std::pair<int, TokenGrid>>& known,
                                           int ts, int n_text, double rate_fps,
                                           const Vocab& vocab) {
  if (ts < 3 || ts % 2 == 0) throw std::invalid_argument("stage2: ts must be odd and >= 3");
  const int want = (ts + 1) / 2;
  if (static_cast<int>(known.size()) != want)
    throw std::invalid_argument("stage2: expected " + std::to_string(want) + " known frames");
  const int f = known[0].second.grid_side;
  TokenSequence s = detail::sequence_skeleton(rate_token, text, ts, f, n_text, rate_fps, vocab);
  std::vector<bool> seen(static_cast<std::size_t>(ts) + 1, false);
  for (const auto& [slot, grid] : known) {
    if (slot < 1 || slot > ts || slot % 2 == 0)
      throw std::invalid_argument("stage2: known frames must sit at odd 1-indexed slots");
    if (seen[static_cast<std::size_t>(slot)])
      throw std::invalid_argument("stage2: duplicate known slot");
    seen[static_cast<std::size_t>(slot)] = true;
    if (grid.grid_side != f) throw std::invalid_argument("stage2: frames disagree on grid side");
    s.set_frame(slot - 1, grid);
  }
  for (int t = 0; t < ts; ++t) {
    if ((t + 1) % 2 == 0) {
      for (int x = 0; x < f; ++x)
        for (int y = 0; y < f; ++y)
          s.region[static_cast<std::size_t>(s.pos_of(t, x, y))] = Region::unidirectional;
    }
  }
  return s;
}

// Layout-only stage-1 style sequence (rectangular frames allowed); used for
// mask construction and scheduling analysis.
inline TokenSequence make_layout_sequence(int ts, int fx, int fy, int n_text, const Vocab& vocab) {
  TokenSequence s;
  s.ts = ts;
  s.fx = fx;
  s.fy = fy;
  s.n_text = n_text;
  s.rate_fps = 0.0;
  const int L = n_text + 1 + ts * fx * fy;
  s.tokens.assign(static_cast<std::size_t>(L), vocab.pad());
  s.region.assign(static_cast<std::size_t>(L), Region::bidirectional);
  s.tokens[0] = vocab.rate_id(0);
  s.tokens[static_cast<std::size_t>(n_text)] = vocab.sep();
  for (int t = 0; t < ts; ++t)
    for (int x = 0; x < fx; ++x)
      for (int y = 0; y < fy; ++y) s.position_coords.push_back(Coord3{t, x, y});
  for (int p = s.frame_begin(); p < s.length(); ++p)
    s.region[static_cast<std::size_t>(p)] = Region::unidirectional;
  return s;
}

// ---------------------------------------------------------------------------
// Serialization: header line "ts f n_text rate", then "token region" lines.
// ---------------------------------------------------------------------------

inline void write_sequence(const TokenSequence& s, std::ostream& out) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", s.rate_fps);
  out << s.ts << " " << s.fx << " " << s.n_text << " " << buf << "\n";
  for (int p = 0; p < s.length(); ++p)
    out << s.tokens[static_cast<std::size_t>(p)] << " "
        << (s.region[static_cast<std::size_t>(p)] == Region::bidirectional ? 'b' : 'u') << "\n";
}

inline void write_sequence(const TokenSequence& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_sequence: cannot open " + path.string());
  write_sequence(s, out);
}

inline TokenSequence read_sequence(std::istream& in) {
  TokenSequence s;
  if (!(in >> s.ts >> s.fx >> s.n_text >> s.rate_fps))
    throw std::runtime_error("read_sequence: bad header");
  s.fy = s.fx;
  const int L = s.n_text + 1 + s.ts * s.fx * s.fy;
  s.tokens.resize(static_cast<std::size_t>(L));
  s.region.resize(static_cast<std::size_t>(L));
  for (int p = 0; p < L; ++p) {
    int tok = 0;
    char flag = 0;
    if (!(in >> tok >> flag)) throw std::runtime_error("read_sequence: truncated body");
    if (flag != 'b' && flag != 'u') throw std::runtime_error("read_sequence: bad region flag");
    s.tokens[static_cast<std::size_t>(p)] = tok;
    s.region[static_cast<std::size_t>(p)] = flag == 'b' ? Region::bidirectional : Region::unidirectional;
  }
  for (int t = 0; t < s.ts; ++t)
    for (int x = 0; x < s.fx; ++x)
      for (int y = 0; y < s.fy; ++y) s.position_coords.push_back(Coord3{t, x, y});
  return s;
}

inline TokenSequence read_sequence(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_sequence: cannot open " + path.string());
  return read_sequence(in);
}

}  // namespace hiervid
