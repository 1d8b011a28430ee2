#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiervid/rng.hpp"

namespace hiervid {

// ---------------------------------------------------------------------------
// Synthetic clips: bright geometric shapes translating on a toroidal canvas,
// plus the toy palette quantizer that turns frames into token grids.
// ---------------------------------------------------------------------------

enum class Shape : int { square = 0, disc = 1, cross = 2 };
enum class Direction : int { right = 0, left = 1, up = 2, down = 3 };

constexpr int kNumShapes = 3;
constexpr int kNumDirections = 4;
constexpr int kMaxSpeed = 8;  // px per native frame, speeds 0..8 are encodable

struct MotionSpec {
  Shape shape = Shape::square;
  Direction direction = Direction::right;
  int speed = 1;  // pixels per native frame

  bool operator==(const MotionSpec& o) const {
    return shape == o.shape && direction == o.direction && speed == o.speed;
  }
};

struct Image {
  int h = 0, w = 0;
  std::vector<double> pix;  // row-major, values in [0,1]

  Image() = default;
  Image(int hh, int ww) : h(hh), w(ww), pix(static_cast<std::size_t>(hh) * ww, 0.0) {}
  double& at(int r, int c) { return pix[static_cast<std::size_t>(r) * w + c]; }
  double at(int r, int c) const { return pix[static_cast<std::size_t>(r) * w + c]; }
};

struct SyntheticClip {
  std::vector<Image> frames;
  double native_fps = 0.0;
  std::vector<int> caption_tokens;  // text-local ids, see encode_caption
  MotionSpec motion;

  double duration_s() const {
    return frames.empty() ? 0.0 : static_cast<double>(frames.size() - 1) / native_fps;
  }
};

struct TokenGrid {
  int grid_side = 0;
  std::vector<int> tokens;  // grid_side^2 ids in [0, 2^palette_bits)

  TokenGrid() = default;
  explicit TokenGrid(int f) : grid_side(f), tokens(static_cast<std::size_t>(f) * f, 0) {}
  int& at(int r, int c) { return tokens[static_cast<std::size_t>(r) * grid_side + c]; }
  int at(int r, int c) const { return tokens[static_cast<std::size_t>(r) * grid_side + c]; }
  bool operator==(const TokenGrid& o) const {
    return grid_side == o.grid_side && tokens == o.tokens;
  }
};

// --- caption vocabulary (text-local ids) -----------------------------------
//
// id 0          : padding
// 1 .. 3        : shape
// 4 .. 7        : direction
// 8 .. 16       : speed 0..8
// The (shape, direction, speed) <-> caption mapping is a bijection over the
// closed motion-spec space.
constexpr int kTextPad = 0;
constexpr int kTextVocab = 1 + kNumShapes + kNumDirections + (kMaxSpeed + 1);

inline int shape_token(Shape s) { return 1 + static_cast<int>(s); }
inline int direction_token(Direction d) { return 1 + kNumShapes + static_cast<int>(d); }
inline int speed_token(int speed) {
  if (speed < 0 || speed > kMaxSpeed) throw std::invalid_argument("speed out of caption range");
  return 1 + kNumShapes + kNumDirections + speed;
}

inline std::vector<int> encode_caption(const MotionSpec& m) {
  return {shape_token(m.shape), direction_token(m.direction), speed_token(m.speed)};
}

inline MotionSpec decode_caption(const std::vector<int>& caption) {
  if (caption.size() != 3) throw std::invalid_argument("caption must have 3 tokens");
  MotionSpec m;
  int s = caption[0] - 1;
  int d = caption[1] - 1 - kNumShapes;
  int v = caption[2] - 1 - kNumShapes - kNumDirections;
  if (s < 0 || s >= kNumShapes || d < 0 || d >= kNumDirections || v < 0 || v > kMaxSpeed)
    throw std::invalid_argument("caption tokens out of range");
  m.shape = static_cast<Shape>(s);
  m.direction = static_cast<Direction>(d);
  m.speed = v;
  return m;
}

inline const char* shape_name(Shape s) {
  switch (s) {
    case Shape::square: return "square";
    case Shape::disc: return "disc";
    case Shape::cross: return "cross";
  }
  return "?";
}

inline const char* direction_name(Direction d) {
  switch (d) {
    case Direction::right: return "right";
    case Direction::left: return "left";
    case Direction::up: return "up";
    case Direction::down: return "down";
  }
  return "?";
}

inline Shape shape_from_name(const std::string& s) {
  if (s == "square") return Shape::square;
  if (s == "disc") return Shape::disc;
  if (s == "cross") return Shape::cross;
  throw std::invalid_argument("unknown shape: " + s);
}

inline Direction direction_from_name(const std::string& s) {
  if (s == "right") return Direction::right;
  if (s == "left") return Direction::left;
  if (s == "up") return Direction::up;
  if (s == "down") return Direction::down;
  throw std::invalid_argument("unknown direction: " + s);
}

// --- clip synthesis ---------------------------------------------------------

namespace detail {

// signed toroidal offset in (-size/2, size/2]
inline double torus_delta(double a, double b, int size) {
  double d = std::fmod(a - b, static_cast<double>(size));
  if (d < -size / 2.0) d += size;
  if (d > size / 2.0) d -= size;
  return d;
}

inline void rasterize(Image& img, const MotionSpec& m, double cx, double cy) {
  const double half = 6.0;   // shape half-extent in px
  const double thick = 1.5;  // cross arm half-thickness
  for (int r = 0; r < img.h; ++r) {
    for (int c = 0; c < img.w; ++c) {
      const double dy = torus_delta(r + 0.5, cy, img.h);
      const double dx = torus_delta(c + 0.5, cx, img.w);
      bool on = false;
      switch (m.shape) {
        case Shape::square:
          on = std::abs(dx) <= half && std::abs(dy) <= half;
          break;
        case Shape::disc:
          on = dx * dx + dy * dy <= half * half;
          break;
        case Shape::cross:
          on = (std::abs(dx) <= thick || std::abs(dy) <= thick) &&
               std::abs(dx) <= half && std::abs(dy) <= half;
          break;
      }
      if (on) img.at(r, c) = 1.0;
    }
  }
}

}  // namespace detail

// Deterministic moving-pattern clip: a bright shape translating with toroidal
// wrap, so every frame stays information-complete. The caption encodes
// shape+direction+speed.
inline SyntheticClip make_clip(const MotionSpec& motion, double native_fps, double duration_s,
                               int h, int w, std::uint64_t seed) {
  if (h <= 0 || w <= 0) throw std::invalid_argument("make_clip: non-positive frame dimensions");
  if (native_fps <= 0.0) throw std::invalid_argument("make_clip: non-positive fps");
  if (duration_s * native_fps < 1.0)
    throw std::invalid_argument("make_clip: clip shorter than one frame interval");
  if (motion.speed < 0 || motion.speed > kMaxSpeed)
    throw std::invalid_argument("make_clip: speed outside [0, 8]");

  Rng rng(seed);
  const int start_x = rng.uniform_int(w);
  const int start_y = rng.uniform_int(h);

  int dx = 0, dy = 0;
  switch (motion.direction) {
    case Direction::right: dx = 1; break;
    case Direction::left: dx = -1; break;
    case Direction::up: dy = -1; break;
    case Direction::down: dy = 1; break;
  }

  const int n_frames = static_cast<int>(std::floor(duration_s * native_fps)) + 1;
  SyntheticClip clip;
  clip.native_fps = native_fps;
  clip.motion = motion;
  clip.caption_tokens = encode_caption(motion);
  clip.frames.reserve(static_cast<std::size_t>(n_frames));
  for (int t = 0; t < n_frames; ++t) {
    Image img(h, w);
    const double cx = start_x + 0.5 + static_cast<double>(t) * motion.speed * dx;
    const double cy = start_y + 0.5 + static_cast<double>(t) * motion.speed * dy;
    detail::rasterize(img, motion, cx, cy);
    clip.frames.push_back(std::move(img));
  }
  return clip;
}

// --- quantizer --------------------------------------------------------------

// Token = uniform quantization of the patch mean to 2^palette_bits levels.
inline TokenGrid quantize_frame(const Image& image, int grid_side, int palette_bits) {
  if (grid_side <= 0 || palette_bits <= 0 || palette_bits > 16)
    throw std::invalid_argument("quantize_frame: bad grid/palette parameters");
  if (image.h % grid_side != 0 || image.w % grid_side != 0)
    throw std::invalid_argument("quantize_frame: frame dimensions not divisible by grid side");
  const int ph = image.h / grid_side, pw = image.w / grid_side;
  const int levels = 1 << palette_bits;
  TokenGrid grid(grid_side);
  for (int gr = 0; gr < grid_side; ++gr) {
    for (int gc = 0; gc < grid_side; ++gc) {
      double sum = 0.0;
      for (int r = 0; r < ph; ++r)
        for (int c = 0; c < pw; ++c) sum += image.at(gr * ph + r, gc * pw + c);
      const double mean = sum / (ph * pw);
      int tok = static_cast<int>(std::floor(mean * levels));
      if (tok >= levels) tok = levels - 1;
      if (tok < 0) tok = 0;
      grid.at(gr, gc) = tok;
    }
  }
  return grid;
}

// Each patch filled with its palette level midpoint, so quantize(reconstruct)
// is the identity on token space.
inline Image reconstruct_frame(const TokenGrid& grid, int h, int w, int palette_bits) {
  if (h % grid.grid_side != 0 || w % grid.grid_side != 0)
    throw std::invalid_argument("reconstruct_frame: dimensions not divisible by grid side");
  const int ph = h / grid.grid_side, pw = w / grid.grid_side;
  const int levels = 1 << palette_bits;
  Image img(h, w);
  for (int gr = 0; gr < grid.grid_side; ++gr) {
    for (int gc = 0; gc < grid.grid_side; ++gc) {
      const double v = (grid.at(gr, gc) + 0.5) / levels;
      for (int r = 0; r < ph; ++r)
        for (int c = 0; c < pw; ++c) img.at(gr * ph + r, gc * pw + c) = v;
    }
  }
  return img;
}

// --- file formats -----------------------------------------------------------

inline void write_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_pgm: cannot open " + path.string());
  out << "P5\n" << img.w << " " << img.h << "\n255\n";
  for (double v : img.pix) {
    double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(clamped * 255.0))));
  }
  if (!out) throw std::runtime_error("write_pgm: write failed for " + path.string());
}

inline Image read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_pgm: cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw std::runtime_error("read_pgm: not a binary PGM: " + path.string());
  int w = 0, h = 0, maxval = 0;
  in >> w >> h >> maxval;
  in.get();  // single whitespace after header
  if (w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("read_pgm: unsupported header in " + path.string());
  Image img(h, w);
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!in) throw std::runtime_error("read_pgm: truncated data in " + path.string());
  for (std::size_t i = 0; i < raw.size(); ++i) img.pix[i] = raw[i] / 255.0;
  return img;
}

inline void write_token_csv(const TokenGrid& grid, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_token_csv: cannot open " + path.string());
  for (int r = 0; r < grid.grid_side; ++r) {
    for (int c = 0; c < grid.grid_side; ++c) {
      if (c) out << ",";
      out << grid.at(r, c);
    }
    out << "\n";
  }
}

inline TokenGrid read_token_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_token_csv: cannot open " + path.string());
  std::vector<std::vector<int>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<int> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stoi(cell));
    rows.push_back(std::move(row));
  }
  const int f = static_cast<int>(rows.size());
  TokenGrid grid(f);
  for (int r = 0; r < f; ++r) {
    if (static_cast<int>(rows[r].size()) != f)
      throw std::runtime_error("read_token_csv: grid is not square in " + path.string());
    for (int c = 0; c < f; ++c) grid.at(r, c) = rows[r][c];
  }
  return grid;
}

}  // namespace hiervid
