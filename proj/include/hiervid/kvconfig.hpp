#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiervid/model.hpp"
#include "hiervid/trainer.hpp"

namespace hiervid {

// ---------------------------------------------------------------------------
// Flat key=value configuration ('#' starts a comment). Unknown keys are
// rejected. Every run setting that is not a CLI flag lives here.
// ---------------------------------------------------------------------------

struct RunConfig {
  // model
  int d = 64, layers = 4, heads = 4, f = 4, ts = 5, n_text = 8, palette_bits = 4;
  std::vector<double> allowed_rates{1.0, 2.0, 4.0, 8.0, 16.0};
  std::string stage1_kind = "swin3d";
  std::string stage2_kind = "swin3d";
  int win_ax = 2, win_ay = 2;
  int ext_lt = 5, ext_lx = 4, ext_ly = 4;
  double init_std = 0.02;
  // training
  int batch_size = 16;
  double max_lr = 2e-4, beta1 = 0.9, beta2 = 0.95, weight_decay = 1e-2;
  int warmup_steps = 100, total_steps = 500;
  std::vector<double> stage2_rates{2.0, 4.0, 8.0};
  double min_rate = 1.0;
  // synthetic data
  int clip_h = 32, clip_w = 32;
  double native_fps = 16.0, dur_min = 0.6, dur_max = 3.2;
  std::vector<double> speeds{1, 3, 5};
  int n_clips = 2000;
  // sampling
  std::string sampler = "greedy";
  int top_k = 8;
  double temperature = 1.0;

  ChannelKind kind_for_stage(int stage) const {
    const std::string& k = stage == 1 ? stage1_kind : stage2_kind;
    if (k == "swin3d") return ChannelKind::swin3d;
    if (k == "local3d") return ChannelKind::local3d;
    throw std::invalid_argument("config: unknown channel kind '" + k + "'");
  }

  ModelConfig model_config(int stage, bool spatial_only = false) const {
    ModelConfig mc;
    mc.d = d;
    mc.layers = layers;
    mc.heads = heads;
    mc.f = f;
    mc.ts = spatial_only ? 1 : ts;
    mc.n_text = n_text;
    mc.palette_bits = palette_bits;
    mc.allowed_rates = allowed_rates;
    mc.stage = stage;
    mc.kind = kind_for_stage(stage);
    mc.win_ax = win_ax;
    mc.win_ay = win_ay;
    mc.ext_lt = ext_lt;
    mc.ext_lx = ext_lx;
    mc.ext_ly = ext_ly;
    mc.spatial_only = spatial_only;
    mc.init_std = init_std;
    return mc;
  }

  TrainConfig train_config(int stage, std::uint64_t seed, int threads) const {
    TrainConfig tc;
    tc.batch_size = batch_size;
    tc.max_lr = max_lr;
    tc.beta1 = beta1;
    tc.beta2 = beta2;
    tc.weight_decay = weight_decay;
    tc.warmup_steps = warmup_steps;
    tc.total_steps = total_steps;
    tc.stage = stage;
    tc.stage2_rates = stage2_rates;
    tc.min_rate = min_rate;
    tc.threads = threads;
    tc.seed = seed;
    return tc;
  }

  DataConfig data_config() const {
    DataConfig dc;
    dc.h = clip_h;
    dc.w = clip_w;
    dc.native_fps = native_fps;
    dc.dur_min = dur_min;
    dc.dur_max = dur_max;
    dc.speeds.clear();
    for (double s : speeds) dc.speeds.push_back(static_cast<int>(s));
    dc.n_clips = n_clips;
    return dc;
  }

  Sampler sampler_config(std::uint64_t seed) const {
    Sampler s;
    if (sampler == "greedy")
      s.kind = Sampler::Kind::greedy;
    else if (sampler == "topk")
      s.kind = Sampler::Kind::topk;
    else
      throw std::invalid_argument("config: unknown sampler '" + sampler + "'");
    s.top_k = top_k;
    s.temperature = temperature;
    s.seed = seed;
    return s;
  }
};

namespace detail {

struct KvEntry {
  std::string key;
  std::string comment;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<KvEntry> config_entries(RunConfig& c) {
  std::vector<KvEntry> e;
  auto add_int = [&e](const std::string& k, int& ref, const std::string& doc) {
    e.push_back({k, doc, [&ref] { return std::to_string(ref); },
                 [&ref](const std::string& v) { ref = std::stoi(v); }});
  };
  auto add_double = [&e](const std::string& k, double& ref, const std::string& doc) {
    e.push_back({k, doc, [&ref] { return fmt_double(ref); },
                 [&ref](const std::string& v) { ref = std::stod(v); }});
  };
  auto add_string = [&e](const std::string& k, std::string& ref, const std::string& doc) {
    e.push_back({k, doc, [&ref] { return ref; }, [&ref](const std::string& v) { ref = v; }});
  };
  auto add_dlist = [&e](const std::string& k, std::vector<double>& ref, const std::string& doc) {
    e.push_back({k, doc,
                 [&ref] {
                   std::string s;
                   for (std::size_t i = 0; i < ref.size(); ++i) {
                     if (i) s += ",";
                     s += fmt_double(ref[i]);
                   }
                   return s;
                 },
                 [&ref](const std::string& v) {
                   ref.clear();
                   std::stringstream ss(v);
                   std::string cell;
                   while (std::getline(ss, cell, ',')) ref.push_back(std::stod(cell));
                 }});
  };
  add_int("d", c.d, "hidden size");
  add_int("layers", c.layers, "transformer layers");
  add_int("heads", c.heads, "attention heads");
  add_int("f", c.f, "frame side in tokens");
  add_int("ts", c.ts, "frames per training sample");
  add_int("n_text", c.n_text, "text slots incl. the rate token");
  add_int("palette_bits", c.palette_bits, "image vocab = 2^palette_bits");
  add_dlist("allowed_rates", c.allowed_rates, "fps values with rate tokens, ascending");
  add_string("stage1_kind", c.stage1_kind, "stage-1 plus channel: swin3d|local3d");
  add_string("stage2_kind", c.stage2_kind, "stage-2 plus channel: swin3d|local3d");
  add_int("win_ax", c.win_ax, "swin window height");
  add_int("win_ay", c.win_ay, "swin window width");
  add_int("ext_lt", c.ext_lt, "local3d temporal extent");
  add_int("ext_lx", c.ext_lx, "local3d height extent");
  add_int("ext_ly", c.ext_ly, "local3d width extent");
  add_double("init_std", c.init_std, "init gaussian stddev");
  add_int("batch_size", c.batch_size, "sequences per optimizer step");
  add_double("max_lr", c.max_lr, "peak Adam learning rate");
  add_double("beta1", c.beta1, "Adam beta1");
  add_double("beta2", c.beta2, "Adam beta2");
  add_double("weight_decay", c.weight_decay, "decoupled weight decay");
  add_int("warmup_steps", c.warmup_steps, "linear warmup steps");
  add_int("total_steps", c.total_steps, "optimizer steps");
  add_dlist("stage2_rates", c.stage2_rates, "fps values used in stage-2 training");
  add_double("min_rate", c.min_rate, "lowest fps offered to stage-1 rate selection");
  add_int("clip_h", c.clip_h, "clip height px");
  add_int("clip_w", c.clip_w, "clip width px");
  add_double("native_fps", c.native_fps, "native clip fps");
  add_double("dur_min", c.dur_min, "min clip duration s");
  add_double("dur_max", c.dur_max, "max clip duration s");
  add_dlist("speeds", c.speeds, "shape speeds, px per native frame");
  add_int("n_clips", c.n_clips, "synthetic dataset size");
  add_string("sampler", c.sampler, "greedy|topk");
  add_int("top_k", c.top_k, "top-k cutoff");
  add_double("temperature", c.temperature, "sampling temperature");
  return e;
}

}  // namespace detail

inline void parse_config_text(RunConfig& cfg, std::istream& in, const std::string& origin) {
  auto entries = detail::config_entries(cfg);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    // trim
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto eend = line.find_last_not_of(" \t\r");
    line = line.substr(b, eend - b + 1);
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(0, eq);
    std::string val = line.substr(eq + 1);
    auto strip = [](std::string& s) {
      const auto x = s.find_first_not_of(" \t");
      const auto y = s.find_last_not_of(" \t");
      s = x == std::string::npos ? "" : s.substr(x, y - x + 1);
    };
    strip(key);
    strip(val);
    bool found = false;
    for (auto& entry : entries) {
      if (entry.key == key) {
        try {
          entry.set(val);
        } catch (const std::exception&) {
          throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": bad value for " + key);
        }
        found = true;
        break;
      }
    }
    if (!found)
      throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path.string());
  RunConfig cfg;
  parse_config_text(cfg, in, path.string());
  return cfg;
}

inline std::string dump_config(const RunConfig& cfg) {
  auto entries = detail::config_entries(const_cast<RunConfig&>(cfg));
  std::string out;
  for (const auto& entry : entries)
    out += entry.key + "=" + entry.get() + "  # " + entry.comment + "\n";
  return out;
}

inline std::uint64_t config_hash(const RunConfig& cfg) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : dump_config(cfg)) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace hiervid
