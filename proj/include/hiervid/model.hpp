#pragma once

#include <bit>
#include <cstring>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiervid/attention.hpp"

namespace hiervid {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

// ---------------------------------------------------------------------------
// Full transformer: embeddings, N dual-channel layers, tied image-vocabulary
// head, loss over unidirectional targets, and the binary checkpoint format.
// ---------------------------------------------------------------------------

struct ModelConfig {
  int d = 64;
  int layers = 4;
  int heads = 4;
  int f = 4;        // frame side in tokens
  int ts = 5;       // frames per sample
  int n_text = 8;   // text slots including the rate token
  int palette_bits = 4;
  std::vector<double> allowed_rates{1.0, 2.0, 4.0, 8.0, 16.0};
  int stage = 1;
  ChannelKind kind = ChannelKind::swin3d;
  int win_ax = 2, win_ay = 2;
  int ext_lt = 5, ext_lx = 4, ext_ly = 4;
  bool spatial_only = false;  // base-channel-only pretraining mode
  double init_std = 0.02;

  int v_img() const { return 1 << palette_bits; }
  Vocab vocab() const {
    return Vocab{v_img(), kTextVocab, static_cast<int>(allowed_rates.size())};
  }
  ChannelConfig channel_config() const {
    ChannelConfig cc;
    cc.kind = kind;
    cc.extent = LocalExtent{ext_lt, ext_lx, ext_ly};
    cc.window = WindowConfig{win_ax, win_ay, f, f};
    return cc;
  }

  bool operator==(const ModelConfig& o) const {
    return d == o.d && layers == o.layers && heads == o.heads && f == o.f && ts == o.ts &&
           n_text == o.n_text && palette_bits == o.palette_bits &&
           allowed_rates == o.allowed_rates && stage == o.stage && kind == o.kind &&
           win_ax == o.win_ax && win_ay == o.win_ay && ext_lt == o.ext_lt && ext_lx == o.ext_lx &&
           ext_ly == o.ext_ly && spatial_only == o.spatial_only && init_std == o.init_std;
  }
};

struct ParamCounts {
  long long trainable = 0;
  long long total = 0;
};

inline ParamCounts analytic_param_counts(const ModelConfig& c) {
  const long long d = c.d;
  const long long per_layer_base = 4 * d * d + 8 * d;            // attention + 4 LN pairs
  const long long per_layer_ffn = d * 4 * d + 4 * d + 4 * d * d + d;
  const long long per_layer_plus = c.spatial_only ? 0 : 4 * d * d + d;
  const long long emb = static_cast<long long>(c.vocab().total()) * d +
                        static_cast<long long>(c.f) * c.f * d +
                        static_cast<long long>(c.n_text + 1) * d +
                        static_cast<long long>(c.ts) * d;
  ParamCounts pc;
  pc.total = c.layers * (per_layer_base + per_layer_ffn + per_layer_plus) + emb;
  if (c.spatial_only)
    pc.trainable = pc.total;
  else
    pc.trainable = c.layers * per_layer_plus + static_cast<long long>(c.ts) * d;
  return pc;
}

class Model {
 public:
  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    if (cfg_.d % cfg_.heads != 0)
      throw std::invalid_argument("model: hidden size must be divisible by heads");
    Rng rng(seed);
    const Vocab voc = cfg_.vocab();
    const bool freeze = !cfg_.spatial_only;
    tok_emb_ = add("embed.token", Tensor::randn({voc.total(), cfg_.d}, rng, cfg_.init_std), freeze);
    spatial_pos_ =
        add("embed.spatial", Tensor::randn({cfg_.f * cfg_.f, cfg_.d}, rng, cfg_.init_std), freeze);
    text_pos_ =
        add("embed.textpos", Tensor::randn({cfg_.n_text + 1, cfg_.d}, rng, cfg_.init_std), freeze);
    frame_emb_ = add("embed.frame", Tensor::randn({cfg_.ts, cfg_.d}, rng, cfg_.init_std), false);
    layers_.reserve(static_cast<std::size_t>(cfg_.layers));
    for (int l = 0; l < cfg_.layers; ++l)
      layers_.push_back(alloc_layer_params(store_, "layer" + std::to_string(l), cfg_.d, rng,
                                           cfg_.init_std, freeze, !cfg_.spatial_only));
  }

  const ModelConfig& config() const { return cfg_; }
  std::deque<Parameter>& parameters() { return store_; }
  const std::deque<Parameter>& parameters() const { return store_; }
  const std::vector<LayerParams>& layers() const { return layers_; }

  Parameter* find(const std::string& name) {
    for (auto& p : store_)
      if (p.name == name) return &p;
    return nullptr;
  }

  std::vector<Parameter*> trainable_params() {
    std::vector<Parameter*> out;
    for (auto& p : store_)
      if (!p.frozen) out.push_back(&p);
    return out;
  }

  std::vector<Parameter*> all_params() {
    std::vector<Parameter*> out;
    for (auto& p : store_) out.push_back(&p);
    return out;
  }

  ParamCounts param_counts() const {
    ParamCounts pc;
    for (const auto& p : store_) {
      pc.total += p.value.numel();
      if (!p.frozen) pc.trainable += p.value.numel();
    }
    return pc;
  }

  // --- forward ---------------------------------------------------------------

  // token + spatial position (shared across frames) + frame index embeddings;
  // text positions use the text positional table.
  Var embed_on_tape(Tape& tp, const TokenSequence& seq, Var tok_table) const {
    const Vocab voc = cfg_.vocab();
    for (int tok : seq.tokens)
      if (tok < 0 || tok >= voc.total())
        throw std::out_of_range("embed: token id " + std::to_string(tok) + " outside vocabulary");
    Var x = tp.gather_rows(tok_table, seq.tokens);
    std::vector<int> trows, tids;
    for (int p = 0; p <= seq.n_text; ++p) {
      trows.push_back(p);
      tids.push_back(p);
    }
    x = tp.add_gathered(x, tp.param(*text_pos_), trows, tids);
    std::vector<int> frows, sids, fids;
    for (int p = seq.frame_begin(); p < seq.length(); ++p) {
      const Coord3 c = seq.coord(p);
      frows.push_back(p);
      sids.push_back(c.x * seq.fy + c.y);
      fids.push_back(c.t);
    }
    if (!frows.empty()) {
      x = tp.add_gathered(x, tp.param(*spatial_pos_), frows, sids);
      x = tp.add_gathered(x, tp.param(*frame_emb_), frows, fids);
    }
    return x;
  }

  Tensor embed(const TokenSequence& seq) const {
    Tape tp(false);
    return tp.val(embed_on_tape(tp, seq, tp.param(*tok_emb_)));
  }

  Var logits_on_tape(Tape& tp, const TokenSequence& seq, AttnCapture* cap = nullptr) const {
    if (seq.fx != cfg_.f || seq.fy != cfg_.f)
      throw std::invalid_argument("model: sequence frame side differs from config");
    if (seq.ts > cfg_.ts)
      throw std::invalid_argument("model: sequence has more frames than the model supports");
    if (seq.n_text != cfg_.n_text)
      throw std::invalid_argument("model: sequence text budget differs from config");
    const MaskSet& ms = masks_for(seq);
    Var tok = tp.param(*tok_emb_);
    Var x = embed_on_tape(tp, seq, tok);
    for (int l = 0; l < cfg_.layers; ++l) {
      const AttentionMask* pm = cfg_.spatial_only
                                    ? nullptr
                                    : &ms.plus[static_cast<std::size_t>(l % 2)];
      x = dual_channel_block(tp, x, layers_[static_cast<std::size_t>(l)], cfg_.heads, &ms.base, pm,
                             cap, l);
      x = shared_ffn_block(tp, x, layers_[static_cast<std::size_t>(l)]);
    }
    Var img_rows = tp.slice_rows(tok, 0, cfg_.v_img());
    return tp.matmul_nt(x, img_rows);
  }

  // logits over the image vocabulary at every position (prediction sites read
  // row q-1 for target position q)
  Tensor forward_logits(const TokenSequence& seq, AttnCapture* cap = nullptr,
                        int threads = 1) const {
    Tape tp(false, threads);
    return tp.val(logits_on_tape(tp, seq, cap));
  }

  // Logits row that predicts the token at target position q. The default is
  // the shifted-input convention (row q-1). For a stage-1 swin model the
  // first token of frame t>0 instead reads the newest frame-(t-1) position
  // whose wavefront step strictly precedes every frame-t step: flat index
  // min(A_x*Y + A_y, X*Y) - 1. With a window at least frame-sized this is
  // exactly q-1 again; with smaller windows it is what makes wavefront and
  // sequential decoding bit-identical across frame boundaries.
  int prediction_site(const TokenSequence& seq, int q) const {
    const Coord3 c = seq.coord(q);
    if (cfg_.stage == 1 && cfg_.kind == ChannelKind::swin3d && c.t > 0 && c.x == 0 && c.y == 0) {
      const int xy = seq.fx * seq.fy;
      const int delta = std::min(cfg_.win_ax * seq.fy + cfg_.win_ay, xy);
      return seq.pos_of(c.t - 1, (delta - 1) / seq.fy, (delta - 1) % seq.fy);
    }
    return q - 1;
  }

  Var loss_on_tape(Tape& tp, const TokenSequence& seq) const {
    std::vector<int> targets_pos = seq.target_positions();
    if (targets_pos.empty()) throw std::invalid_argument("loss: sequence has no prediction targets");
    Var logits = logits_on_tape(tp, seq);
    std::vector<int> sites, classes;
    sites.reserve(targets_pos.size());
    classes.reserve(targets_pos.size());
    for (int q : targets_pos) {
      const int tok = seq.tokens[static_cast<std::size_t>(q)];
      if (tok >= cfg_.v_img())
        throw std::invalid_argument("loss: target token outside image vocabulary");
      sites.push_back(prediction_site(seq, q));
      classes.push_back(tok);
    }
    return tp.cross_entropy(logits, std::move(sites), std::move(classes));
  }

  double loss_value(const TokenSequence& seq, int threads = 1) const {
    Tape tp(false, threads);
    return tp.val(loss_on_tape(tp, seq)).at(0);
  }

  // --- masks -------------------------------------------------------------------

  struct MaskSet {
    AttentionMask region;           // CogLM regions
    AttentionMask base;             // spatial channel
    std::vector<AttentionMask> plus;  // per layer parity (aligned, shifted)
  };

  const MaskSet& masks_for(const TokenSequence& seq) const {
    std::uint64_t h = 1469598103934665603ULL;
    auto mixb = [&h](std::uint64_t v) {
      h ^= v;
      h *= 1099511628211ULL;
    };
    mixb(static_cast<std::uint64_t>(seq.ts));
    mixb(static_cast<std::uint64_t>(seq.fx));
    mixb(static_cast<std::uint64_t>(seq.fy));
    mixb(static_cast<std::uint64_t>(seq.n_text));
    for (Region r : seq.region) mixb(static_cast<std::uint64_t>(r) + 17);
    auto it = mask_cache_.find(h);
    if (it != mask_cache_.end()) return it->second;
    MaskSet ms;
    ms.region = coglm_mask(seq);
    ms.base = base_channel_mask(seq, ms.region);
    if (!cfg_.spatial_only) {
      const ChannelConfig cc = cfg_.channel_config();
      ms.plus.push_back(plus_channel_mask(seq, cc, false, ms.region));
      ms.plus.push_back(plus_channel_mask(seq, cc, true, ms.region));
    }
    return mask_cache_.emplace(h, std::move(ms)).first->second;
  }

 private:
  Parameter* add(const std::string& name, Tensor t, bool frozen) {
    store_.emplace_back(name, std::move(t), frozen);
    return &store_.back();
  }

  ModelConfig cfg_;
  std::deque<Parameter> store_;
  Parameter* tok_emb_ = nullptr;
  Parameter* spatial_pos_ = nullptr;
  Parameter* text_pos_ = nullptr;
  Parameter* frame_emb_ = nullptr;
  std::vector<LayerParams> layers_;
  mutable std::map<std::uint64_t, MaskSet> mask_cache_;
};

// ---------------------------------------------------------------------------
// Checkpoint format (little endian):
//   magic "HVIDCKPT" | u32 version | config block | u64 step |
//   u32 n_tensors | { u32 name_len | name | u8 dtype 'd' | u8 frozen |
//                     u32 rank | u32 dims[rank] | f64 data[] } ...
// ---------------------------------------------------------------------------

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr char kCheckpointMagic[9] = "HVIDCKPT";

namespace detail {

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw std::runtime_error("checkpoint: truncated or corrupt file");
  return v;
}

inline void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  if (n > (1u << 20)) throw std::runtime_error("checkpoint: implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw std::runtime_error("checkpoint: truncated or corrupt file");
  return s;
}

inline void put_config(std::ostream& out, const ModelConfig& c) {
  put<std::int32_t>(out, c.d);
  put<std::int32_t>(out, c.layers);
  put<std::int32_t>(out, c.heads);
  put<std::int32_t>(out, c.f);
  put<std::int32_t>(out, c.ts);
  put<std::int32_t>(out, c.n_text);
  put<std::int32_t>(out, c.palette_bits);
  put<std::int32_t>(out, c.stage);
  put<std::uint8_t>(out, static_cast<std::uint8_t>(c.kind));
  put<std::int32_t>(out, c.win_ax);
  put<std::int32_t>(out, c.win_ay);
  put<std::int32_t>(out, c.ext_lt);
  put<std::int32_t>(out, c.ext_lx);
  put<std::int32_t>(out, c.ext_ly);
  put<std::uint8_t>(out, c.spatial_only ? 1 : 0);
  put<double>(out, c.init_std);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(c.allowed_rates.size()));
  for (double r : c.allowed_rates) put<double>(out, r);
}

inline ModelConfig get_config(std::istream& in) {
  ModelConfig c;
  c.d = get<std::int32_t>(in);
  c.layers = get<std::int32_t>(in);
  c.heads = get<std::int32_t>(in);
  c.f = get<std::int32_t>(in);
  c.ts = get<std::int32_t>(in);
  c.n_text = get<std::int32_t>(in);
  c.palette_bits = get<std::int32_t>(in);
  c.stage = get<std::int32_t>(in);
  c.kind = static_cast<ChannelKind>(get<std::uint8_t>(in));
  c.win_ax = get<std::int32_t>(in);
  c.win_ay = get<std::int32_t>(in);
  c.ext_lt = get<std::int32_t>(in);
  c.ext_lx = get<std::int32_t>(in);
  c.ext_ly = get<std::int32_t>(in);
  c.spatial_only = get<std::uint8_t>(in) != 0;
  c.init_std = get<double>(in);
  const auto n = get<std::uint32_t>(in);
  if (n > 1024) throw std::runtime_error("checkpoint: implausible rate count");
  c.allowed_rates.assign(n, 0.0);
  for (auto& r : c.allowed_rates) r = get<double>(in);
  return c;
}

}  // namespace detail

struct NamedTensor {
  std::string name;
  bool frozen = false;
  Tensor tensor;
};

struct CheckpointData {
  ModelConfig config;
  std::uint64_t step = 0;
  std::vector<NamedTensor> tensors;

  const NamedTensor* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

inline void save_checkpoint(const Model& model, const std::filesystem::path& path,
                            std::uint64_t step = 0,
                            const std::vector<NamedTensor>& extras = {}) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path.string());
  out.write(kCheckpointMagic, 8);
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put_config(out, model.config());
  detail::put<std::uint64_t>(out, step);
  detail::put<std::uint32_t>(out,
                             static_cast<std::uint32_t>(model.parameters().size() + extras.size()));
  auto put_tensor = [&out](const std::string& name, bool frozen, const Tensor& t) {
    detail::put_string(out, name);
    detail::put<std::uint8_t>(out, 'd');
    detail::put<std::uint8_t>(out, frozen ? 1 : 0);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.shape.size()));
    for (int dim : t.shape) detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(dim));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  };
  for (const auto& p : model.parameters()) put_tensor(p.name, p.frozen, p.value);
  for (const auto& e : extras) put_tensor(e.name, e.frozen, e.tensor);
  if (!out) throw std::runtime_error("save_checkpoint: write failed for " + path.string());
}

inline CheckpointData load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path.string());
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw std::runtime_error("load_checkpoint: bad magic, not a checkpoint: " + path.string());
  const auto version = detail::get<std::uint32_t>(in);
  if (version != kCheckpointVersion)
    throw std::runtime_error("load_checkpoint: unsupported version " + std::to_string(version));
  CheckpointData data;
  data.config = detail::get_config(in);
  data.step = detail::get<std::uint64_t>(in);
  const auto n = detail::get<std::uint32_t>(in);
  data.tensors.reserve(n);
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor nt;
    nt.name = detail::get_string(in);
    const auto dtype = detail::get<std::uint8_t>(in);
    if (dtype != 'd') throw std::runtime_error("load_checkpoint: unknown dtype tag");
    nt.frozen = detail::get<std::uint8_t>(in) != 0;
    const auto rank = detail::get<std::uint32_t>(in);
    if (rank > 8) throw std::runtime_error("load_checkpoint: implausible tensor rank");
    std::vector<int> shape(rank);
    for (auto& dim : shape) dim = static_cast<int>(detail::get<std::uint32_t>(in));
    nt.tensor = Tensor(shape);
    in.read(reinterpret_cast<char*>(nt.tensor.data.data()),
            static_cast<std::streamsize>(nt.tensor.data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("load_checkpoint: truncated tensor data");
    data.tensors.push_back(std::move(nt));
  }
  return data;
}

// Rebuilds a model from a checkpoint. When expected config is given, any
// difference is a config-mismatch error.
inline Model model_from_checkpoint(const CheckpointData& data,
                                   const std::optional<ModelConfig>& expected = std::nullopt) {
  if (expected && !(*expected == data.config))
    throw std::runtime_error("load_checkpoint: config mismatch with the requested model");
  Model m(data.config, 0);
  for (auto& p : m.parameters()) {
    const NamedTensor* nt = data.find(p.name);
    if (!nt) throw std::runtime_error("load_checkpoint: missing tensor " + p.name);
    if (nt->tensor.shape != p.value.shape)
      throw std::runtime_error("load_checkpoint: shape mismatch for " + p.name);
    p.value = nt->tensor;
    p.frozen = nt->frozen;
    p.grad = Tensor::zeros(p.value.shape);
  }
  return m;
}

// Copies the spatial (base) side out of a pretrained single-frame checkpoint,
// freezes it, and re-initializes the plus channel as a copy of the base.
inline void init_base_from_spatial(Model& model, const CheckpointData& spatial) {
  const ModelConfig& mc = model.config();
  const ModelConfig& sc = spatial.config;
  if (!sc.spatial_only)
    throw std::runtime_error("init_base_from_spatial: checkpoint is not a spatial pretrain");
  if (sc.d != mc.d || sc.layers != mc.layers || sc.heads != mc.heads || sc.f != mc.f ||
      sc.n_text != mc.n_text || sc.palette_bits != mc.palette_bits)
    throw std::runtime_error("init_base_from_spatial: config mismatch with spatial checkpoint");
  for (auto& p : model.parameters()) {
    if (p.name == "embed.frame" || p.name.find(".plus.") != std::string::npos ||
        p.name.find(".mix.") != std::string::npos)
      continue;
    const NamedTensor* nt = spatial.find(p.name);
    if (!nt) throw std::runtime_error("init_base_from_spatial: missing tensor " + p.name);
    if (nt->tensor.shape != p.value.shape)
      throw std::runtime_error("init_base_from_spatial: shape mismatch for " + p.name);
    p.value = nt->tensor;
    p.frozen = true;
  }
  for (int l = 0; l < mc.layers; ++l) {
    const std::string prefix = "layer" + std::to_string(l);
    for (const char* w : {".wq", ".wk", ".wv", ".wo"}) {
      Parameter* dst = model.find(prefix + ".plus" + w);
      Parameter* src = model.find(prefix + ".base" + w);
      dst->value = src->value;
    }
    Parameter* a = model.find(prefix + ".mix.a");
    a->value = Tensor::zeros({mc.d});
  }
}

}  // namespace hiervid
