#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <iostream>
#include <memory>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "hiervid/model.hpp"

namespace hiervid {

// ---------------------------------------------------------------------------
// Multi-frame-rate training: clip sampling, rate selection, batch building,
// Adam with decoupled weight decay on the non-frozen parameters.
// ---------------------------------------------------------------------------

struct TrainConfig {
  int batch_size = 16;
  double max_lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double weight_decay = 1e-2;
  double adam_eps = 1e-8;
  int warmup_steps = 100;
  int total_steps = 500;
  int stage = 1;
  std::vector<double> stage2_rates{2.0, 4.0, 8.0};
  double min_rate = 1.0;  // stage-1 rates below this are not offered
  int threads = 1;
  std::uint64_t seed = 1;
};

struct DataConfig {
  int h = 32, w = 32;
  double native_fps = 16.0;
  double dur_min = 0.6, dur_max = 3.2;
  std::vector<int> speeds{1, 3, 5};
  int n_clips = 2000;
};

inline MotionSpec sample_motion(const DataConfig& dc, Rng& rng) {
  MotionSpec m;
  m.shape = static_cast<Shape>(rng.uniform_int(kNumShapes));
  m.direction = static_cast<Direction>(rng.uniform_int(kNumDirections));
  m.speed = dc.speeds[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(dc.speeds.size())))];
  return m;
}

inline std::vector<SyntheticClip> sample_clips(const DataConfig& dc, int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<SyntheticClip> clips;
  clips.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const MotionSpec m = sample_motion(dc, rng);
    const double dur = rng.uniform(dc.dur_min, dc.dur_max);
    clips.push_back(make_clip(m, dc.native_fps, dur, dc.h, dc.w, rng.next_u64()));
  }
  return clips;
}

// lr schedule: linear warmup to max_lr, then constant.
inline double lr_at(const TrainConfig& tc, long long step) {
  if (tc.warmup_steps <= 0) return tc.max_lr;
  if (step + 1 >= tc.warmup_steps) return tc.max_lr;
  return tc.max_lr * static_cast<double>(step + 1) / static_cast<double>(tc.warmup_steps);
}

// Weight decay never touches the mixture pre-activation or layer-norm
// parameters.
inline bool weight_decay_exempt(const std::string& name) {
  return name.find(".mix.a") != std::string::npos || name.find("_ln.") != std::string::npos;
}

struct AdamState {
  std::vector<Tensor> m, v;  // aligned with the model's trainable list
  long long step = 0;

  void init(const std::vector<Parameter*>& trainable) {
    m.clear();
    v.clear();
    for (const Parameter* p : trainable) {
      m.push_back(Tensor::zeros(p->value.shape));
      v.push_back(Tensor::zeros(p->value.shape));
    }
    step = 0;
  }
};

// Stage-1: lowest valid rate per clip, first ts frames at that rate.
// Stage-2: a uniformly chosen valid interpolation rate, odd slots known,
// even slots teacher-forced targets. Clips that fit no rate are skipped with
// a warning; an empty result is an error.
inline std::vector<TokenSequence> make_batch(const std::vector<const SyntheticClip*>& clips,
                                             int stage, const ModelConfig& mc,
                                             const TrainConfig& tc, Rng& rng,
                                             std::ostream* warn = &std::cerr) {
  const Vocab voc = mc.vocab();
  std::vector<TokenSequence> out;
  for (const SyntheticClip* clip : clips) {
    try {
      std::vector<int> text;
      for (int local : clip->caption_tokens) text.push_back(voc.text_id(local));
      if (stage == 1) {
        std::vector<double> offered;
        for (double r : mc.allowed_rates)
          if (r >= tc.min_rate) offered.push_back(r);
        const double r = select_frame_rate(clip->duration_s(), offered, mc.ts);
        auto frames = sample_frames_at_rate(*clip, r, mc.ts, 0.0, mc.f, mc.palette_bits);
        out.push_back(build_stage1_sequence(voc.rate_id(rate_index(mc.allowed_rates, r)), text,
                                            frames, mc.n_text, r, voc));
      } else {
        std::vector<double> valid;
        for (double r : tc.stage2_rates)
          if (static_cast<double>(mc.ts - 1) / r <= clip->duration_s()) valid.push_back(r);
        if (valid.empty()) throw std::runtime_error("no stage-2 rate fits the clip");
        const double r = valid[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(valid.size())))];
        const double slack = clip->duration_s() - static_cast<double>(mc.ts - 1) / r;
        const double start = slack > 0.0 ? rng.uniform(0.0, slack) : 0.0;
        auto frames = sample_frames_at_rate(*clip, r, mc.ts, start, mc.f, mc.palette_bits);
        std::vector<std::pair<int, TokenGrid>> known;
        for (int t = 0; t < mc.ts; t += 2) known.emplace_back(t + 1, frames[static_cast<std::size_t>(t)]);
        TokenSequence seq = build_stage2_sequence(voc.rate_id(rate_index(mc.allowed_rates, r)),
                                                  text, known, mc.ts, mc.n_text, r, voc);
        for (int t = 1; t < mc.ts; t += 2) seq.set_frame(t, frames[static_cast<std::size_t>(t)]);
        out.push_back(std::move(seq));
      }
    } catch (const std::exception& e) {
      if (warn) *warn << "make_batch: skipping clip: " << e.what() << "\n";
    }
  }
  if (out.empty()) throw std::runtime_error("make_batch: empty batch");
  return out;
}

struct StepStats {
  double loss = 0.0;
  double lr = 0.0;
  double grad_norm = 0.0;
};

// One AdamW move for a single parameter. The gradient is p.grad scaled by
// grad_scale; weight decay is decoupled and skipped for exempt names.
inline void adam_apply(Parameter& p, Tensor& m, Tensor& v, double grad_scale, double lr,
                       const TrainConfig& tc, long long step) {
  const double bc1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step + 1));
  const double bc2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step + 1));
  const bool decay = !weight_decay_exempt(p.name) && tc.weight_decay != 0.0;
  for (int i = 0; i < p.value.numel(); ++i) {
    const double g = p.grad.at(i) * grad_scale;
    m.at(i) = tc.beta1 * m.at(i) + (1.0 - tc.beta1) * g;
    v.at(i) = tc.beta2 * v.at(i) + (1.0 - tc.beta2) * g * g;
    const double mhat = m.at(i) / bc1;
    const double vhat = v.at(i) / bc2;
    double upd = mhat / (std::sqrt(vhat) + tc.adam_eps);
    if (decay) upd += tc.weight_decay * p.value.at(i);
    p.value.at(i) -= lr * upd;
  }
}

// One optimizer step: mean loss over the batch, reverse-mode gradients,
// AdamW update on non-frozen parameters. Per-item graphs may run on worker
// threads; gradients merge in item order, so results do not depend on the
// thread count.
inline StepStats train_step(Model& model, const std::vector<TokenSequence>& batch,
                            AdamState& opt, const TrainConfig& tc) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
  std::vector<Parameter*> trainable = model.trainable_params();
  if (opt.m.size() != trainable.size()) opt.init(trainable);
  for (Parameter* p : model.all_params()) p->zero_grad();

  const int B = static_cast<int>(batch.size());
  std::vector<double> losses(static_cast<std::size_t>(B), 0.0);
  std::vector<std::unique_ptr<Tape>> tapes(static_cast<std::size_t>(B));

  // masks are built lazily per layout; prebuild on the main thread
  for (const auto& seq : batch) model.masks_for(seq);

  auto run_item = [&](int i) {
    tapes[static_cast<std::size_t>(i)] = std::make_unique<Tape>(true);
    Tape& tp = *tapes[static_cast<std::size_t>(i)];
    Var loss = model.loss_on_tape(tp, batch[static_cast<std::size_t>(i)]);
    losses[static_cast<std::size_t>(i)] = tp.val(loss).at(0);
    tp.backward_no_fold(loss);
  };
  parallel_for_rows(B, tc.threads, run_item);
  for (auto& tape : tapes) tape->fold_param_grads();
  tapes.clear();

  double mean_loss = 0.0;
  for (double l : losses) mean_loss += l;
  mean_loss /= B;
  if (!std::isfinite(mean_loss))
    throw std::runtime_error("train_step: non-finite loss at optimizer step " +
                             std::to_string(opt.step) + " (loss=" + std::to_string(mean_loss) + ")");

  const double inv_b = 1.0 / static_cast<double>(B);
  double sq_norm = 0.0;
  for (Parameter* p : trainable)
    for (double g : p->grad.data) sq_norm += (g * inv_b) * (g * inv_b);

  const double lr = lr_at(tc, opt.step);
  for (std::size_t pi = 0; pi < trainable.size(); ++pi)
    adam_apply(*trainable[pi], opt.m[pi], opt.v[pi], inv_b, lr, tc, opt.step);
  opt.step += 1;

  StepStats st;
  st.loss = mean_loss;
  st.lr = lr;
  st.grad_norm = std::sqrt(sq_norm);
  return st;
}

// FNV-1a over the raw bytes of every frozen tensor, in registry order.
inline std::uint64_t frozen_hash(const Model& model) {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto& p : model.parameters()) {
    if (!p.frozen) continue;
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(p.value.data.data());
    for (std::size_t i = 0; i < p.value.data.size() * sizeof(double); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

struct TrainLogRow {
  long long step = 0;
  double loss = 0.0, lr = 0.0, grad_norm = 0.0, wall_ms = 0.0;
};

// Seeded training loop shared by the CLI and the test suites. Batches are
// drawn uniformly with replacement from `clips`.
inline std::vector<TrainLogRow> run_training(Model& model, const std::vector<SyntheticClip>& clips,
                                             const TrainConfig& tc, AdamState& opt,
                                             std::ostream* log_csv = nullptr,
                                             const std::function<void(const TrainLogRow&)>& cb = {}) {
  if (clips.empty()) throw std::invalid_argument("run_training: no clips");
  Rng rng(tc.seed);
  if (log_csv) *log_csv << "step,loss,lr,grad_norm,wall_ms\n";
  std::vector<TrainLogRow> rows;
  rows.reserve(static_cast<std::size_t>(tc.total_steps));
  for (int step = 0; step < tc.total_steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<const SyntheticClip*> chosen;
    chosen.reserve(static_cast<std::size_t>(tc.batch_size));
    for (int b = 0; b < tc.batch_size; ++b)
      chosen.push_back(&clips[static_cast<std::size_t>(rng.uniform_int(static_cast<int>(clips.size())))]);
    std::vector<TokenSequence> batch = make_batch(chosen, tc.stage, model.config(), tc, rng);
    const StepStats st = train_step(model, batch, opt, tc);
    const auto t1 = std::chrono::steady_clock::now();
    TrainLogRow row;
    row.step = step;
    row.loss = st.loss;
    row.lr = st.lr;
    row.grad_norm = st.grad_norm;
    row.wall_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (log_csv) {
      char buf[160];
      std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.3f\n", row.step, row.loss, row.lr,
                    row.grad_norm, row.wall_ms);
      *log_csv << buf;
    }
    if (cb) cb(row);
    rows.push_back(row);
  }
  return rows;
}

// Adam moments round-trip through checkpoints as extra named tensors.
inline std::vector<NamedTensor> adam_extras(const Model& model, const AdamState& opt) {
  std::vector<NamedTensor> out;
  const auto trainable = const_cast<Model&>(model).trainable_params();
  if (opt.m.size() != trainable.size()) return out;
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    out.push_back(NamedTensor{"opt.m." + trainable[i]->name, false, opt.m[i]});
    out.push_back(NamedTensor{"opt.v." + trainable[i]->name, false, opt.v[i]});
  }
  return out;
}

inline AdamState adam_from_checkpoint(Model& model, const CheckpointData& data) {
  AdamState opt;
  const auto trainable = model.trainable_params();
  opt.init(trainable);
  opt.step = static_cast<long long>(data.step);
  for (std::size_t i = 0; i < trainable.size(); ++i) {
    const NamedTensor* m = data.find("opt.m." + trainable[i]->name);
    const NamedTensor* v = data.find("opt.v." + trainable[i]->name);
    if (m && m->tensor.shape == trainable[i]->value.shape) opt.m[i] = m->tensor;
    if (v && v->tensor.shape == trainable[i]->value.shape) opt.v[i] = v->tensor;
  }
  return opt;
}

}  // namespace hiervid
