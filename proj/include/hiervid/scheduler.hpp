#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "hiervid/generate.hpp"
#include "hiervid/masks.hpp"

namespace hiervid {

// ---------------------------------------------------------------------------
// Wavefront scheduling for parallel autoregressive decoding under the swin
// mask: consecutive frames decode offset by A_x*Y + A_y flat positions.
// ---------------------------------------------------------------------------

// The independence test: with t1 < t2, the later token provably cannot attend
// the earlier one (directly or transitively) when
// (x1-x2)*Y + (y1-y2) >= (t2-t1+1)*(A_x*Y + A_y). Returns whether dependence
// is still possible. Same-frame pairs follow raster order. The bound is
// conservative: it never misses a real dependence, but it does call some
// provably independent pairs dependent (see verify_schedule / the oracle).
inline bool may_depend(const Coord3& p1, const Coord3& p2, const WindowConfig& w) {
  if (p1.t == p2.t) return p1.x * w.y + p1.y <= p2.x * w.y + p2.y;
  if (p1.t > p2.t) return false;  // later frames are never visible
  const long long lhs = static_cast<long long>(p1.x - p2.x) * w.y + (p1.y - p2.y);
  const long long rhs = static_cast<long long>(p2.t - p1.t + 1) *
                        (static_cast<long long>(w.a_x) * w.y + w.a_y);
  return lhs < rhs;
}

struct WavefrontSchedule {
  WindowConfig w;
  int ts = 0;
  std::vector<std::vector<Coord3>> steps;

  int peak_parallelism() const {
    int peak = 0;
    for (const auto& s : steps) peak = std::max(peak, static_cast<int>(s.size()));
    return peak;
  }
  long long total_positions() const {
    long long n = 0;
    for (const auto& s : steps) n += static_cast<long long>(s.size());
    return n;
  }
};

// Step s holds flat position i of frame t iff i + t*(A_x*Y + A_y) == s, i.e.
// consecutive frames are offset by exactly A_x*Y + A_y flat positions.
inline WavefrontSchedule build_schedule(const WindowConfig& w, int ts) {
  if (ts < 1 || w.x < 1 || w.y < 1 || w.a_x < 1 || w.a_x > w.x || w.a_y < 1 || w.a_y > w.y)
    throw std::invalid_argument("build_schedule: invalid window configuration");
  const int xy = w.x * w.y;
  const int delta = w.a_x * w.y + w.a_y;
  WavefrontSchedule sched;
  sched.w = w;
  sched.ts = ts;
  const int n_steps = xy + (ts - 1) * delta;
  sched.steps.resize(static_cast<std::size_t>(n_steps));
  for (int s = 0; s < n_steps; ++s) {
    for (int t = 0; t < ts; ++t) {
      const int i = s - t * delta;
      if (i < 0 || i >= xy) continue;
      sched.steps[static_cast<std::size_t>(s)].push_back(Coord3{t, i / w.y, i % w.y});
    }
  }
  return sched;
}

struct ScheduleReport {
  bool ok = true;
  std::vector<std::string> violations;
  int peak = 0;
  int steps = 0;

  void flag(const std::string& what) {
    ok = false;
    if (violations.size() < 50) violations.push_back(what);
  }
};

// Validates a schedule against the reachability oracle of the given mask:
// the steps must partition every frame coordinate, no coordinate may be
// reachable from another inside one step, and every dependency must decode
// in an earlier step. Violations come back as data.
inline ScheduleReport verify_schedule(const WavefrontSchedule& sched, const AttentionMask& mask,
                                      const TokenSequence& seq) {
  ScheduleReport rep;
  rep.peak = sched.peak_parallelism();
  rep.steps = static_cast<int>(sched.steps.size());
  if (seq.fx != sched.w.x || seq.fy != sched.w.y || seq.ts != sched.ts) {
    rep.flag("schedule/sequence layout mismatch");
    return rep;
  }
  const AttentionMask closure = reachability_oracle(mask, seq);
  const int L = seq.length();
  std::vector<int> step_of(static_cast<std::size_t>(L), -1);
  for (std::size_t s = 0; s < sched.steps.size(); ++s) {
    for (const Coord3& c : sched.steps[s]) {
      const int p = seq.pos_of(c.t, c.x, c.y);
      if (step_of[static_cast<std::size_t>(p)] != -1)
        rep.flag("coordinate scheduled twice: t=" + std::to_string(c.t) + " x=" +
                 std::to_string(c.x) + " y=" + std::to_string(c.y));
      step_of[static_cast<std::size_t>(p)] = static_cast<int>(s);
    }
  }
  for (int p = seq.frame_begin(); p < L; ++p)
    if (step_of[static_cast<std::size_t>(p)] == -1) rep.flag("coordinate never scheduled");
  // within-step mutual independence and cross-step dependency ordering
  for (std::size_t s = 0; s < sched.steps.size(); ++s) {
    for (const Coord3& c : sched.steps[s]) {
      const int q = seq.pos_of(c.t, c.x, c.y);
      for (int k = seq.frame_begin(); k < L; ++k) {
        if (k == q || !closure.at(q, k)) continue;
        const int ks = step_of[static_cast<std::size_t>(k)];
        if (ks == static_cast<int>(s))
          rep.flag("within-step dependency between positions " + std::to_string(q) + " and " +
                   std::to_string(k));
        else if (ks > static_cast<int>(s))
          rep.flag("dependency of position " + std::to_string(q) + " scheduled later at step " +
                   std::to_string(ks));
      }
    }
  }
  return rep;
}

// Wavefront decoding: one forward pass per step, all positions of the step
// sampled from it. Bit-identical to sequential_decode because a prediction
// site can only reach tokens decoded in strictly earlier steps.
inline void parallel_decode(const Model& model, TokenSequence& seq,
                            const WavefrontSchedule& sched, const Sampler& sampler,
                            int threads = 1) {
  if (seq.fx != sched.w.x || seq.fy != sched.w.y || seq.ts != sched.ts)
    throw std::invalid_argument("parallel_decode: schedule does not match the sequence layout");
  const int v = model.config().v_img();
  for (const auto& step : sched.steps) {
    if (step.empty()) continue;
    const Tensor logits = model.forward_logits(seq, nullptr, threads);
    for (const Coord3& c : step) {
      const int p = seq.pos_of(c.t, c.x, c.y);
      const int site = model.prediction_site(seq, p);
      const double* row = logits.data.data() + static_cast<std::size_t>(site) * v;
      seq.tokens[static_cast<std::size_t>(p)] = sampler.sample(row, v, c);
    }
  }
}

inline void write_schedule_csv(const WavefrontSchedule& sched, std::ostream& out) {
  out << "step,t,x,y\n";
  for (std::size_t s = 0; s < sched.steps.size(); ++s)
    for (const Coord3& c : sched.steps[s])
      out << s << "," << c.t << "," << c.x << "," << c.y << "\n";
}

struct ScheduleSummary {
  int steps = 0;
  int peak = 0;
  long long sequential_steps = 0;
  double speedup = 0.0;
};

inline ScheduleSummary summarize_schedule(const WavefrontSchedule& sched) {
  ScheduleSummary s;
  s.steps = static_cast<int>(sched.steps.size());
  s.peak = sched.peak_parallelism();
  s.sequential_steps = sched.total_positions();
  s.speedup = s.steps > 0 ? static_cast<double>(s.sequential_steps) / s.steps : 0.0;
  return s;
}

}  // namespace hiervid
