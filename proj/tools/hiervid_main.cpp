// hiervid command-line interface: synthetic data generation, training,
// hierarchical generation, schedule analysis, attention analysis, and the
// invariant verification suite.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "hiervid/analysis.hpp"
#include "hiervid/generate.hpp"
#include "hiervid/kvconfig.hpp"
#include "hiervid/scheduler.hpp"
#include "hiervid/trainer.hpp"
#include "hiervid/verify.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hiervid;

namespace {

constexpr const char* kArtifactVersion = "0.1.0";

std::string hex64(std::uint64_t v) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

fs::path resolve_out(const std::string& flag_out) {
  const char* env = std::getenv("HIERVID_OUT");
  const std::string chosen = (env && *env) ? std::string(env) : flag_out;
  if (chosen.empty())
    throw CLI::ValidationError("--out", "an output directory is required (flag or HIERVID_OUT)");
  fs::path p(chosen);
  fs::create_directories(p);
  return p;
}

RunConfig load_cfg(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_config(path);
}

void write_manifest(const fs::path& out, const std::string& command, const RunConfig& cfg,
                    std::uint64_t seed, json extra = json::object()) {
  json j;
  j["command"] = command;
  j["config_hash"] = hex64(config_hash(cfg));
  j["seed"] = seed;
  j["versions"] = {{"artifact", kArtifactVersion},
                   {"checkpoint_format", kCheckpointVersion},
                   {"sequence_format", 1}};
  for (auto& [k, v] : extra.items()) j[k] = v;
  std::ofstream f(out / "manifest.json");
  f << j.dump(2) << "\n";
}

std::string zero_pad(long long v, int width) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%0*lld", width, v);
  return buf;
}

// --- clip directory layout ---------------------------------------------------

void save_clip(const SyntheticClip& clip, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream meta(dir / "meta.txt");
  meta << "shape=" << shape_name(clip.motion.shape) << "\n";
  meta << "direction=" << direction_name(clip.motion.direction) << "\n";
  meta << "speed=" << clip.motion.speed << "\n";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", clip.native_fps);
  meta << "native_fps=" << buf << "\n";
  meta << "n_frames=" << clip.frames.size() << "\n";
  meta << "h=" << clip.frames[0].h << "\n";
  meta << "w=" << clip.frames[0].w << "\n";
  for (std::size_t t = 0; t < clip.frames.size(); ++t)
    write_pgm(clip.frames[t], dir / ("frame_" + zero_pad(static_cast<long long>(t), 3) + ".pgm"));
}

SyntheticClip load_clip(const fs::path& dir) {
  std::ifstream meta(dir / "meta.txt");
  if (!meta) throw std::runtime_error("load_clip: missing meta.txt in " + dir.string());
  SyntheticClip clip;
  std::string line;
  long long n_frames = 0;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "shape") clip.motion.shape = shape_from_name(val);
    else if (key == "direction") clip.motion.direction = direction_from_name(val);
    else if (key == "speed") clip.motion.speed = std::stoi(val);
    else if (key == "native_fps") clip.native_fps = std::stod(val);
    else if (key == "n_frames") n_frames = std::stoll(val);
  }
  clip.caption_tokens = encode_caption(clip.motion);
  for (long long t = 0; t < n_frames; ++t)
    clip.frames.push_back(read_pgm(dir / ("frame_" + zero_pad(t, 3) + ".pgm")));
  if (clip.frames.empty()) throw std::runtime_error("load_clip: no frames in " + dir.string());
  return clip;
}

std::vector<SyntheticClip> load_clips_dir(const fs::path& dir) {
  std::vector<fs::path> subdirs;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_directory()) subdirs.push_back(entry.path());
  std::sort(subdirs.begin(), subdirs.end());
  std::vector<SyntheticClip> clips;
  for (const auto& p : subdirs) clips.push_back(load_clip(p));
  if (clips.empty()) throw std::runtime_error("no clips found under " + dir.string());
  return clips;
}

// --- subcommand payloads ------------------------------------------------------

struct MakeDataOpts {
  std::string config, out;
  std::uint64_t seed = 1;
  int n = 0;  // 0 = config value
};

void cmd_make_data(const MakeDataOpts& o) {
  RunConfig cfg = load_cfg(o.config);
  const fs::path out = resolve_out(o.out);
  DataConfig dc = cfg.data_config();
  const int n = o.n > 0 ? o.n : dc.n_clips;
  auto clips = sample_clips(dc, n, o.seed);
  const fs::path clips_dir = out / "clips";
  for (int i = 0; i < n; ++i)
    save_clip(clips[static_cast<std::size_t>(i)], clips_dir / ("clip_" + zero_pad(i, 5)));
  write_manifest(out, "make-data", cfg, o.seed, {{"n_clips", n}});
  std::cout << "wrote " << n << " clips under " << clips_dir.string() << "\n";
}

struct TrainOpts {
  std::string config, out, data, init_base_from;
  std::uint64_t seed = 0;
  int stage = 1;
  int steps = 0;
  int threads = 1;
  bool spatial = false;
};

void cmd_train(const TrainOpts& o) {
  RunConfig cfg = load_cfg(o.config);
  const fs::path out = resolve_out(o.out);
  ModelConfig mc = cfg.model_config(o.spatial ? 1 : o.stage, o.spatial);
  TrainConfig tc = cfg.train_config(o.spatial ? 1 : o.stage, o.seed, o.threads);
  if (o.steps > 0) tc.total_steps = o.steps;

  Model model(mc, o.seed);
  if (!o.init_base_from.empty()) {
    if (o.spatial) throw std::runtime_error("--init-base-from is not valid for spatial pretraining");
    init_base_from_spatial(model, load_checkpoint(o.init_base_from));
  }

  std::vector<SyntheticClip> clips =
      o.data.empty() ? sample_clips(cfg.data_config(), cfg.n_clips, mix64(o.seed ^ 0xDA7AULL))
                     : load_clips_dir(o.data);

  std::ofstream log(out / "train_log.csv");
  AdamState opt;
  auto rows = run_training(model, clips, tc, opt, &log, [](const TrainLogRow& r) {
    if (r.step % 50 == 0 || r.step < 3)
      std::cout << "step " << r.step << " loss " << r.loss << " lr " << r.lr << "\n";
  });
  const std::string ckpt_name = o.spatial ? "spatial.ckpt" : "model.ckpt";
  save_checkpoint(model, out / ckpt_name, static_cast<std::uint64_t>(opt.step),
                  adam_extras(model, opt));
  const ParamCounts pc = model.param_counts();
  json extra = {{"stage", o.spatial ? 0 : o.stage},
                {"steps", tc.total_steps},
                {"final_loss", rows.empty() ? 0.0 : rows.back().loss},
                {"initial_loss", rows.empty() ? 0.0 : rows.front().loss},
                {"trainable_params", pc.trainable},
                {"total_params", pc.total},
                {"checkpoint", ckpt_name}};
  write_manifest(out, o.spatial ? "pretrain-spatial" : "train", cfg, o.seed, extra);
  std::cout << "trainable/total parameters: " << pc.trainable << "/" << pc.total << "\n";
  if (!rows.empty())
    std::cout << "loss " << rows.front().loss << " -> " << rows.back().loss << " over "
              << rows.size() << " steps\n";
}

struct GenerateOpts {
  std::string config, out, stage1_ckpt, stage2_ckpt;
  std::uint64_t seed = 0;
  int rounds = 0;
  double fps = 1.0;
  std::string shape = "square", direction = "right";
  int speed = 1;
  int threads = 1;
};

void cmd_generate(const GenerateOpts& o) {
  RunConfig cfg = load_cfg(o.config);
  const fs::path out = resolve_out(o.out);
  Model stage1 = model_from_checkpoint(load_checkpoint(o.stage1_ckpt));
  std::optional<Model> stage2;
  if (o.rounds > 0) {
    if (o.stage2_ckpt.empty())
      throw std::runtime_error("generate: --rounds > 0 needs --stage2-ckpt");
    stage2.emplace(model_from_checkpoint(load_checkpoint(o.stage2_ckpt)));
  }
  MotionSpec spec;
  spec.shape = shape_from_name(o.shape);
  spec.direction = direction_from_name(o.direction);
  spec.speed = o.speed;
  const Vocab voc = stage1.config().vocab();
  std::vector<int> text;
  for (int local : encode_caption(spec)) text.push_back(voc.text_id(local));

  Sampler sampler = cfg.sampler_config(o.seed);
  GeneratedVideo video =
      hierarchical_generate(text, o.fps, o.rounds, stage1, o.rounds > 0 ? *stage2 : stage1, sampler,
                            o.threads);

  const int h = cfg.clip_h, w = cfg.clip_w;
  fs::create_directories(out / "tokens");
  for (std::size_t i = 0; i < video.frames.size(); ++i) {
    const Image img = reconstruct_frame(video.frames[i], h, w, stage1.config().palette_bits);
    write_pgm(img, out / ("frame_" + zero_pad(static_cast<long long>(i), 3) + ".pgm"));
    write_token_csv(video.frames[i],
                    out / "tokens" / ("frame_" + zero_pad(static_cast<long long>(i), 3) + ".csv"));
  }
  json extra = {{"fps", video.fps},
                {"rounds", o.rounds},
                {"n_frames", video.frames.size()},
                {"provenance", video.provenance},
                {"caption",
                 {{"shape", o.shape}, {"direction", o.direction}, {"speed", o.speed}}}};
  write_manifest(out, "generate", cfg, o.seed, extra);
  std::cout << "generated " << video.frames.size() << " frames at " << video.fps << " fps\n";
}

struct ScheduleOpts {
  std::string config, out;
  int x = 0, y = 0, ax = 0, ay = 0, ts = 0;
};

void cmd_schedule(const ScheduleOpts& o) {
  RunConfig cfg = load_cfg(o.config);
  const fs::path out = resolve_out(o.out);
  WindowConfig w;
  w.x = o.x > 0 ? o.x : cfg.f;
  w.y = o.y > 0 ? o.y : cfg.f;
  w.a_x = o.ax > 0 ? o.ax : cfg.win_ax;
  w.a_y = o.ay > 0 ? o.ay : cfg.win_ay;
  const int ts = o.ts > 0 ? o.ts : cfg.ts;
  WavefrontSchedule sched = build_schedule(w, ts);
  {
    std::ofstream csv(out / "schedule.csv");
    write_schedule_csv(sched, csv);
  }
  const ScheduleSummary sum = summarize_schedule(sched);
  // validate against the oracle before reporting
  Vocab voc = cfg.model_config(1).vocab();
  TokenSequence layout = make_layout_sequence(ts, w.x, w.y, cfg.n_text, voc);
  const ScheduleReport rep = verify_schedule(sched, swin_ar_mask(layout, w), layout);
  char line[256];
  std::snprintf(line, sizeof(line),
                "steps=%d peak_parallelism=%d sequential_steps=%lld speedup=%.3f oracle=%s\n",
                sum.steps, sum.peak, sum.sequential_steps, sum.speedup,
                rep.ok ? "valid" : "INVALID");
  {
    std::ofstream txt(out / "summary.txt");
    txt << line;
  }
  std::cout << line;
  write_manifest(out, "schedule", cfg, 0,
                 {{"steps", sum.steps},
                  {"peak_parallelism", sum.peak},
                  {"speedup", sum.speedup},
                  {"oracle_valid", rep.ok}});
  if (!rep.ok) throw std::runtime_error("schedule failed oracle validation");
}

struct AnalyzeOpts {
  std::string config, out, ckpt, channel = "both";
  std::uint64_t seed = 1;
  int layer_min = 0, layer_max = -1, head_min = 0, head_max = -1;
  int threads = 1;
};

void cmd_analyze(const AnalyzeOpts& o) {
  RunConfig cfg = load_cfg(o.config);
  const fs::path out = resolve_out(o.out);
  Model model = model_from_checkpoint(load_checkpoint(o.ckpt));
  const ModelConfig& mc = model.config();

  // probe sequence: one synthetic clip at its lowest admissible rate
  DataConfig dc = cfg.data_config();
  auto clips = sample_clips(dc, 1, o.seed);
  const SyntheticClip& clip = clips[0];
  std::vector<double> offered;
  for (double r : mc.allowed_rates)
    if (r >= cfg.min_rate) offered.push_back(r);
  const double rate = select_frame_rate(clip.duration_s(), offered, mc.ts);
  auto frames = sample_frames_at_rate(clip, rate, mc.ts, 0.0, mc.f, mc.palette_bits);
  const Vocab voc = mc.vocab();
  std::vector<int> text;
  for (int local : clip.caption_tokens) text.push_back(voc.text_id(local));
  TokenSequence seq = build_stage1_sequence(voc.rate_id(rate_index(mc.allowed_rates, rate)), text,
                                            frames, mc.n_text, rate, voc);

  const int lmax = o.layer_max >= 0 ? o.layer_max : mc.layers - 1;
  const int hmax = o.head_max >= 0 ? o.head_max : mc.heads - 1;
  std::vector<std::string> channels;
  if (o.channel == "both") channels = {"base", "plus"};
  else channels = {o.channel};
  int written = 0;
  for (int l = o.layer_min; l <= lmax; ++l)
    for (int h = o.head_min; h <= hmax; ++h)
      for (const std::string& ch : channels) {
        if (ch == "plus" && mc.spatial_only) continue;
        const AttnChannel ac = ch == "base" ? AttnChannel::base : AttnChannel::plus;
        AttentionSummary sum = attention_summary(model, seq, l, h, ac, o.threads);
        const std::string stem = "attn_l" + std::to_string(l) + "_h" + std::to_string(h) + "_" + ch;
        write_summary_csv(sum, out / (stem + ".csv"));
        write_summary_pgm(sum, out / (stem + ".pgm"));
        ++written;
      }
  write_alpha_csv(alpha_stats(model), out / "alpha.csv");
  write_manifest(out, "analyze", cfg, o.seed,
                 {{"heatmaps", written}, {"checkpoint", o.ckpt}, {"rate_fps", rate}});
  std::cout << "wrote " << written << " heatmaps and alpha.csv under " << out.string() << "\n";
}

int cmd_verify(int threads) {
  auto results = run_verify_suite(threads);
  bool all = true;
  for (const auto& r : results) {
    std::printf("%-34s %s  %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL", r.detail.c_str());
    all = all && r.pass;
  }
  if (!all) throw std::runtime_error("verification suite reported failures");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"hiervid: a desk-scale dual-channel text-to-video transformer engine"};
  app.require_subcommand(0, 1);
  bool dump_defaults = false;
  app.add_flag("--dump-defaults", dump_defaults, "print the default configuration and exit");

  MakeDataOpts md;
  auto* c_md = app.add_subcommand("make-data", "generate a synthetic clip dataset");
  c_md->add_option("--config", md.config, "key=value config file")->check(CLI::ExistingFile);
  c_md->add_option("--out", md.out, "output directory");
  c_md->add_option("--seed", md.seed, "random seed")->required();
  c_md->add_option("--n", md.n, "number of clips (0 = config n_clips)");
  c_md->callback([&md] { cmd_make_data(md); });

  TrainOpts tr;
  auto* c_tr = app.add_subcommand("train", "train a stage-1 or stage-2 model");
  c_tr->add_option("--config", tr.config, "key=value config file")->check(CLI::ExistingFile);
  c_tr->add_option("--out", tr.out, "output directory");
  c_tr->add_option("--seed", tr.seed, "random seed")->required();
  c_tr->add_option("--stage", tr.stage, "1 (sequential) or 2 (interpolation)")
      ->check(CLI::Range(1, 2));
  c_tr->add_option("--steps", tr.steps, "override config total_steps");
  c_tr->add_option("--data", tr.data, "clip dataset directory (default: synthesize in memory)")
      ->check(CLI::ExistingDirectory);
  c_tr->add_option("--init-base-from", tr.init_base_from,
                   "spatial pretrain checkpoint for the frozen base")
      ->check(CLI::ExistingFile);
  c_tr->add_option("--threads", tr.threads, "worker threads");
  c_tr->callback([&tr] { cmd_train(tr); });

  TrainOpts sp;
  sp.spatial = true;
  auto* c_sp = app.add_subcommand("pretrain-spatial",
                                  "train the base channel alone on single-frame sequences");
  c_sp->add_option("--config", sp.config, "key=value config file")->check(CLI::ExistingFile);
  c_sp->add_option("--out", sp.out, "output directory");
  c_sp->add_option("--seed", sp.seed, "random seed")->required();
  c_sp->add_option("--steps", sp.steps, "override config total_steps");
  c_sp->add_option("--data", sp.data, "clip dataset directory")->check(CLI::ExistingDirectory);
  c_sp->add_option("--threads", sp.threads, "worker threads");
  c_sp->callback([&sp] { cmd_train(sp); });

  GenerateOpts ge;
  auto* c_ge = app.add_subcommand("generate", "two-stage hierarchical video generation");
  c_ge->add_option("--config", ge.config, "key=value config file")->check(CLI::ExistingFile);
  c_ge->add_option("--out", ge.out, "output directory");
  c_ge->add_option("--seed", ge.seed, "random seed")->required();
  c_ge->add_option("--stage1-ckpt", ge.stage1_ckpt, "stage-1 checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  c_ge->add_option("--stage2-ckpt", ge.stage2_ckpt, "stage-2 checkpoint (needed for rounds > 0)")
      ->check(CLI::ExistingFile);
  c_ge->add_option("--rounds", ge.rounds, "interpolation rounds")->check(CLI::NonNegativeNumber);
  c_ge->add_option("--fps", ge.fps, "stage-1 base frame rate");
  c_ge->add_option("--shape", ge.shape, "caption shape: square|disc|cross");
  c_ge->add_option("--direction", ge.direction, "caption direction: right|left|up|down");
  c_ge->add_option("--speed", ge.speed, "caption speed (px per native frame)");
  c_ge->add_option("--threads", ge.threads, "worker threads");
  c_ge->callback([&ge] { cmd_generate(ge); });

  ScheduleOpts sc;
  auto* c_sc = app.add_subcommand("schedule", "emit and validate a wavefront decode schedule");
  c_sc->add_option("--config", sc.config, "key=value config file")->check(CLI::ExistingFile);
  c_sc->add_option("--out", sc.out, "output directory");
  c_sc->add_option("--x", sc.x, "frame height in tokens (default: config f)");
  c_sc->add_option("--y", sc.y, "frame width in tokens (default: config f)");
  c_sc->add_option("--ax", sc.ax, "window height (default: config win_ax)");
  c_sc->add_option("--ay", sc.ay, "window width (default: config win_ay)");
  c_sc->add_option("--ts", sc.ts, "frames (default: config ts)");
  c_sc->callback([&sc] { cmd_schedule(sc); });

  AnalyzeOpts an;
  auto* c_an = app.add_subcommand("analyze", "attention heatmaps and mixture statistics");
  c_an->add_option("--config", an.config, "key=value config file")->check(CLI::ExistingFile);
  c_an->add_option("--out", an.out, "output directory");
  c_an->add_option("--ckpt", an.ckpt, "model checkpoint")->required()->check(CLI::ExistingFile);
  c_an->add_option("--seed", an.seed, "probe clip seed");
  c_an->add_option("--layer-min", an.layer_min, "first layer");
  c_an->add_option("--layer-max", an.layer_max, "last layer (-1 = all)");
  c_an->add_option("--head-min", an.head_min, "first head");
  c_an->add_option("--head-max", an.head_max, "last head (-1 = all)");
  c_an->add_option("--channel", an.channel, "base|plus|both")
      ->check(CLI::IsMember({"base", "plus", "both"}));
  c_an->add_option("--threads", an.threads, "worker threads");
  c_an->callback([&an] { cmd_analyze(an); });

  int verify_threads = 1;
  auto* c_ve = app.add_subcommand("verify", "run the invariant suite and print a pass/fail table");
  c_ve->add_option("--threads", verify_threads, "worker threads");
  c_ve->callback([&verify_threads] { cmd_verify(verify_threads); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }

  if (dump_defaults) {
    std::cout << dump_config(RunConfig{});
    return 0;
  }
  if (app.get_subcommands().empty()) {
    std::cerr << app.help();
    return 1;
  }
  return 0;
}
