#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace std::string_literals;
namespace fs = std::filesystem;

namespace {

const std::string kCli = HIERVID_CLI_PATH;

struct TempDir {
  fs::path path;
  TempDir(const std::string& tag) {
    path = fs::temp_directory_path() / ("hiervid_cli_" + tag);
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(const std::string& args, const fs::path& log) {
  const std::string cmd = kCli + " " + args + " >" + log.string() + " 2>&1";
  const int rc = std::system(cmd.c_str());
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_small_config(const fs::path& p, int total_steps) {
  std::ofstream cfg(p);
  cfg << "d=16\nlayers=1\nheads=2\nf=4\nts=3\nbatch_size=2\n";
  cfg << "total_steps=" << total_steps << "\nwarmup_steps=2\nmax_lr=1e-3\nn_clips=6\n";
}

}  // namespace

TEST_CASE("usage and defaults") {
  TempDir tmp("usage");
  REQUIRE(run("", tmp.path / "a.log") == 1);                    // no subcommand
  REQUIRE(run("--no-such-flag", tmp.path / "b.log") == 1);      // unknown flag
  REQUIRE(run("train --bogus 1", tmp.path / "c.log") == 1);     // unknown subcommand flag
  REQUIRE(run("--dump-defaults", tmp.path / "d.log") == 0);
  const std::string dump = slurp(tmp.path / "d.log");
  REQUIRE(dump.find("d=64") != std::string::npos);
  REQUIRE(dump.find("max_lr=") != std::string::npos);
  REQUIRE(run("train --seed 1 --out x --config /does/not/exist.cfg", tmp.path / "e.log") == 1);
  // seed is mandatory for train/generate
  REQUIRE(run("train --out x", tmp.path / "f.log") == 1);
}

TEST_CASE("make-data, train, generate, schedule, analyze pipeline") {
  TempDir tmp("pipeline");
  const fs::path cfg = tmp.path / "run.cfg";
  write_small_config(cfg, 3);

  REQUIRE(run("make-data --config " + cfg.string() + " --seed 5 --n 4 --out " +
                  (tmp.path / "data").string(),
              tmp.path / "md.log") == 0);
  REQUIRE(fs::exists(tmp.path / "data" / "clips" / "clip_00000" / "meta.txt"));
  REQUIRE(fs::exists(tmp.path / "data" / "clips" / "clip_00003" / "frame_000.pgm"));
  REQUIRE(fs::exists(tmp.path / "data" / "manifest.json"));

  REQUIRE(run("train --config " + cfg.string() + " --seed 7 --stage 1 --data " +
                  (tmp.path / "data" / "clips").string() + " --out " + (tmp.path / "s1").string(),
              tmp.path / "t1.log") == 0);
  REQUIRE(fs::exists(tmp.path / "s1" / "model.ckpt"));
  REQUIRE(fs::exists(tmp.path / "s1" / "train_log.csv"));
  const std::string log_csv = slurp(tmp.path / "s1" / "train_log.csv");
  REQUIRE(log_csv.rfind("step,loss,lr,grad_norm,wall_ms", 0) == 0);

  REQUIRE(run("train --config " + cfg.string() + " --seed 8 --stage 2 --out " +
                  (tmp.path / "s2").string(),
              tmp.path / "t2.log") == 0);

  const std::string gen_args = "generate --config " + cfg.string() +
                               " --seed 9 --stage1-ckpt " + (tmp.path / "s1" / "model.ckpt").string() +
                               " --stage2-ckpt " + (tmp.path / "s2" / "model.ckpt").string() +
                               " --rounds 1 --fps 2 --shape disc --direction left --speed 3 --out ";
  REQUIRE(run(gen_args + (tmp.path / "gen").string(), tmp.path / "g.log") == 0);
  // ts=3 keyframes -> 2*3-1 = 5 frames after one round
  REQUIRE(fs::exists(tmp.path / "gen" / "frame_004.pgm"));
  REQUIRE(!fs::exists(tmp.path / "gen" / "frame_005.pgm"));
  REQUIRE(fs::exists(tmp.path / "gen" / "tokens" / "frame_004.csv"));
  const std::string manifest = slurp(tmp.path / "gen" / "manifest.json");
  REQUIRE(manifest.find("\"fps\": 4.0") != std::string::npos);
  REQUIRE(manifest.find("interp_round_1") != std::string::npos);

  // determinism: re-running generate yields byte-identical frames
  REQUIRE(run(gen_args + (tmp.path / "gen2").string(), tmp.path / "g2.log") == 0);
  for (int i = 0; i < 5; ++i) {
    const std::string name = "frame_00" + std::to_string(i) + ".pgm";
    REQUIRE(slurp(tmp.path / "gen" / name) == slurp(tmp.path / "gen2" / name));
  }
  REQUIRE(slurp(tmp.path / "gen" / "manifest.json") == slurp(tmp.path / "gen2" / "manifest.json"));

  REQUIRE(run("schedule --config " + cfg.string() + " --x 8 --y 8 --ax 2 --ay 2 --ts 5 --out " +
                  (tmp.path / "sched").string(),
              tmp.path / "s.log") == 0);
  REQUIRE(fs::exists(tmp.path / "sched" / "schedule.csv"));
  const std::string summary = slurp(tmp.path / "sched" / "summary.txt");
  REQUIRE(summary.find("steps=136") != std::string::npos);
  REQUIRE(summary.find("peak_parallelism=4") != std::string::npos);
  REQUIRE(summary.find("oracle=valid") != std::string::npos);

  REQUIRE(run("analyze --config " + cfg.string() + " --ckpt " +
                  (tmp.path / "s1" / "model.ckpt").string() + " --layer-max 0 --head-max 0 --out " +
                  (tmp.path / "an").string(),
              tmp.path / "a.log") == 0);
  REQUIRE(fs::exists(tmp.path / "an" / "attn_l0_h0_base.csv"));
  REQUIRE(fs::exists(tmp.path / "an" / "attn_l0_h0_plus.pgm"));
  REQUIRE(fs::exists(tmp.path / "an" / "alpha.csv"));
}

TEST_CASE("pretrain-spatial feeds the frozen base of a stage-1 model") {
  TempDir tmp("spatial");
  const fs::path cfg = tmp.path / "run.cfg";
  write_small_config(cfg, 2);
  REQUIRE(run("pretrain-spatial --config " + cfg.string() + " --seed 11 --out " +
                  (tmp.path / "sp").string(),
              tmp.path / "p.log") == 0);
  REQUIRE(fs::exists(tmp.path / "sp" / "spatial.ckpt"));
  REQUIRE(run("train --config " + cfg.string() + " --seed 12 --stage 1 --init-base-from " +
                  (tmp.path / "sp" / "spatial.ckpt").string() + " --out " +
                  (tmp.path / "s1").string(),
              tmp.path / "t.log") == 0);
  REQUIRE(fs::exists(tmp.path / "s1" / "model.ckpt"));
}

TEST_CASE("HIERVID_OUT overrides --out") {
  TempDir tmp("envout");
  const fs::path cfg = tmp.path / "run.cfg";
  write_small_config(cfg, 1);
  const fs::path envdir = tmp.path / "env_target";
  const std::string cmd = "HIERVID_OUT=" + envdir.string() + " " + kCli + " make-data --config " +
                          cfg.string() + " --seed 3 --n 1 --out " + (tmp.path / "ignored").string() +
                          " >" + (tmp.path / "env.log").string() + " 2>&1";
  REQUIRE(WEXITSTATUS(std::system(cmd.c_str())) == 0);
  REQUIRE(fs::exists(envdir / "manifest.json"));
  REQUIRE(!fs::exists(tmp.path / "ignored"));
}

TEST_CASE("verify subcommand prints a table and exits 0") {
  TempDir tmp("verify");
  REQUIRE(run("verify", tmp.path / "v.log") == 0);
  const std::string table = slurp(tmp.path / "v.log");
  REQUIRE(table.find("coglm-mask-rules") != std::string::npos);
  REQUIRE(table.find("eq4-oracle-soundness") != std::string::npos);
  REQUIRE(table.find("decode-equivalence") != std::string::npos);
  REQUIRE(table.find("FAIL") == std::string::npos);
}
