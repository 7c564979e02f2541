// End-to-end checks of the command line tool: every subcommand runs against
// a small synthetic corpus, and rerunning with identical seeds reproduces
// identical outputs byte for byte.
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

const char* cli_path() { return PPGFM_CLI_PATH; }

int run(const std::string& args) {
  const std::string cmd = std::string(cli_path()) + " " + args + " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Workspace {
  fs::path dir;
  Workspace() {
    dir = fs::temp_directory_path() / "ppgfm_cli_suite";
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  std::string p(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_SUITE_BEGIN("cli");

TEST_CASE("selftest passes on a fresh build") { CHECK(run("selftest") == 0); }

TEST_CASE("unknown subcommands and flags exit with code 2") {
  CHECK(run("frobnicate") == 2);
  CHECK(run("preprocess --no-such-flag x") == 2);
}

TEST_CASE("full pipeline runs and is seed-reproducible") {
  Workspace ws;

  // Small model so the pretrain stays fast.
  {
    std::ofstream cfg(ws.p("cfg.json"));
    cfg << R"({"model": {"encoder": {"n_blocks": 4, "base_filters": 4,
              "filters_double_every": 2, "embedding_dim": 16}}})";
  }

  REQUIRE(run("ingest --out " + ws.p("raw") +
              " --synth-subjects 20 --synth-seconds 60 --synth-two-class --seed 2") == 0);
  REQUIRE(fs::exists(ws.p("raw") + "/tasks.csv"));

  REQUIRE(run("preprocess --in " + ws.p("raw") + " --out " + ws.p("seg.ppgs")) == 0);
  REQUIRE(fs::exists(ws.p("seg.ppgs")));
  REQUIRE(fs::exists(ws.p("seg.ppgs") + ".meta"));
  REQUIRE(fs::exists(ws.p("seg.ppgs") + ".report.csv"));

  REQUIRE(run("morphology --store " + ws.p("seg.ppgs") + " --out " + ws.p("labels.csv") +
              " --bins 4") == 0);

  const std::string pretrain = "pretrain --mode s --store " + ws.p("seg.ppgs") +
                               " --labels " + ws.p("labels.csv") + " --config " +
                               ws.p("cfg.json") + " --steps 12 --batch-pairs 3 --seed 9";
  REQUIRE(run(pretrain + " --out " + ws.p("ckpt_a")) == 0);
  REQUIRE(run(pretrain + " --out " + ws.p("ckpt_b")) == 0);
  CHECK(slurp(ws.p("ckpt_a") + "/losses.csv") == slurp(ws.p("ckpt_b") + "/losses.csv"));
  CHECK(slurp(ws.p("ckpt_a") + "/losses.csv").substr(0, 24) == "step,total,svri,ipa,sqi\n");

  REQUIRE(run("embed --store " + ws.p("seg.ppgs") + " --ckpt " + ws.p("ckpt_a") +
              "/ckpt_final.ppgm --out " + ws.p("emb.bin")) == 0);
  REQUIRE(run("embed --store " + ws.p("seg.ppgs") + " --stat-features --out " +
              ws.p("emb_stat.bin")) == 0);

  const std::string probe = "probe --emb " + ws.p("emb.bin") + " --labels " +
                            ws.p("raw") + "/tasks.csv --task class --split 60/20/20 "
                            "--seed 11 --report ";
  REQUIRE(run(probe + ws.p("rep_a")) == 0);
  REQUIRE(run(probe + ws.p("rep_b")) == 0);
  CHECK(slurp(ws.p("rep_a") + "/class_report.csv") ==
        slurp(ws.p("rep_b") + "/class_report.csv"));
  CHECK(slurp(ws.p("rep_a") + "/class_report.md").find("auroc") != std::string::npos);

  REQUIRE(run("probe --emb " + ws.p("emb.bin") + " --labels " + ws.p("raw") +
              "/tasks.csv --task hr --seed 11 --report " + ws.p("rep_a")) == 0);

  REQUIRE(run("report --in " + ws.p("rep_a") + " --out " + ws.p("final") + " --emb " +
              ws.p("emb.bin") + " --distances cosine") == 0);
  CHECK(fs::exists(ws.p("final") + "/combined_report.csv"));
  CHECK(fs::exists(ws.p("final") + "/distances_hist.csv"));
  CHECK(fs::exists(ws.p("final") + "/distances_raw.csv"));

  // Reports carry the config hash for provenance.
  const auto report_text = slurp(ws.p("rep_a") + "/class_report.csv");
  CHECK(report_text.find("config_hash") != std::string::npos);
}

TEST_CASE("pretrain rejects an invalid alpha before touching data") {
  Workspace ws;
  // No store exists; the config check must fire first and exit nonzero.
  CHECK(run("pretrain --mode s --store /nonexistent.ppgs --labels /nonexistent.csv "
            "--out " + ws.p("x") + " --alpha 1.5") == 1);
}

TEST_CASE("config files with unknown keys are rejected") {
  Workspace ws;
  {
    std::ofstream cfg(ws.p("bad.json"));
    cfg << R"({"train": {"alfa": 0.5}})";
  }
  CHECK(run("preprocess --in " + ws.p("nowhere") + " --out " + ws.p("s.ppgs") +
            " --config " + ws.p("bad.json")) == 1);
}

TEST_SUITE_END();
