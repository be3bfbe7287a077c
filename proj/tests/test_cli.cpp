#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "cadapter/dataset.hpp"
#include "cli.hpp"
#include "testutil.hpp"

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run_cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = cadapter::cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

fs::path work_dir(const std::string& name) { return testutil::temp_dir("cli_" + name); }

// A small synthetic workspace shared by the pipeline tests.
fs::path make_workspace() {
  static fs::path dir = [] {
    const auto d = work_dir("workspace");
    const auto r = run_cli({"gen-synth", "--classes", "6", "--tune", "400", "--cal", "200",
                            "--val", "120", "--test", "200", "--signal", "2", "--temp", "0.5",
                            "--seed", "7", "--out", d.string()});
    REQUIRE(r.code == 0);
    return d;
  }();
  return dir;
}

}  // namespace

TEST_CASE("gen-synth writes the four split files with the stated row counts") {
  const auto dir = work_dir("gen");
  const auto r = run_cli({"gen-synth", "--classes", "20", "--tune", "50", "--cal", "30", "--val",
                          "10", "--test", "20", "--signal", "2", "--temp", "0.25", "--seed", "7",
                          "--out", dir.string()});
  CHECK(r.code == 0);
  for (const auto& [name, rows] :
       std::vector<std::pair<std::string, std::size_t>>{
           {"tune", 50}, {"cal", 30}, {"val", 10}, {"test", 20}}) {
    const auto ds = cadapter::load_logits((dir / (name + ".csv")).string());
    CHECK(ds.size() == rows);
    CHECK(ds.class_count == 20);
  }
}

TEST_CASE("gen-synth is deterministic across reruns") {
  const auto a = work_dir("gen_a");
  const auto b = work_dir("gen_b");
  const std::vector<std::string> base{"gen-synth", "--classes", "5",    "--tune", "40",
                                      "--cal",     "20",        "--val", "10",    "--test",
                                      "20",        "--seed",    "3"};
  auto with_out = [&](const fs::path& dir) {
    auto args = base;
    args.push_back("--out");
    args.push_back(dir.string());
    return args;
  };
  REQUIRE(run_cli(with_out(a)).code == 0);
  REQUIRE(run_cli(with_out(b)).code == 0);
  for (const char* name : {"tune.csv", "cal.csv", "val.csv", "test.csv"})
    CHECK(slurp(a / name) == slurp(b / name));
}

TEST_CASE("gen-synth rejects a single class") {
  const auto r = run_cli({"gen-synth", "--classes", "1", "--out", work_dir("gen_bad").string()});
  CHECK(r.code == 1);
}

TEST_CASE("eval runs the baseline pipeline and honors RAPS defaults") {
  const auto dir = make_workspace();
  const auto thr = run_cli({"eval", "--cal", (dir / "cal.csv").string(), "--test",
                            (dir / "test.csv").string(), "--score", "thr", "--alpha", "0.1",
                            "--repeats", "2"});
  CHECK(thr.code == 0);
  CHECK(thr.out.find("coverage") != std::string::npos);

  const auto raps = run_cli({"--json", "eval", "--cal", (dir / "cal.csv").string(), "--test",
                             (dir / "test.csv").string(), "--score", "raps", "--raps-lambda",
                             "0.001", "--raps-kreg", "1", "--repeats", "2"});
  CHECK(raps.code == 0);
  CHECK(raps.out.find("\"score\":\"raps\"") != std::string::npos);
}

TEST_CASE("eval output is deterministic under a fixed seed") {
  const auto dir = make_workspace();
  const std::vector<std::string> args{"--json",  "eval",   "--cal",
                                      (dir / "cal.csv").string(), "--test",
                                      (dir / "test.csv").string(), "--score",
                                      "aps",     "--seed", "11",
                                      "--repeats", "3"};
  const auto a = run_cli(args);
  const auto b = run_cli(args);
  CHECK(a.code == 0);
  CHECK(a.out == b.out);
}

TEST_CASE("tune writes adapter.json and trace.csv; eval --compare consumes them") {
  const auto dir = make_workspace();
  const auto out = work_dir("tuned");
  const auto r = run_cli({"tune", "--tune", (dir / "tune.csv").string(), "--val",
                          (dir / "val.csv").string(), "--out", out.string(), "--iters", "30",
                          "--batch", "64", "--eval-every", "10", "--seed", "5"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(out / "adapter.json"));
  CHECK(fs::exists(out / "trace.csv"));

  const auto trace = slurp(out / "trace.csv");
  CHECK(trace.rfind("iteration,loss,val_size,val_coverage,val_sscv\n", 0) == 0);
  std::size_t lines = 0;
  for (char c : trace)
    if (c == '\n') ++lines;
  CHECK(lines == 1 + (1 + 30 / 10));  // header + baseline row + three eval rows

  const auto compare = run_cli({"eval", "--cal", (dir / "cal.csv").string(), "--test",
                                (dir / "test.csv").string(), "--score", "aps", "--adapter",
                                (out / "adapter.json").string(), "--compare", "--repeats", "2"});
  CHECK(compare.code == 0);
  CHECK(compare.out.find("baseline") != std::string::npos);
  CHECK(compare.out.find("adapter") != std::string::npos);
}

TEST_CASE("tune honors the size-loss and sscv early-stop selections") {
  const auto dir = make_workspace();
  const auto out = work_dir("tuned_size");
  const auto r = run_cli({"tune", "--tune", (dir / "tune.csv").string(), "--val",
                          (dir / "val.csv").string(), "--out", out.string(), "--loss", "size",
                          "--size-alpha", "0.05", "--early-stop", "sscv", "--iters", "10",
                          "--batch", "64", "--seed", "2"});
  CHECK(r.code == 0);
  CHECK(fs::exists(out / "adapter.json"));
}

TEST_CASE("calibrate emits the threshold json with an inf encoding when needed") {
  const auto dir = make_workspace();
  const auto r = run_cli({"--json", "calibrate", "--cal", (dir / "cal.csv").string(), "--score",
                          "thr", "--alpha", "0.1"});
  CHECK(r.code == 0);
  CHECK(r.out.find("\"tau\":") != std::string::npos);

  // alpha so small that the required rank exceeds n
  const auto inf = run_cli({"--json", "calibrate", "--cal", (dir / "cal.csv").string(), "--score",
                            "thr", "--alpha", "0.0001"});
  CHECK(inf.code == 0);
  CHECK(inf.out.find("\"tau\":\"inf\"") != std::string::npos);
}

TEST_CASE("hist writes the two-density csv") {
  const auto dir = make_workspace();
  const auto out_file = work_dir("hist") / "hist.csv";
  const auto r = run_cli({"hist", "--data", (dir / "test.csv").string(), "--score", "aps",
                          "--bins", "12", "--out", out_file.string(), "--seed", "4"});
  CHECK(r.code == 0);
  const auto csv = slurp(out_file);
  CHECK(csv.rfind("bin_low,bin_high,correct_density,incorrect_density\n", 0) == 0);
}

TEST_CASE("audit prop1 passes on synthetic data and exits zero") {
  const auto dir = make_workspace();
  const auto r = run_cli({"--json", "audit", "prop1", "--data", (dir / "val.csv").string(),
                          "--score", "thr", "--pairs", "3", "--seed", "6"});
  CHECK(r.code == 0);
  CHECK(r.out.find("\"consistent\":true") != std::string::npos);
}

TEST_CASE("audit grad reports a tiny max relative error") {
  const auto r = run_cli({"--json", "audit", "grad", "--T", "0.1", "--h", "1e-6", "--classes",
                          "5", "--rows", "12", "--batch", "6", "--seed", "8"});
  CHECK(r.code == 0);
  CHECK(r.out.find("max_rel_error") != std::string::npos);
}

TEST_CASE("a corrupted adapter file fails with exit code 1") {
  const auto dir = make_workspace();
  const auto bad = work_dir("corrupt") / "adapter.json";
  {
    std::ofstream out(bad);
    out << "{ broken";
  }
  const auto r = run_cli({"eval", "--cal", (dir / "cal.csv").string(), "--test",
                          (dir / "test.csv").string(), "--adapter", bad.string()});
  CHECK(r.code == 1);
  CHECK(!r.err.empty());
}

TEST_CASE("missing files and bad flags exit with code 1") {
  CHECK(run_cli({"eval", "--cal", "/nonexistent.csv", "--test", "/nonexistent.csv"}).code == 1);
  CHECK(run_cli({"eval", "--cal"}).code == 1);
  CHECK(run_cli({"frobnicate"}).code == 1);
}

TEST_CASE("config files merge under flags-win precedence and reject unknown keys") {
  const auto dir = make_workspace();
  const auto cfg_dir = work_dir("config");
  const auto cfg = cfg_dir / "eval.cfg";
  {
    std::ofstream out(cfg);
    out << "# evaluation defaults\n";
    out << "alpha = 0.2\n";
    out << "score = thr\n";
    out << "repeats = 2\n";
  }
  const auto from_cfg = run_cli({"--json", "eval", "--cal", (dir / "cal.csv").string(), "--test",
                                 (dir / "test.csv").string(), "--config", cfg.string()});
  CHECK(from_cfg.code == 0);
  CHECK(from_cfg.out.find("\"alpha\":0.2") != std::string::npos);

  const auto flag_wins = run_cli({"--json", "eval", "--cal", (dir / "cal.csv").string(), "--test",
                                  (dir / "test.csv").string(), "--config", cfg.string(),
                                  "--alpha", "0.3"});
  CHECK(flag_wins.code == 0);
  CHECK(flag_wins.out.find("\"alpha\":0.3") != std::string::npos);

  const auto bad_cfg = cfg_dir / "bad.cfg";
  {
    std::ofstream out(bad_cfg);
    out << "no_such_key = 1\n";
  }
  const auto rejected = run_cli({"eval", "--cal", (dir / "cal.csv").string(), "--test",
                                 (dir / "test.csv").string(), "--config", bad_cfg.string()});
  CHECK(rejected.code == 1);
}
