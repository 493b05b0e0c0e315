#include <filesystem>
#include <sstream>
#include <string>
#include <vector>

#include "cli.hpp"
#include "doctest.h"
#include "organocc/io.hpp"
#include "json.hpp"

using namespace organocc;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out, err;
};

Run cli(std::vector<std::string> args) {
  args.insert(args.begin(), "organocc");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string workdir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "organocc_test_cli" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p.string();
}

nlohmann::json error_json(const Run& r) { return nlohmann::json::parse(r.err); }

}  // namespace

TEST_CASE("usage errors exit 1 with a structured message") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"synth", "--no-such-flag"}).code == kExitUsage);
  CHECK(cli({"repro", "no-such-preset"}).code == kExitUsage);
  CHECK(cli({"synth", "--threads", "0", "--out", workdir("t0")}).code == kExitUsage);
  const Run r = cli({"synth", "--config", "/nonexistent/cfg.json", "--out", workdir("nocfg")});
  CHECK(r.code == kExitUsage);
  CHECK(error_json(r)["error"] == "config");
  const Run h = cli({"--help"});
  CHECK(h.code == kExitOk);
  CHECK(h.out.find("repro") != std::string::npos);
}

TEST_CASE("data errors exit 2") {
  const Run r = cli({"train", "--data", workdir("empty"), "--out", workdir("empty_out")});
  CHECK(r.code == kExitData);
  CHECK(error_json(r)["error"] == "io");
}

TEST_CASE("gradcheck exit codes") {
  CHECK(cli({"gradcheck"}).code == kExitOk);
  const Run r = cli({"gradcheck", "--tolerance", "1e-300"});
  CHECK(r.code == kExitNumeric);
  CHECK(error_json(r)["error"] == "numeric");
}

TEST_CASE("synth, sample, train, resume, reconstruct, evaluate") {
  const std::string dir = workdir("pipeline");
  const std::string cfg = dir + "/quick.json";
  write_text(cfg, R"({"preset": "single-organ", "quick": true})");
  const std::string data = dir + "/data";

  REQUIRE(cli({"synth", "--config", cfg, "--seed", "5", "--out", data}).code == kExitOk);
  const auto ds = nlohmann::json::parse(read_text(data + "/dataset.json"));
  const std::string fp = ds["config_fingerprint"];
  CHECK(ds["seed"] == 5);
  CHECK(ds["scenes"].size() == 4);
  CHECK(nlohmann::json::parse(read_text(data + "/scene_000.vol"))["meta"]["config_fingerprint"] == fp);

  REQUIRE(cli({"sample", "--data", data}).code == kExitOk);
  CHECK(fs::exists(data + "/scene_003.qs.json"));

  // Two epochs then two more must equal four straight epochs.
  REQUIRE(cli({"train", "--data", data, "--out", dir + "/a", "--epochs", "2"}).code == kExitOk);
  REQUIRE(cli({"train", "--data", data, "--out", dir + "/b", "--epochs", "4", "--resume", dir + "/a/checkpoint.json"})
              .code == kExitOk);
  REQUIRE(cli({"train", "--data", data, "--out", dir + "/c", "--epochs", "4", "--threads", "2"}).code == kExitOk);
  CHECK(read_text(dir + "/b/checkpoint.json.bin") == read_text(dir + "/c/checkpoint.json.bin"));
  CHECK(read_text(dir + "/b/loss.csv") == read_text(dir + "/c/loss.csv"));
  const auto meta = nlohmann::json::parse(read_text(dir + "/c/checkpoint.json"))["meta"];
  CHECK(meta["seed"] == 5);
  CHECK(meta.contains("config_fingerprint"));
  CHECK(read_text(dir + "/c/loss.csv").rfind("# config_fingerprint ", 0) == 0);

  const std::string rec = dir + "/rec";
  REQUIRE(cli({"reconstruct", "--checkpoint", dir + "/c/best.json", "--volume", data + "/scene_000.vol", "--config",
               cfg, "--out", rec})
              .code == kExitOk);
  CHECK(read_vol(rec + "/organ0_prob.vol").dims == Dims3{64, 64, 64});
  // A 32^3 input is a single 32^3 patch, so patch mode reproduces dense output.
  REQUIRE(cli({"reconstruct", "--checkpoint", dir + "/c/best.json", "--volume", data + "/scene_000.vol", "--config",
               cfg, "--mode", "patch", "--out", dir + "/rec_patch"})
              .code == kExitOk);
  CHECK(read_text(rec + "/organ0_prob.vol.raw") == read_text(dir + "/rec_patch/organ0_prob.vol.raw"));

  const Run self = cli({"evaluate", "--pred", rec + "/organ0.obj", "--gt", rec + "/organ0.obj", "--points", "500",
                        "--out", dir + "/eval"});
  REQUIRE(self.code == kExitOk);
  const auto rep = nlohmann::json::parse(read_text(dir + "/eval/metrics.json"));
  CHECK(rep["organs"][0]["hd90_mm"] == 0.0);
  CHECK(rep["organs"][0]["iou_percent"] == 100.0);

  const Run mismatch = cli({"evaluate", "--pred-grid", rec + "/organ0_prob.vol", "--gt-grid", data + "/scene_000.vol"});
  CHECK(mismatch.code == kExitData);
  CHECK(error_json(mismatch)["error"] == "frame-mismatch");
}

TEST_CASE("repro is byte-identical across runs") {
  const std::string a = workdir("repro_a"), b = workdir("repro_b");
  REQUIRE(cli({"repro", "single-organ", "--quick", "--seed", "2", "--deterministic", "--out", a}).code == kExitOk);
  REQUIRE(cli({"repro", "single-organ", "--quick", "--seed", "2", "--threads", "3", "--out", b}).code == kExitOk);
  for (const char* f : {"checkpoint.json", "checkpoint.json.bin", "best.json.bin", "metrics.json", "loss.csv"})
    CHECK_MESSAGE(read_text(a + "/" + f) == read_text(b + "/" + f), f);
}
