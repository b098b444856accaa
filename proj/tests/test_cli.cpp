// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "cli.hpp"
#include "run_manifest.hpp"

namespace fs = std::filesystem;
using ivt::cli::run;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("ivt_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string write_file(const fs::path& path, const std::string& text) {
  std::ofstream(path) << text;
  return path.string();
}

const char* kSmallConfig =
    "[scene]\njoints = 3\nchannels = 2\nframes = 3\namplitude = 1\n"
    "[model]\nblocks = 2,4\nd_common = 8\nheads = 2\nffn_mult = 2\nlayers = 1\n"
    "tokenizer_heads = 1\noffset_hidden = 4\n"
    "[train]\nsteps = 4\nlr = 0.001\n";

nlohmann::json read_json(const fs::path& path) {
  std::ifstream is(path);
  return nlohmann::json::parse(is);
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  for (std::string l; std::getline(is, l);) out.push_back(l);
  return out;
}

}  // namespace

TEST_CASE("git blob hash") {
  // `printf hello | git hash-object --stdin`
  CHECK(ivt::cli::git_blob_hash("hello") == "b6fc4c620b67d95f953a5c1c1230aaab5db5a1b0");
  CHECK(ivt::cli::git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST_CASE("cli usage errors") {
  CHECK(invoke({}).code == 2);
  CHECK(invoke({"frobnicate"}).code == 2);
  CHECK(invoke({"gradcheck", "--eps", "1"}).code == 2);
  const auto dir = scratch_dir("usage");
  const auto r = invoke({"gradcheck", "--unit", "bogus", "--out", dir.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("bogus") != std::string::npos);
  CHECK(read_json(dir / "gradcheck.manifest.json")["exit_code"] == 2);
  CHECK(invoke({"--help"}).code == 0);
  fs::remove_all(dir);
}

TEST_CASE("cli gradcheck") {
  const auto dir = scratch_dir("grad");
  const auto r = invoke({"gradcheck", "--unit", "mhsa", "--seed", "1", "--out", dir.string()});
  CHECK(r.code == 0);
  CHECK(r.out.rfind("mhsa max_rel_err=", 0) == 0);
  CHECK(r.out.find("PASS") != std::string::npos);
  const auto m = read_json(dir / "gradcheck.manifest.json");
  CHECK(m["command"] == "gradcheck");
  CHECK(m["seed"] == 1);
  CHECK(m["exit_code"] == 0);
  CHECK(m["input_hash"].get<std::string>().size() == 40);
  fs::remove_all(dir);
}

TEST_CASE("cli bad config is a usage error with the line") {
  const auto dir = scratch_dir("badcfg");
  const auto cfg = write_file(dir / "bad.ini", "[scene]\nframes = 2\nwhat = 1\n");
  const auto r = invoke({"bench", "--config", cfg, "--out", dir.string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("bad.ini:3") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("cli scene, train, eval and bench") {
  const auto dir = scratch_dir("pipeline");
  const auto cfg = write_file(dir / "small.ini", kSmallConfig);
  const auto scene = (dir / "scene.txt").string();

  auto r = invoke({"scene", "export", "--config", cfg, "--out", scene, "--seed", "5"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(scene + ".manifest.json"));
  CHECK(read_json(scene + ".manifest.json")["seed"] == 5);
  r = invoke({"scene", "verify", "--scene", scene});
  CHECK(r.code == 0);
  CHECK(r.out.find("ok") != std::string::npos);

  const auto run_dir = (dir / "run").string();
  r = invoke({"train", "--scene", scene, "--config", cfg, "--out", run_dir});
  REQUIRE(r.code == 0);
  CHECK(r.out.rfind("trained 4 steps", 0) == 0);
  CHECK(lines([&] {
          std::ifstream is(dir / "run" / "train_log.csv");
          std::stringstream ss;
          ss << is.rdbuf();
          return ss.str();
        }()).size() == 5);
  const auto tm = read_json(dir / "run" / "train.manifest.json");
  CHECK(tm["inputs"].contains("scene"));
  CHECK(tm["artifacts"].contains("checkpoint"));

  const auto ckpt = (dir / "run" / "model.ivtc").string();
  r = invoke({"eval", "--checkpoint", ckpt, "--scene", scene, "--config", cfg, "--out", run_dir,
              "--threshold", "0.05"});
  CHECK(r.code == 0);
  CHECK(lines(r.out).size() == 4);
  CHECK(lines(r.out)[0] == "frame,persons_matched,mpjpe,pa_mpjpe,depth_error");
  CHECK(fs::exists(dir / "run" / "poses.txt"));

  r = invoke({"eval", "--oracle-splice", "--scene", scene, "--config", cfg, "--out", run_dir});
  CHECK(r.code == 0);
  const auto rows = lines(r.out);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 1; i < rows.size(); ++i)
    CHECK(rows[i] == std::to_string(i - 1) + ",1,0,0,0");

  r = invoke({"eval", "--scene", scene, "--config", cfg, "--out", run_dir});
  CHECK(r.code == 2);
  r = invoke({"eval", "--checkpoint", ckpt, "--scene", scene, "--config", cfg, "--out", run_dir,
              "--threshold", "1.5"});
  CHECK(r.code == 2);

  r = invoke({"bench", "--config", cfg, "--out", (dir / "bench").string()});
  REQUIRE(r.code == 0);
  const auto table = lines(r.out);
  REQUIRE(table.size() == 6);
  CHECK(table[0] == "frames,total_macs,ita_macs,wall_ms");
  CHECK(table[1].rfind("1,", 0) == 0);
  CHECK(table[5].rfind("9,", 0) == 0);
  CHECK(fs::exists(dir / "bench" / "bench.csv"));
  CHECK(fs::exists(dir / "bench" / "bench.manifest.json"));
  fs::remove_all(dir);
}

TEST_CASE("cli divergence exits with the numeric code") {
  const auto dir = scratch_dir("diverge");
  const auto hot = write_file(
      dir / "hot.ini",
      "[scene]\njoints = 3\nchannels = 2\nframes = 3\namplitude = 1\n"
      "[model]\nblocks = 2,4\nd_common = 8\nheads = 2\nffn_mult = 2\nlayers = 1\n"
      "tokenizer_heads = 1\noffset_hidden = 4\n"
      "[train]\nsteps = 10\nlr = 1e300\nclip_norm = 0\n");
  const auto scene = (dir / "scene.txt").string();
  REQUIRE(invoke({"scene", "export", "--config", hot, "--out", scene}).code == 0);
  const auto r = invoke({"train", "--scene", scene, "--config", hot, "--out", dir.string()});
  CHECK(r.code == 3);
  CHECK(fs::exists(dir / "last_good.ivtc"));
  CHECK(read_json(dir / "train.manifest.json")["exit_code"] == 3);
  fs::remove_all(dir);
}
