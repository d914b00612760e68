#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "tof/analysis.hpp"
#include "tof/cli.hpp"
#include "tof/errors.hpp"
#include "tof/manifest.hpp"
#include "tof/synth_server.hpp"

#include <unistd.h>

using namespace tof;
namespace fs = std::filesystem;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun cli(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tof-cli-test-" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path write_config(const fs::path& dir, const RunConfig& cfg) {
  const fs::path p = dir / "config.json";
  std::ofstream(p) << to_json(cfg).dump(2);
  return p;
}

struct EnvGuard {
  explicit EnvGuard(const char* value) {
    if (value) {
      ::setenv("TOF_LOG_LEVEL", value, 1);
    } else {
      ::unsetenv("TOF_LOG_LEVEL");
    }
  }
  ~EnvGuard() { ::unsetenv("TOF_LOG_LEVEL"); }
};

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("grid specs") {
  CHECK(parse_grid("n=1..4") == std::vector<int>{1, 2, 3, 4});
  CHECK(parse_grid("1,2,4,8") == std::vector<int>{1, 2, 4, 8});
  CHECK(parse_grid("n=1..3,8,16") == std::vector<int>{1, 2, 3, 8, 16});
  CHECK(parse_grid("5") == std::vector<int>{5});
  CHECK_THROWS_AS(parse_grid(""), ConfigError);
  CHECK_THROWS_AS(parse_grid("n=4..1"), ConfigError);
  CHECK_THROWS_AS(parse_grid("2,2"), ConfigError);
  CHECK_THROWS_AS(parse_grid("0,1"), ConfigError);
  CHECK_THROWS_AS(parse_grid("a,b"), ConfigError);
}

TEST_CASE("usage errors exit 64") {
  CHECK(cli({}).code == kExitUsage);
  CHECK(cli({"frobnicate"}).code == kExitUsage);
  CHECK(cli({"tof", "--threads", "0"}).code == kExitUsage);
  CHECK(cli({"tof", "--seed", "minus-one"}).code == kExitUsage);
  CHECK(cli({"bench", "--format", "pdf"}).code == kExitUsage);
  CHECK(cli({"fit"}).code == kExitUsage);
  CHECK(cli({"--help"}).code == kExitOk);
}

TEST_CASE("log level comes from the environment") {
  const fs::path dir = scratch("loglevel");
  {
    EnvGuard g("verbose");
    const CliRun r = cli({"tof", "--out", dir.string()});
    CHECK(r.code == kExitUsage);
    CHECK(r.err.find("TOF_LOG_LEVEL") != std::string::npos);
  }
  {
    EnvGuard g("error");
    const CliRun r = cli({"tof", "--out", dir.string()});
    CHECK(r.code == kExitOk);
    CHECK(r.err.empty());
  }
  {
    EnvGuard g("debug");
    const CliRun r = cli({"tof", "--out", dir.string()});
    CHECK(r.code == kExitOk);
    CHECK(r.err.find("[tof debug]") != std::string::npos);
  }
}

TEST_CASE("configuration errors exit 2") {
  const fs::path dir = scratch("config");
  CHECK(cli({"tof", "--config", (dir / "missing.json").string()}).code == kExitConfig);
  std::ofstream(dir / "broken.json") << "{ not json";
  CHECK(cli({"tof", "--config", (dir / "broken.json").string()}).code == kExitConfig);
  std::ofstream(dir / "unknown.json") << R"({"no_such_field": 1})";
  CHECK(cli({"linear", "--config", (dir / "unknown.json").string()}).code == kExitConfig);
  RunConfig bad = default_config();
  bad.schedule.stage_boundaries = {1, 1};
  CHECK(cli({"tof", "--config", write_config(dir, bad).string()}).code == kExitConfig);
  RunConfig weights = default_config();
  weights.verifier_weights = {{"nobody-serves-this", 1.0}};
  CHECK(cli({"tof", "--config", write_config(dir, weights).string()}).code == kExitConfig);
}

TEST_CASE("oracle refuses oversized trees with exit 2") {
  const fs::path dir = scratch("oracle-big");
  RunConfig cfg = default_config();
  cfg.schedule = default_schedule(4, 24);
  cfg.schedule.branch_limit = 4;
  cfg.schedule.branch_at.clear();
  for (int t = 1; t < 24; ++t) cfg.schedule.branch_at.push_back(t);
  const CliRun r = cli({"oracle", "--config", write_config(dir, cfg).string(), "--out", dir.string()});
  CHECK(r.code == kExitConfig);
  CHECK(r.err.find("1000000") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "manifest.json"));
}

TEST_CASE("oracle writes a manifest") {
  const fs::path dir = scratch("oracle");
  RunConfig cfg = default_config();
  cfg.schedule = default_schedule(2, 6);
  const CliRun r = cli({"oracle", "--config", write_config(dir, cfg).string(), "--out", dir.string()});
  REQUIRE(r.code == kExitOk);
  const nlohmann::json m = nlohmann::json::parse(slurp(dir / "manifest.json"));
  CHECK(m["algorithm"] == "oracle");
  CHECK(m["paths"].get<std::uint64_t>() == tree_path_count(cfg.schedule));
  CHECK(m["event_log"]["sha1"] == git_blob_sha1(slurp(dir / "events.jsonl")));
  const OracleResult o = brute_force_oracle(SyntheticLandscape(cfg.landscape), cfg.schedule, cfg.master_seed);
  CHECK(m["scores"]["final"].get<double>() == o.best_score);
}

TEST_CASE("search runs print a summary and a verifiable manifest") {
  for (const char* cmd : {"tof", "linear"}) {
    const fs::path dir = scratch(std::string("run-") + cmd);
    const CliRun r = cli({cmd, "--seed", "7", "--out", dir.string()});
    REQUIRE(r.code == kExitOk);
    CHECK(r.out.find("best_score ") == 0);
    CHECK(r.out.find("\nnfe ") != std::string::npos);
    CHECK(r.out.find("\nextend_calls ") != std::string::npos);
    const nlohmann::json m = nlohmann::json::parse(slurp(dir / "manifest.json"));
    const std::string log = slurp(dir / "events.jsonl");
    CHECK(m["algorithm"] == cmd);
    CHECK(m["config"]["master_seed"] == 7);
    CHECK(verify_manifest(m, log));
    CHECK_FALSE(verify_manifest(m, log + "{\"event\":\"forged\"}\n"));
    nlohmann::json tampered = m;
    tampered["event_log"]["lines"] = m["event_log"]["lines"].get<int>() + 1;
    CHECK_FALSE(verify_manifest(tampered, log));
    const nlohmann::json timing = nlohmann::json::parse(slurp(dir / "timing.json"));
    CHECK(timing.contains("elapsed_seconds"));
    CHECK(slurp(dir / "manifest.json").find("elapsed") == std::string::npos);
  }
}

TEST_CASE("repeated runs produce identical manifests") {
  const fs::path a = scratch("repeat-a");
  const fs::path b = scratch("repeat-b");
  RunConfig cfg = default_config();
  cfg.verifier_weights = {{"synthetic", 1.0}, {"smoothness", 0.5}};
  const std::string path = write_config(a, cfg).string();
  REQUIRE(cli({"tof", "--config", path, "--seed", "7", "--threads", "1", "--out", a.string()}).code == kExitOk);
  REQUIRE(cli({"tof", "--config", path, "--seed", "7", "--threads", "6", "--out", b.string()}).code == kExitOk);
  CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
  CHECK(slurp(a / "events.jsonl") == slurp(b / "events.jsonl"));
  const fs::path c = scratch("repeat-c");
  REQUIRE(cli({"tof", "--config", path, "--seed", "8", "--out", c.string()}).code == kExitOk);
  CHECK(slurp(a / "manifest.json") != slurp(c / "manifest.json"));
}

TEST_CASE("git blob hashes") {
  CHECK(git_blob_sha1("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
  CHECK(git_blob_sha1("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("bench and fit") {
  const fs::path dir = scratch("bench");
  const CliRun r = cli({"bench", "--grid", "n=1..16", "--algorithm", "linear", "--out", dir.string()});
  REQUIRE(r.code == kExitOk);
  const ScalingCurve c = curve_from_json(nlohmann::json::parse(r.out));
  CHECK(c.points.size() == 16);
  for (std::size_t i = 1; i < c.points.size(); ++i) CHECK(c.points[i].best_score >= c.points[i - 1].best_score);
  CHECK(slurp(dir / "curve.json") == r.out);
  const CliRun f = cli({"fit", "--input", (dir / "curve.json").string()});
  REQUIRE(f.code == kExitOk);
  const nlohmann::json fit = nlohmann::json::parse(f.out);
  CHECK(fit["algorithm"] == "linear");
  CHECK(fit.contains("s_inf"));
  CHECK(fit["s_inf"].get<double>() >= c.points.back().best_score - 0.05);

  const CliRun both = cli({"bench", "--grid", "1,2,4,8", "--algorithm", "both", "--format", "table"});
  REQUIRE(both.code == kExitOk);
  CHECK(both.out.find("linear") != std::string::npos);
  CHECK(both.out.find("tof") != std::string::npos);
  const CliRun svg = cli({"bench", "--grid", "1,2,4,8", "--format", "svg"});
  REQUIRE(svg.code == kExitOk);
  CHECK(svg.out.find("<svg") != std::string::npos);

  CHECK(cli({"bench", "--grid", "4,2"}).code == kExitConfig);
  std::ofstream(dir / "short.json") << R"({"algorithm":"linear","points":[]})";
  CHECK(cli({"fit", "--input", (dir / "short.json").string()}).code != kExitOk);
  CHECK(cli({"fit", "--input", (dir / "absent.json").string()}).code == kExitConfig);
}

TEST_CASE("worker failures exit 3") {
  const fs::path dir = scratch("worker-fail");
  CHECK(cli({"tof", "--workers", "true", "--out", dir.string()}).code == kExitWorker);
  CHECK(cli({"tof", "--workers", std::string(TOF_WORKER_EXE) + " --protocol-version 2", "--out", dir.string()}).code ==
        kExitWorker);
}

TEST_CASE("worker-backed runs match in-process runs") {
  const fs::path a = scratch("local");
  const fs::path b = scratch("remote");
  REQUIRE(cli({"tof", "--seed", "11", "--out", a.string()}).code == kExitOk);
  REQUIRE(cli({"tof", "--seed", "11", "--workers", TOF_WORKER_EXE, "--threads", "4", "--out", b.string()}).code ==
          kExitOk);
  nlohmann::json ma = nlohmann::json::parse(slurp(a / "manifest.json"));
  nlohmann::json mb = nlohmann::json::parse(slurp(b / "manifest.json"));
  CHECK(mb["config"]["worker_endpoints"].size() == 1);
  ma.erase("config");
  mb.erase("config");
  CHECK(ma == mb);
  CHECK(slurp(a / "events.jsonl") == slurp(b / "events.jsonl"));
}

TEST_CASE("protocol-check passes in process and against the worker binary") {
  const fs::path dir = scratch("protocol-check");
  const CliRun local = cli({"protocol-check"});
  CHECK(local.code == kExitOk);
  CHECK(nlohmann::json::parse(local.out)["failed"] == 0);
  const CliRun remote = cli({"protocol-check", "--workers", TOF_WORKER_EXE, "--out", dir.string()});
  CHECK(remote.code == kExitOk);
  const nlohmann::json report = nlohmann::json::parse(slurp(dir / "protocol-check.json"));
  CHECK(report["failed"] == 0);
  CHECK(report["violations"] == 0);
  const CliRun bad = cli({"protocol-check", "--workers", std::string(TOF_WORKER_EXE) + " --protocol-version 2"});
  CHECK(bad.code == kExitWorker);
}

TEST_CASE("synthetic worker dumps its landscape constants") {
  const fs::path dir = scratch("constants");
  const std::string cmd = std::string(TOF_WORKER_EXE) + " --dump-constants > " + (dir / "c.json").string();
  REQUIRE(std::system(cmd.c_str()) == 0);
  const nlohmann::json c = nlohmann::json::parse(slurp(dir / "c.json"));
  CHECK(c == landscape_constants(SyntheticLandscape(default_config().landscape)));
  CHECK(c["dimension"] == 8);
  CHECK(c["targets"]["final"].size() == 8);
}

}
