#include "doctest.h"
#include "tof/core_model.hpp"
#include "tof/errors.hpp"

using namespace tof;

TEST_SUITE("core_model") {

TEST_CASE("default schedule layout") {
  const Schedule s = default_schedule(8, 16);
  CHECK(s.stage_boundaries == std::vector<int>{1, 13});
  CHECK(s.branch_at == std::vector<int>{1, 13});
  CHECK(default_schedule(4, 4).stage_boundaries == std::vector<int>{1, 3});
  CHECK(default_schedule(2, 3).stage_boundaries == std::vector<int>{1, 2});
  CHECK(validate_config(default_config()).empty());
}

TEST_CASE("stage_of_frame partitions the frames") {
  const Schedule s = default_schedule(1, 10);  // {1, 8}
  CHECK(stage_of_frame(0, s) == Stage::initial);
  CHECK(stage_of_frame(1, s) == Stage::intermediate);
  CHECK(stage_of_frame(7, s) == Stage::intermediate);
  CHECK(stage_of_frame(8, s) == Stage::final);
  CHECK(stage_of_frame(9, s) == Stage::final);
  CHECK_THROWS_AS(stage_of_frame(10, s), RangeError);
  CHECK_THROWS_AS(stage_of_frame(-1, s), RangeError);
}

TEST_CASE("validation reports every violation") {
  RunConfig c = default_config();
  c.schedule.stage_boundaries = {0, 20};
  c.verifier_weights = {{"synthetic", 0.0}};
  c.schedule.prune_rule = PruneRule::fixed_k;
  c.schedule.fixed_k.assign(15, 0);
  const auto v = validate_config(c);
  CHECK(v.size() == 3);
  try {
    require_valid(c);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.violations().size() == 3);
    CHECK(std::string(e.what()).find("3 non-empty stages") != std::string::npos);
  }
}

TEST_CASE("boundaries that leave a stage empty are rejected") {
  RunConfig c = default_config();
  c.schedule.depth = 3;
  c.schedule.stage_boundaries = {1, 3};
  c.schedule.branch_at = {1};
  CHECK_FALSE(validate_config(c).empty());
  c.schedule.stage_boundaries = {2, 2};
  CHECK_FALSE(validate_config(c).empty());
}

TEST_CASE("config JSON round trip") {
  RunConfig c = default_config();
  c.master_seed = 0xffffffffffffffffULL;
  c.schedule.prune_rule = PruneRule::fixed_k;
  c.schedule.fixed_k.assign(15, 3);
  c.gates.potential_threshold = 0.25;
  c.verifier_weights = {{"synthetic", 2.0}, {"alignment", 0.5}};
  c.worker_endpoints = {"python3 worker.py"};
  const RunConfig back = config_from_json(nlohmann::json::parse(to_json(c).dump()));
  CHECK(back == c);
  CHECK(to_json(c)["schedule"]["prune_rule"] == "fixed-k");
}

TEST_CASE("config JSON rejects unknown fields and fills defaults") {
  CHECK_THROWS_AS(config_from_json({{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(config_from_json({{"schedule", {{"roots", 2}, {"depth", 8}, {"extra", 0}}}}), ConfigError);
  const RunConfig c = config_from_json({{"schedule", {{"roots", 2}, {"depth", 10}}}});
  CHECK(c.schedule == default_schedule(2, 10));
  CHECK(config_from_json(nlohmann::json::object()) == default_config());
}

TEST_CASE("staged prompt routing") {
  StagedPrompts p{{"a", "i"}, {"b", "m"}, {"c", "f"}};
  CHECK(p.routed(Stage::intermediate).prompt.text == "b");
  CHECK(p.for_stage(Stage::final).id == "f");
  CHECK(stage_from_string(to_string(Stage::final)) == Stage::final);
}

}
