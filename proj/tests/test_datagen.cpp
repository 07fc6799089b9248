#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>

#include "scenegen/attack.hpp"
#include "scenegen/behavior.hpp"
#include "scenegen/datagen.hpp"
#include "scenegen/metrics.hpp"
#include "fixtures.hpp"
#include "support.hpp"

using namespace scenegen;

namespace {

ScenarioRecord with_far_agent() {
  ScenarioRecord r = testing::straight_record(2);
  for (auto& s : r.agents[1].states) s->y += 100.0;
  return r;
}

}  // namespace

TEST_CASE("corpus generation is deterministic and round-trips") {
  DatagenConfig cfg;
  const auto a = generate_corpus(30, cfg, 3);
  const auto b = generate_corpus(30, cfg, 3);
  CHECK(a == b);
  CHECK(generate_corpus(30, cfg, 4) != a);
  for (const ScenarioRecord& r : a) {
    CHECK(r.meta.total_frames() == 21);
    CHECK(r.meta.dt_s == 0.5);
    CHECK(r.agents.size() >= 2);
    CHECK(r.agents.size() <= 8);
    CHECK(parse_record(serialize_record(r)) == r);
  }
  // Scenario i depends only on (config, seed, i).
  CHECK(generate_scenario(cfg, 3, 7) == a[7]);
}

TEST_CASE("category mix follows 4:4:2") {
  DatagenConfig cfg;
  const auto corpus = generate_corpus(100, cfg, 1);
  std::map<std::string, int> counts;
  for (const auto& r : corpus) ++counts[r.meta.kind];
  CHECK(std::abs(counts["free"] - 40) <= 1);
  CHECK(std::abs(counts["conditioned"] - 40) <= 1);
  CHECK(std::abs(counts["attack"] - 20) <= 1);
  for (const auto& r : corpus) {
    if (r.meta.kind == "conditioned") CHECK(!r.meta.goals.empty());
    if (r.meta.kind == "free") CHECK(r.meta.goals.empty());
  }
}

TEST_CASE("straight template without lane changes stays on the road") {
  DatagenConfig cfg;
  cfg.lane_change_probability = 0.0;
  MapTemplate straight;
  for (std::size_t i = 0; i < 40; ++i) {
    const ScenarioRecord r = generate_scenario(cfg, 5, i, &straight);
    if (r.meta.kind == "attack") continue;
    const auto rate = offroad_rate(to_tensor(r), to_map(r));
    REQUIRE(rate);
    CHECK(*rate == 0.0);
  }
}

TEST_CASE("followers never close below the minimum gap") {
  DatagenConfig cfg;
  cfg.lane_change_probability = 0.0;
  MapTemplate straight;
  int pairs = 0;
  for (std::size_t i = 0; i < 60; ++i) {
    const ScenarioRecord r = generate_scenario(cfg, 6, i, &straight);
    if (r.meta.kind == "attack") continue;
    for (size_t a = 0; a < r.agents.size(); ++a) {
      for (size_t b = a + 1; b < r.agents.size(); ++b) {
        for (size_t t = 0; t < r.agents[a].states.size(); ++t) {
          const auto& sa = r.agents[a].states[t];
          const auto& sb = r.agents[b].states[t];
          if (!sa || !sb || std::abs(sa->y - sb->y) > 0.5) continue;
          // Same lane of a straight road along a rotated axis: measure along the lane.
          const double along = std::abs((sa->x - sb->x) * std::cos(sa->heading) +
                                        (sa->y - sb->y) * std::sin(sa->heading));
          const double gap = along - 0.5 * (r.agents[a].length_m + r.agents[b].length_m);
          CHECK(gap >= cfg.follow.min_gap - 1e-9);
          ++pairs;
        }
      }
    }
  }
  CHECK(pairs > 0);
}

TEST_CASE("follow model examples") {
  const FollowModel m;
  const double inf = std::numeric_limits<double>::infinity();
  CHECK(follow_acceleration(m, 0.0, 10.0, inf, 0.0) == doctest::Approx(m.max_accel));
  CHECK(follow_acceleration(m, 10.0, 10.0, inf, 0.0) == doctest::Approx(0.0));
  CHECK(follow_acceleration(m, 10.0, 10.0, 3.0, 0.0) < -m.comfort_decel);
}

TEST_CASE("attacker selection") {
  AttackSpec spec;
  std::mt19937_64 rng(1);
  const ScenarioRecord two = testing::straight_record(2);
  CHECK(select_attacker(two, "0", spec, rng) == std::optional<std::string>("1"));
  CHECK_FALSE(select_attacker(with_far_agent(), "0", spec, rng).has_value());

  const ScenarioRecord five = testing::straight_record(5);
  std::set<std::string> seen;
  for (int i = 0; i < 4; ++i) {
    const auto pick = select_attacker(five, "0", spec, rng, seen);
    REQUIRE(pick);
    CHECK_FALSE(seen.contains(*pick));
    seen.insert(*pick);
  }
  CHECK(seen == std::set<std::string>{"1", "2", "3", "4"});
  CHECK_FALSE(select_attacker(five, "0", spec, rng, seen).has_value());

  ScenarioRecord short_history = two;
  for (int t = 0; t < 4; ++t) short_history.agents[0].states[t].reset();
  CHECK_FALSE(select_attacker(short_history, "0", spec, rng).has_value());
}

TEST_CASE("attack goal sector") {
  // Attacker 20 m behind the ego on the same lane, both at 8 m/s.
  ScenarioRecord r = testing::straight_record(1, 1);
  AgentTrack atk = r.agents[0];
  atk.id = "atk";
  for (auto& s : atk.states) s->x -= 20.0;
  r.agents.push_back(atk);

  AttackSpec spec;
  spec.reach_margin = std::numeric_limits<double>::infinity();
  const auto first = pick_attack_goal(r, "atk", "0", spec);
  REQUIRE(first);
  CHECK(first->frame == 5);
  CHECK(first->position.x() == doctest::Approx(r.agents[0].states[5]->x));

  // With a 3 m/s margin the ego waypoint at frame 4 + f is 20 + 4f m away and reachable
  // once 20 + 4f <= 11 * 0.5 f, i.e. f >= 13.33; a 10 s horizon puts 76 m inside the sector.
  spec.reach_margin = 3.0;
  spec.horizon_s = 10.0;
  const auto reachable = pick_attack_goal(r, "atk", "0", spec);
  REQUIRE(reachable);
  CHECK(reachable->frame == 4 + 14);

  ScenarioRecord parked = r;
  for (auto& s : parked.agents[1].states) {
    s->x = -50.0;
    s->vx = 0.0;
  }
  // A parked ego behind the attacker is outside the sector.
  CHECK_FALSE(pick_attack_goal(parked, "0", "atk", spec).has_value());
  // A stationary attacker has a zero radius.
  CHECK_FALSE(pick_attack_goal(parked, "atk", "0", spec).has_value());
}

TEST_CASE("checklist planted fixtures") {
  for (const auto kind : testing::all_attack_fixtures()) {
    const testing::PlantedAttack p = testing::planted_attack(kind);
    CHECK(parse_record(serialize_record(p.record)) == p.record);
    const ChecklistResult result = checklist(p.record, "attacker", "ego");
    CHECK(result.failures == p.expected);
    CHECK(result.passed == p.expected.empty());
  }
  // A passing record has at least one overlapping frame.
  const auto tbone = testing::planted_attack(testing::AttackFixture::kTBone);
  SceneTensor pair = to_tensor(tbone.record);
  CHECK(collision_rate(pair) == doctest::Approx(100.0));

  // Leaving the road before contact.
  ScenarioRecord off = tbone.record;
  for (int t = 4; t < 5; ++t) off.agents[1].states[t]->x = 8.0;
  CHECK(checklist(off, "attacker", "ego").failures.contains(ChecklistFailure::kOffRoad));
}

TEST_CASE("synthesize_attack with an empty pool returns none") {
  const ScenarioRecord r = with_far_agent();
  const OracleDenoiser oracle(normalize(to_tensor(r), ChannelStats::identity()));
  const AttackOutcome out = synthesize_attack(r, oracle, ChannelStats::identity(), AttackSpec{}, 1);
  CHECK_FALSE(out.record.has_value());
  CHECK(out.attempts == 0);
  CHECK_FALSE(out.last.passed);
}

TEST_CASE("behavior labels") {
  const ScenarioRecord straight = testing::straight_record(3);
  for (int a = 0; a < 3; ++a) CHECK(classify_agent(straight, a) == Behavior::kForward);
  const std::vector<ScenarioRecord> corpus{straight};
  const BehaviorStats stats = behavior_stats(corpus);
  CHECK(stats.agents == 3);
  CHECK(stats.percent[static_cast<int>(Behavior::kForward)] == doctest::Approx(100.0));

  ScenarioRecord change = testing::straight_record(1, 2);
  const int T = change.meta.total_frames();
  for (int t = 0; t < T; ++t) {
    const double y = 3.5 * std::clamp((t - 6) / 8.0, 0.0, 1.0);
    change.agents[0].states[t]->y = y;
  }
  CHECK(classify_agent(change, 0) == Behavior::kLeftLaneChange);
  for (int t = 0; t < T; ++t) change.agents[0].states[t]->y *= -1.0;
  CHECK(classify_agent(change, 0) == Behavior::kRightLaneChange);

  ScenarioRecord stop = testing::straight_record(1);
  for (auto& s : stop.agents[0].states) *s = testing::moving(3, 0, 0, 0);
  CHECK(classify_agent(stop, 0) == Behavior::kStop);

  ScenarioRecord turn = testing::straight_record(1);
  for (int t = 0; t < T; ++t) {
    const double h = std::numbers::pi / 2 * t / (T - 1);
    *turn.agents[0].states[t] = testing::moving(20 * std::sin(h), 20 - 20 * std::cos(h), h, 8);
  }
  CHECK(classify_agent(turn, 0) == Behavior::kLeftTurn);
}
