#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "scenegen/record.hpp"
#include "scenegen/scene.hpp"
#include "support.hpp"

using namespace scenegen;
using testing::Rng;

namespace {

SceneTensor single_token(double x) {
  SceneTensor s(1, 1);
  s.set_valid(0, 0, true);
  auto tok = s.token(0, 0);
  tok[kX] = x;
  tok[kCosHeading] = 1.0;
  tok[kLength] = 4.0;
  tok[kWidth] = 2.0;
  return s;
}

const char* kMinimal = R"({"meta":{"dt_s":0.5,"history_frames":4,"current_frames":1,"future_frames":16,"range_m":104},
"agents":[{"id":"a","type":"vehicle","length_m":4.5,"width_m":2.0,"states":[
null,null,null,null,[0,0,0,1,0],[1,0,0,1,0],[2,0,0,1,0],[3,0,0,1,0],[4,0,0,1,0],[5,0,0,1,0],
[6,0,0,1,0],[7,0,0,1,0],[8,0,0,1,0],[9,0,0,1,0],[10,0,0,1,0],[11,0,0,1,0],[12,0,0,1,0],
[13,0,0,1,0],[14,0,0,1,0],[15,0,0,1,0],[16,0,0,1,0]]}],
"lanes":[{"type":"driving","points":[[0,0],[10,0],[20,0]]}]})";

}  // namespace

TEST_CASE("normalize with identity stats is the identity") {
  Rng rng(1);
  const SceneTensor s = testing::random_scene(rng, 3, 5);
  const SceneTensor n = normalize(s, ChannelStats::identity());
  CHECK(testing::max_abs_diff(s, n) == 0.0);
}

TEST_CASE("normalize centres and scales each channel") {
  ChannelStats stats;
  stats.mean[kX] = 10.0;
  stats.std[kX] = 2.0;
  CHECK(normalize(single_token(10.0), stats).at(0, 0, kX) == 0.0);

  SceneTensor s(2, 1);
  s.set_valid(0, 0, true);
  s.set_valid(1, 0, true);
  s.at(1, 0, kX) = 4.0;
  stats.mean[kX] = 2.0;
  const SceneTensor n = normalize(s, stats);
  CHECK(n.at(0, 0, kX) == -1.0);
  CHECK(n.at(1, 0, kX) == 1.0);
}

TEST_CASE("normalize zero-fills invalid tokens and rejects non-finite values") {
  SceneTensor s(1, 2);
  s.set_valid(0, 0, true);
  s.at(0, 1, kX) = 7.0;  // invalid
  ChannelStats stats;
  stats.mean.fill(3.0);
  const SceneTensor n = normalize(s, stats);
  for (int c = 0; c < kStateDim; ++c) CHECK(n.at(0, 1, c) == 0.0);

  s.at(0, 0, kY) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(normalize(s, stats), NonFiniteError);
  CHECK_THROWS_AS(denormalize(s, stats), NonFiniteError);
}

TEST_CASE("denormalize re-projects headings") {
  SceneTensor s(1, 2);
  s.set_valid(0, 0, true);
  s.set_valid(0, 1, true);
  s.at(0, 0, kSinHeading) = 0.3;
  s.at(0, 0, kCosHeading) = 0.4;
  const SceneTensor d = denormalize(s, ChannelStats::identity());
  CHECK(d.at(0, 0, kSinHeading) == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(d.at(0, 0, kCosHeading) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(d.at(0, 1, kSinHeading) == 0.0);
  CHECK(d.at(0, 1, kCosHeading) == 1.0);
}

TEST_CASE("property: denormalize inverts normalize on valid tokens") {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const SceneTensor s = testing::random_scene(rng, testing::uniform_int(rng, 1, 6),
                                                testing::uniform_int(rng, 1, 21));
    ChannelStats stats;
    for (int c = 0; c < kStateDim; ++c) {
      stats.mean[c] = testing::uniform(rng, -5, 5);
      stats.std[c] = testing::uniform(rng, 0.1, 20);
    }
    CHECK(testing::max_abs_diff(s, denormalize(normalize(s, stats), stats)) <= 1e-9);
  }
}

TEST_CASE("fit_stats examples") {
  SceneTensor same(3, 2);
  for (int a = 0; a < 3; ++a) {
    for (int t = 0; t < 2; ++t) {
      same.set_valid(a, t, true);
      same.at(a, t, kX) = 5.0;
    }
  }
  const ChannelStats flat = fit_stats(std::span<const SceneTensor>(&same, 1));
  CHECK(flat.std[kX] == kStdFloor);
  CHECK(flat.mean[kX] == 5.0);

  SceneTensor two(3, 1);
  two.set_valid(0, 0, true);
  two.set_valid(1, 0, true);
  two.at(1, 0, kX) = 2.0;
  two.at(2, 0, kX) = 1000.0;  // invalid row, excluded
  const ChannelStats st = fit_stats(std::span<const SceneTensor>(&two, 1));
  CHECK(st.mean[kX] == doctest::Approx(1.0));
  CHECK(st.std[kX] == doctest::Approx(1.0));

  CHECK_THROWS(fit_stats(std::span<const SceneTensor>()));
}

TEST_CASE("property: fit_stats is permutation invariant over the corpus") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ScenarioRecord> corpus;
    for (int i = 0; i < 6; ++i) {
      ScenarioRecord r = testing::random_record(rng);
      r.agents.push_back(testing::straight_record(1).agents[0]);
      r.agents.back().states.resize(r.meta.total_frames());
      r.agents.back().states[0] = testing::moving(1, 2, 0.3, 4);
      corpus.push_back(r);
    }
    const ChannelStats a = fit_stats(corpus);
    std::shuffle(corpus.begin(), corpus.end(), rng);
    const ChannelStats b = fit_stats(corpus);
    for (int c = 0; c < kStateDim; ++c) {
      CHECK(a.mean[c] == doctest::Approx(b.mean[c]).epsilon(1e-12));
      CHECK(a.std[c] == doctest::Approx(b.std[c]).epsilon(1e-12));
    }
  }
}

TEST_CASE("minimal record parses") {
  const ScenarioRecord r = parse_record(kMinimal);
  CHECK(r.agents.size() == 1);
  CHECK(r.lanes.size() == 1);
  CHECK(r.meta.total_frames() == 21);
  const SceneTensor s = to_tensor(r);
  for (int t = 0; t < 4; ++t) CHECK_FALSE(s.valid(0, t));
  CHECK(s.valid(0, 4));
  CHECK(s.at(0, 5, kX) == 1.0);
  CHECK(s.at(0, 5, kCosHeading) == 1.0);
  CHECK(s.at(0, 5, kLength) == 4.5);
}

TEST_CASE("frame count mismatch names the agent") {
  ScenarioRecord r = testing::straight_record(2);
  r.agents[1].id = "late";
  r.agents[1].states.pop_back();
  try {
    parse_record(serialize_record(r));
    FAIL("expected a parse error");
  } catch (const RecordError& e) {
    CHECK(std::string(e.what()).find("late") != std::string::npos);
    CHECK(e.location().find("agents[1]") != std::string::npos);
  }
}

TEST_CASE("schema violations are typed parse errors") {
  CHECK_THROWS_AS(parse_record("{"), RecordError);
  CHECK_THROWS_AS(parse_record(R"({"meta":{}})"), RecordError);
  std::string nan = kMinimal;
  nan.replace(nan.find("[5,0,0,1,0]"), 11, "[5,NaN,0,1,0]");
  CHECK_THROWS_AS(parse_record(nan), RecordError);
  std::string lane = kMinimal;
  lane.replace(lane.find("\"driving\""), 9, "\"sidewalk\"");
  CHECK_THROWS_AS(parse_record(lane), RecordError);

  std::istringstream corpus(serialize_record(parse_record(kMinimal)) + "\n{\"meta\": 3}\n");
  try {
    read_corpus(corpus);
    FAIL("expected a parse error");
  } catch (const RecordError& e) {
    CHECK(e.location().find("line 2") != std::string::npos);
  }
}

TEST_CASE("property: read(write(r)) == r") {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const ScenarioRecord r = testing::random_record(rng);
    CHECK(parse_record(serialize_record(r)) == r);
  }
  std::vector<ScenarioRecord> corpus;
  for (int i = 0; i < 10; ++i) corpus.push_back(testing::random_record(rng));
  std::stringstream io;
  write_corpus(io, corpus);
  CHECK(read_corpus(io) == corpus);
}

TEST_CASE("tensor round trip through from_tensor") {
  const ScenarioRecord r = testing::straight_record(3);
  const ScenarioRecord back = from_tensor(r, to_tensor(r));
  for (size_t a = 0; a < r.agents.size(); ++a) {
    for (size_t t = 0; t < r.agents[a].states.size(); ++t) {
      CHECK(back.agents[a].states[t]->x == doctest::Approx(r.agents[a].states[t]->x));
      CHECK(back.agents[a].states[t]->heading == doctest::Approx(r.agents[a].states[t]->heading));
    }
  }
}

TEST_CASE("ground-truth tokens satisfy the scene invariants") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const SceneTensor s = to_tensor(testing::random_record(rng));
    for (int a = 0; a < s.agents(); ++a) {
      for (int t = 0; t < s.frames(); ++t) {
        if (!s.valid(a, t)) continue;
        const double n = std::hypot(s.at(a, t, kSinHeading), s.at(a, t, kCosHeading));
        CHECK(std::abs(n * n - 1.0) <= 1e-6);
        CHECK(s.at(a, t, kLength) > 0.0);
        CHECK(s.at(a, t, kWidth) > 0.0);
      }
    }
  }
}
