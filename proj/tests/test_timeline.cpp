#include <gtest/gtest.h>

#include <cmath>
#include <nlohmann/json.hpp>

#include "tdit/numerics.hpp"
#include "tdit/timeline.hpp"

using namespace tdit;

namespace {

EventScript make_script(std::vector<std::pair<double, double>> spans, double duration,
                        double fps = 1.0) {
  EventScript s;
  s.duration = duration;
  s.fps = fps;
  s.global_tokens = {1};
  int id = 1;
  for (auto [a, b] : spans) s.events.push_back({{id++}, a, b});
  return s;
}

ScriptErrorKind error_kind(const EventScript& s) {
  try {
    validate_script(s);
  } catch (const ScriptError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected a validation error";
  return ScriptErrorKind::kBadToken;
}

// Random valid script with event-length ratios up to `max_ratio`.
EventScript random_script(Rng& rng, double max_ratio = 10.0) {
  const int ne = static_cast<int>(rng.uniform_int(1, 5));
  std::vector<double> w(static_cast<std::size_t>(ne));
  for (auto& x : w) x = rng.uniform(1.0, max_ratio);
  double total = 0;
  for (double x : w) total += x;
  const double duration = rng.uniform(2.0, 30.0);
  EventScript s;
  s.duration = duration;
  s.fps = 4.0;
  double t = 0;
  for (int n = 0; n < ne; ++n) {
    const double end = n + 1 == ne ? duration : t + duration * w[static_cast<std::size_t>(n)] / total;
    s.events.push_back({{n + 1}, t, end});
    t = end;
  }
  return validate_script(s);
}

}  // namespace

TEST(ValidateScript, AcceptsContiguousTiling) {
  EXPECT_NO_THROW(validate_script(make_script({{0, 4}, {4, 10}}, 10)));
}

TEST(ValidateScript, DistinctDiagnostics) {
  EXPECT_EQ(error_kind(make_script({{0, 4}, {5, 10}}, 10)), ScriptErrorKind::kGap);
  EXPECT_EQ(error_kind(make_script({{0, 6}, {4, 10}}, 10)), ScriptErrorKind::kOverlap);
  EXPECT_EQ(error_kind(make_script({{0, 4}, {4, 3}}, 10)), ScriptErrorKind::kReversedInterval);
  EXPECT_EQ(error_kind(make_script({}, 10)), ScriptErrorKind::kEmptyEvents);
  EXPECT_EQ(error_kind(make_script({{0, 4}, {4, 9}}, 10)), ScriptErrorKind::kCoverage);
  EXPECT_EQ(error_kind(make_script({{1, 4}, {4, 10}}, 10)), ScriptErrorKind::kCoverage);

  auto cut_out = make_script({{0, 10}}, 10);
  cut_out.cuts = {{10.0}};
  EXPECT_EQ(error_kind(cut_out), ScriptErrorKind::kCutOutOfRange);
  cut_out.cuts = {{0.0}};
  EXPECT_EQ(error_kind(cut_out), ScriptErrorKind::kCutOutOfRange);
  cut_out.cuts = {{6.0}, {3.0}};
  EXPECT_EQ(error_kind(cut_out), ScriptErrorKind::kCutsUnsorted);

  auto no_tokens = make_script({{0, 10}}, 10);
  no_tokens.events[0].tokens.clear();
  EXPECT_EQ(error_kind(no_tokens), ScriptErrorKind::kEmptyTokens);
}

TEST(ValidateScript, EnforcesEventLimit) {
  ScriptLimits limits;
  limits.max_events = 1;
  EXPECT_THROW(validate_script(make_script({{0, 4}, {4, 10}}, 10), limits), ScriptError);
}

TEST(LocateEvent, TieBreaks) {
  const auto s = validate_script(make_script({{0, 4}, {4, 10}}, 10));
  EXPECT_EQ(locate_event(2.0, s), 0u);
  EXPECT_EQ(locate_event(4.0, s), 1u);
  EXPECT_EQ(locate_event(10.0, s), 1u);
  EXPECT_EQ(locate_event(0.0, s), 0u);
  EXPECT_THROW(locate_event(10.5, s), std::out_of_range);
  EXPECT_THROW(locate_event(-0.1, s), std::out_of_range);
}

TEST(RescaleTimestamp, Examples) {
  const auto s = validate_script(make_script({{0, 8}, {8, 10}}, 10));
  EXPECT_DOUBLE_EQ(rescale_timestamp(9.0, s, 8.0), 12.0);
  EXPECT_DOUBLE_EQ(rescale_timestamp(0.0, s, 8.0), 0.0);
  EXPECT_DOUBLE_EQ(rescale_timestamp(8.0, s, 8.0), 8.0);
  EXPECT_DOUBLE_EQ(rescale_timestamp(10.0, s, 8.0), 16.0);
  EXPECT_THROW(rescale_timestamp(11.0, s, 8.0), std::out_of_range);
}

TEST(RescaleTimestamp, StartsAndMidpoints) {
  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_script(rng);
    for (double L : {4.0, 8.0, 16.0}) {
      for (std::size_t n = 0; n < s.events.size(); ++n) {
        EXPECT_NEAR(rescale_timestamp(s.events[n].t_start, s, L), n * L, 1e-12 * L * (n + 1));
        EXPECT_NEAR(rescale_timestamp(s.events[n].midpoint(), s, L), n * L + L / 2,
                    1e-12 * L * (n + 1));
      }
    }
  }
}

TEST(RescaleTimestamp, ContinuousAtBoundaries) {
  Rng rng(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_script(rng);
    const double L = 8.0;
    for (std::size_t n = 0; n + 1 < s.events.size(); ++n) {
      const auto& e = s.events[n];
      // Left branch of the map evaluated at the shared boundary.
      const double left = (e.t_end - e.t_start) * L / (e.t_end - e.t_start) + n * L;
      EXPECT_EQ(left, (n + 1) * L);
      EXPECT_EQ(rescale_timestamp(e.t_end, s, L), (n + 1) * L);
    }
  }
}

TEST(RescaleTimestamp, StrictlyMonotone) {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    const auto s = random_script(rng);
    double prev = -1.0;
    for (int i = 0; i <= 500; ++i) {
      const double t = i == 500 ? s.duration : s.duration * i / 500.0;
      const double r = rescale_timestamp(t, s, 8.0);
      EXPECT_GT(r, prev);
      prev = r;
    }
  }
}

TEST(RescaleTimestamp, LengthInvariance) {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_script(rng);
    const double factor = rng.uniform(0.1, 10.0);
    EventScript scaled = s;
    scaled.duration *= factor;
    for (auto& e : scaled.events) {
      e.t_start *= factor;
      e.t_end *= factor;
    }
    scaled = validate_script(scaled);
    for (int i = 0; i <= 100; ++i) {
      const double u = i / 100.0;
      EXPECT_NEAR(rescale_timestamp(u * s.duration, s, 8.0),
                  rescale_timestamp(u * scaled.duration, scaled, 8.0), 1e-9);
    }
  }
}

TEST(RescaleTimestamp, DistanceLevelProperties) {
  Rng rng(14);
  for (int trial = 0; trial < 200; ++trial) {
    const auto s = random_script(rng);
    for (double L : {4.0, 8.0, 16.0}) {
      const auto mids = event_midpoint_positions(s, L);
      for (int i = 0; i <= 200; ++i) {
        const double t = i == 200 ? s.duration : s.duration * i / 200.0;
        const auto n = locate_event(t, s);
        const double r = rescale_timestamp(t, s, L);
        const double own = std::abs(r - mids[n]);
        EXPECT_LE(own, L / 2 + 1e-12);
        for (std::size_t m = 0; m < mids.size(); ++m)
          if (m != n) {
            EXPECT_GE(std::abs(r - mids[m]), L / 2 - 1e-12);
          }
      }
      // (ii): distance grows moving away from the midpoint inside each event.
      for (std::size_t n = 0; n < s.events.size(); ++n) {
        const auto& e = s.events[n];
        double prev = -1.0;
        for (int i = 0; i <= 50; ++i) {
          const double t = e.midpoint() + (e.t_end - e.midpoint()) * i / 50.0 * (1 - 1e-12);
          const double dist = std::abs(rescale_timestamp(t, s, L) - mids[n]);
          if (i == 0) EXPECT_NEAR(dist, 0.0, 1e-12 * L * (n + 1));
          else EXPECT_GT(dist, prev);
          prev = dist;
        }
      }
      // (iii): boundaries sit exactly L/2 from both neighbours.
      for (std::size_t n = 0; n + 1 < s.events.size(); ++n) {
        const double r = rescale_timestamp(s.events[n].t_end, s, L);
        EXPECT_DOUBLE_EQ(std::abs(r - mids[n]), L / 2);
        EXPECT_DOUBLE_EQ(std::abs(r - mids[n + 1]), L / 2);
      }
    }
  }
}

TEST(EventMidpoints, Examples) {
  const auto one = validate_script(make_script({{0, 10}}, 10));
  EXPECT_EQ(event_midpoint_positions(one, 8.0), std::vector<double>{4.0});
  const auto three = validate_script(make_script({{0, 1}, {1, 5}, {5, 6}}, 6));
  EXPECT_EQ(event_midpoint_positions(three, 8.0), (std::vector<double>{4, 12, 20}));
}

TEST(FrameTimestamps, HalfOpenSampling) {
  auto s = validate_script(make_script({{0, 2}}, 2, 4));
  const auto ts = frame_timestamps(s);
  ASSERT_EQ(ts.size(), 8u);
  EXPECT_EQ(ts.front(), 0.0);
  EXPECT_EQ(ts.back(), 1.75);
  auto s10 = validate_script(make_script({{0, 10}}, 10, 1));
  EXPECT_EQ(frame_timestamps(s10).size(), 10u);
  Rng rng(15);
  for (int i = 0; i < 50; ++i) {
    const auto r = random_script(rng);
    const auto f = frame_timestamps(r);
    if (!f.empty()) {
      EXPECT_LT(f.back(), r.duration);
    }
  }
}

TEST(ScriptJson, RoundTripAndUnknownFields) {
  auto s = validate_script(make_script({{0, 4}, {4, 10}}, 10, 2));
  s.cuts = {{5.5}};
  const auto j = script_to_json(s);
  EXPECT_EQ(script_from_json(j), s);
  auto bad = j;
  bad["extra"] = 1;
  EXPECT_THROW(script_from_json(bad), std::invalid_argument);
  auto bad_event = j;
  bad_event["events"][0]["name"] = "x";
  EXPECT_THROW(script_from_json(bad_event), std::invalid_argument);
  auto missing = j;
  missing.erase("fps");
  EXPECT_THROW(script_from_json(missing), std::invalid_argument);
}

TEST(ScriptJson, ExactFieldNames) {
  const auto j = nlohmann::json::parse(R"({"duration": 10, "fps": 1, "global": [3],
      "events": [{"tokens": [1, 2], "start": 0, "end": 10}], "cuts": [2.5]})");
  const auto s = validate_script(script_from_json(j));
  EXPECT_EQ(s.events[0].tokens, (std::vector<int>{1, 2}));
  EXPECT_EQ(s.cuts[0].t_cut, 2.5);
}
