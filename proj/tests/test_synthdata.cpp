#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "tdit/synthdata.hpp"

using namespace tdit;

namespace {

std::string temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  return p.string();
}

double mean_abs_diff(const Tensor& v, std::size_t k) {
  const std::size_t n = v.dim(1) * v.dim(2);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += std::abs(v[k * n + i] - v[(k - 1) * n + i]);
  return acc / static_cast<double>(n);
}

EventScript two_event_script(double cut) {
  EventScript s;
  s.duration = 4.0;
  s.fps = 4.0;
  s.events = {{{event_token(0)}, 0.0, 2.0}, {{event_token(4)}, 2.0, 4.0}};
  s.global_tokens = {event_token(0), event_token(4)};
  if (cut > 0.0) s.cuts = {{cut}};
  return validate_script(s);
}

}  // namespace

TEST(CorpusConfig, ValidateAndJson) {
  CorpusConfig c;
  EXPECT_NO_THROW(c.validate());
  c.min_event_length = 2.0;  // 2 * 4 events > 4 s
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = CorpusConfig{};
  c.min_events = 5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = CorpusConfig{};
  c.seed = 99;
  c.fps = 6.0;
  EXPECT_EQ(to_json(corpus_config_from_json(to_json(c))), to_json(c));
  auto j = to_json(c);
  j["extra"] = true;
  EXPECT_THROW(corpus_config_from_json(j), std::invalid_argument);
}

TEST(PatternLibrary, PixelRangeAndDistinguishable) {
  const PatternLibrary lib(8, 8);
  for (std::size_t id = 0; id < 8; ++id)
    for (double ph : {0.0, 0.3, 0.5, 1.0}) {
      const Tensor f = lib.frame(id, ph);
      for (double v : f.storage()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  EXPECT_GE(lib.min_pairwise_distance(), 0.2);
  EXPECT_THROW(lib.frame(8, 0.5), std::out_of_range);
  EXPECT_THROW(PatternLibrary(9, 8), std::invalid_argument);
}

TEST(PatternLibrary, LargerGridStaysDistinguishable) {
  EXPECT_GE(PatternLibrary(8, 16).min_pairwise_distance(33), 0.2);
}

TEST(GenScript, SingleEventSpansWholeVideo) {
  CorpusConfig c;
  c.min_events = c.max_events = 1;
  Rng rng(3);
  for (int i = 0; i < 20; ++i) {
    const EventScript s = gen_script(rng, c);
    ASSERT_EQ(s.events.size(), 1u);
    EXPECT_EQ(s.events[0].t_start, 0.0);
    EXPECT_EQ(s.events[0].t_end, s.duration);
  }
}

TEST(GenScript, HistogramAndClosure) {
  CorpusConfig c;
  Rng rng(11);
  std::set<std::size_t> counts;
  std::size_t with_cut = 0;
  for (int i = 0; i < 10000; ++i) {
    const EventScript s = gen_script(rng, c);
    counts.insert(s.events.size());
    EXPECT_NO_THROW(validate_script(s));
    for (std::size_t n = 0; n < s.events.size(); ++n) {
      EXPECT_GE(s.events[n].t_end - s.events[n].t_start, c.min_event_length - 1e-12);
      if (n > 0) {
        EXPECT_NE(s.events[n].tokens, s.events[n - 1].tokens);
      }
    }
    for (const auto& cut : s.cuts) {
      EXPECT_GT(cut.t_cut, 0.1 * s.duration);
      EXPECT_LT(cut.t_cut, 0.9 * s.duration);
    }
    with_cut += s.cuts.size();
    EXPECT_GE(s.duration, c.min_duration);
    EXPECT_LE(s.duration, c.max_duration);
  }
  EXPECT_EQ(counts, (std::set<std::size_t>{2, 3, 4}));
  EXPECT_NEAR(static_cast<double>(with_cut) / 10000.0, 0.5, 0.03);
}

TEST(RenderVideo, ShowsScheduledPatternAtPhase) {
  const PatternLibrary lib(8, 8);
  const EventScript s = two_event_script(0.0);
  const Tensor v = render_video(s, lib);
  ASSERT_EQ(v.shape(), (std::vector<std::size_t>{16, 8, 8}));
  // Frame 10 is t = 2.5 s, phase 0.25 of the ring event.
  const Tensor want = lib.frame(4, 0.25);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(v[10 * 64 + i], want[i]);
  EXPECT_EQ(render_video(s, lib), v);
}

TEST(RenderVideo, CutInvertsLaterFrames) {
  const PatternLibrary lib(8, 8);
  const EventScript s = two_event_script(1.0);
  const Tensor clean = render_video(two_event_script(0.0), lib);
  const Tensor cut = render_video(s, lib);
  for (std::size_t k = 0; k < 16; ++k)
    for (std::size_t i = 0; i < 64; ++i) {
      const double want = k >= 4 ? 1.0 - clean[k * 64 + i] : clean[k * 64 + i];
      EXPECT_DOUBLE_EQ(cut[k * 64 + i], want);
    }
  EXPECT_GT(mean_abs_diff(cut, 4), 0.5);
}

TEST(RenderVideo, ZeroCutSmoothnessBelowCutChange) {
  const PatternLibrary lib(8, 8);
  CorpusConfig c;
  c.cut_probability = 0.0;
  Rng rng(5);
  double worst = 0.0;
  for (int i = 0; i < 200; ++i) {
    const Tensor v = render_video(gen_script(rng, c), lib);
    for (std::size_t k = 1; k < v.dim(0); ++k) worst = std::max(worst, mean_abs_diff(v, k));
  }
  EXPECT_LT(worst, 0.3);
}

TEST(RenderVideo, UnknownIdThrows) {
  const PatternLibrary lib(4, 8);
  EXPECT_THROW(render_video(two_event_script(0.0), lib), std::invalid_argument);
}

TEST(Corpus, DeterministicAndRecordStreamsIndependent) {
  CorpusConfig c;
  c.num_videos = 6;
  c.seed = 4;
  const Corpus a = generate_corpus(c);
  const Corpus b = generate_corpus(c);
  EXPECT_EQ(a.records, b.records);
  c.num_videos = 3;
  const Corpus prefix = generate_corpus(c);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(prefix.records[i], a.records[i]);
}

TEST(Corpus, WriteReadRoundTrip) {
  CorpusConfig c;
  c.num_videos = 4;
  const Corpus a = generate_corpus(c);
  const std::string dir = temp_dir("tdit_corpus_rt");
  write_corpus(a, dir);
  EXPECT_TRUE(std::filesystem::exists(dir + "/videos/000003.json"));
  const Corpus b = read_corpus(dir);
  EXPECT_EQ(b.records, a.records);
  EXPECT_EQ(to_json(b.config), to_json(a.config));
}

TEST(Corpus, EmptyRoundTrips) {
  CorpusConfig c;
  c.num_videos = 0;
  const std::string dir = temp_dir("tdit_corpus_empty");
  write_corpus(generate_corpus(c), dir);
  EXPECT_TRUE(read_corpus(dir).records.empty());
}

TEST(Corpus, TruncatedIndexNamesRecord) {
  CorpusConfig c;
  c.num_videos = 3;
  const std::string dir = temp_dir("tdit_corpus_trunc");
  write_corpus(generate_corpus(c), dir);
  const std::string index = dir + "/corpus.jsonl";
  std::string text;
  {
    std::ifstream in(index);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::ofstream(index, std::ios::trunc) << text.substr(0, text.size() - 20);
  try {
    read_corpus(dir);
    FAIL() << "expected a parse error";
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("corpus record 2"), std::string::npos) << e.what();
  }
}

TEST(VideoJson, RoundTripExact) {
  const PatternLibrary lib(8, 8);
  const Tensor v = render_video(two_event_script(1.3), lib);
  double fps = 0.0;
  EXPECT_EQ(video_from_json(nlohmann::json::parse(video_to_json(v, 4.0).dump()), &fps), v);
  EXPECT_EQ(fps, 4.0);
  EXPECT_THROW(video_from_json(nlohmann::json{{"fps", 1}}), std::invalid_argument);
}

TEST(VideoJson, PgmFrames) {
  const PatternLibrary lib(8, 8);
  const Tensor v = render_video(two_event_script(0.0), lib);
  const std::string dir = temp_dir("tdit_pgm");
  save_video_pgm_frames(v, dir);
  EXPECT_TRUE(std::filesystem::exists(dir + "/frame_0015.pgm"));
  EXPECT_EQ(std::filesystem::file_size(dir + "/frame_0000.pgm"), 11u + 64u);
}
