#pragma once

// Synthetic multi-event videos. Each event id names a closed-form pattern
// P_id(phase) on a G x G grid with pixels in [0, 1]. A frame at time t shows
// the current event's pattern at its phase within the event; every cut
// toggles palette inversion for all later frames.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "tdit/numerics.hpp"
#include "tdit/timeline.hpp"

namespace tdit {

struct CorpusConfig {
  std::size_t num_videos = 32;
  double min_duration = 4.0;
  double max_duration = 6.0;
  double fps = 4.0;
  std::size_t min_events = 2;
  std::size_t max_events = 4;
  double min_event_length = 1.0;
  double cut_probability = 0.5;
  std::size_t num_patterns = 8;  ///< event ids are 0 .. num_patterns-1
  std::size_t grid = 8;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument for empty ranges or infeasible lengths.
  void validate() const;
};

nlohmann::json to_json(const CorpusConfig& cfg);
CorpusConfig corpus_config_from_json(const nlohmann::json& j);

/// Event id `id` is written as the single caption token id + 1 (token 0 is
/// padding). The global caption lists the event tokens in order.
int event_token(std::size_t id);
/// Inverse of event_token on a caption; throws for malformed captions.
std::size_t event_pattern_id(const TemporalCaption& caption);

class PatternLibrary {
 public:
  /// Built-in library, in id order: four orientations of a sliding block, an
  /// expanding ring, vertical and horizontal sweeping bars and a centre
  /// blink. `num_patterns` selects the first 2..8 of them.
  PatternLibrary(std::size_t num_patterns, std::size_t grid);

  std::size_t size() const { return count_; }
  std::size_t grid() const { return grid_; }
  /// Frame [G x G] of pattern `id` at `phase` in [0, 1].
  Tensor frame(std::size_t id, double phase) const;
  /// Writes the frame into `out` (G*G values).
  void render_into(std::size_t id, double phase, std::span<double> out) const;

  /// min over id pairs of the mean (over `samples` matched phases) RMS
  /// per-pixel distance.
  double min_pairwise_distance(std::size_t samples = 65) const;

 private:
  std::size_t count_;
  std::size_t grid_;
};

/// Samples one script. Only `rng` is consumed.
EventScript gen_script(Rng& rng, const CorpusConfig& cfg);

/// Video [T, G, G] for a valid script whose event ids are in the library.
Tensor render_video(const EventScript& script, const PatternLibrary& lib);

struct CorpusRecord {
  EventScript script;
  std::string video_path;  ///< relative to the corpus directory
  Tensor video;            ///< [T, G, G]
  bool operator==(const CorpusRecord&) const = default;
};

struct Corpus {
  CorpusConfig config;
  std::vector<CorpusRecord> records;
};

/// Deterministic corpus; record i draws from seed stream i.
Corpus generate_corpus(const CorpusConfig& cfg);

/// Generated video format {"fps": f, "frames": [[[G x G rows]]]}.
nlohmann::json video_to_json(const Tensor& video, double fps);
Tensor video_from_json(const nlohmann::json& j, double* fps = nullptr);
void save_video(const Tensor& video, double fps, const std::string& path);
Tensor load_video(const std::string& path, double* fps = nullptr);
/// One binary PGM per frame, frame_NNNN.pgm.
void save_video_pgm_frames(const Tensor& video, const std::string& dir);

/// Writes dir/corpus.jsonl, dir/corpus_config.json and dir/videos/NNNNNN.json.
void write_corpus(const Corpus& corpus, const std::string& dir);
/// Throws std::runtime_error naming the 0-based record index on bad input.
Corpus read_corpus(const std::string& dir);

}  // namespace tdit
