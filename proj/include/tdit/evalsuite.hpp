#pragma once

// Metrics on generated videos (phase-matched timing accuracy, frame-difference
// cut detection) and randomized verification of the event-binding properties
// of the temporal positional bias:
//   (i)   a frame inside an event has its largest bias on that event,
//   (ii)  along an event, the bias on that event peaks at the frame nearest
//         the event midpoint and falls off monotonically on both sides,
//   (iii) at a boundary between two events, both get equal bias.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tdit/conditioning.hpp"
#include "tdit/diffusion.hpp"
#include "tdit/synthdata.hpp"

namespace tdit {

constexpr double kDefaultCutThreshold = 0.3;

/// Mean absolute pixel change between frames k-1 and k of a [T, H, W] video.
double mean_abs_frame_diff(const Tensor& video, std::size_t k);

/// Frame indices k where the change from k-1 exceeds tau; runs of
/// consecutive detections are merged into their first frame.
std::vector<std::size_t> detect_cuts(const Tensor& video, double tau = kDefaultCutThreshold);

/// Pattern id of each frame: argmin over ids of the L2 distance to the id's
/// frame at the scheduled phase. Frames after an odd number of detected cuts
/// are palette-inverted before matching.
std::vector<std::size_t> classify_frames(const Tensor& video, const EventScript& script,
                                         const PatternLibrary& lib,
                                         double tau = kDefaultCutThreshold);

/// Fraction of frames whose classified id equals the scheduled event's id.
double timing_accuracy(const Tensor& video, const EventScript& script, const PatternLibrary& lib,
                       double tau = kDefaultCutThreshold);

/// Largest consecutive-frame mean absolute change over `samples` zero-cut
/// renders of scripts drawn from `cfg` (the library's smoothness constant).
double measure_smoothness(const CorpusConfig& cfg, std::size_t samples, std::uint64_t seed);
/// Smallest change across a cut over `samples` one-cut renders.
double measure_min_cut_change(const CorpusConfig& cfg, std::size_t samples, std::uint64_t seed);
/// Mean timing accuracy of uniform-noise videos against random scripts.
double measure_chance_level(const CorpusConfig& cfg, std::size_t trials, std::uint64_t seed);

/// Probe vectors for the property checks (q = k = probe).
enum class ProbeKind {
  kGaussian,  ///< i.i.d. N(0, 1) entries
  kFlat,      ///< equal energy in every rotation pair: the mean bias curve
};

std::vector<double> make_probe(ProbeKind kind, std::size_t dim, Rng& rng);

/// Outcome of one property over all trials; counterexamples are capped.
struct PropertyResult {
  std::size_t checks = 0;
  std::size_t failures = 0;
  std::vector<nlohmann::json> counterexamples;

  bool passed() const { return failures == 0; }
  void merge(const PropertyResult& other, std::size_t cap);
};

struct PropertyResults {
  PropertyResult argmax;      ///< (i)
  PropertyResult unimodal;    ///< (ii)
  PropertyResult boundary;    ///< (iii)

  bool passed() const { return argmax.passed() && unimodal.passed() && boundary.passed(); }
};

struct PropertyCheckOptions {
  double boundary_tol = 1e-9;
  std::size_t max_counterexamples = 16;
};

/// Checks (i)-(iii) for one script and probe on the bias map at the script's
/// frame timestamps. (iii) is evaluated at the exact boundary times.
/// Single-event scripts pass trivially.
PropertyResults check_bias_properties(const EventScript& script, double rescale_length,
                                      ConditioningMode mode, std::span<const double> probe,
                                      const RotaryEncoder& enc,
                                      const PropertyCheckOptions& opts = {});

/// The same checks on negated rotation-position distance, the quantity the
/// bias is meant to track.
PropertyResults check_distance_properties(const EventScript& script, double rescale_length,
                                          ConditioningMode mode,
                                          const PropertyCheckOptions& opts = {});

struct PropertySuiteConfig {
  ConditioningMode mode = ConditioningMode::kReRoPE;
  std::size_t trials = 1000;
  std::vector<double> rescale_lengths{4.0, 8.0, 16.0};
  std::vector<int> dims{32, 64};
  ProbeKind probe = ProbeKind::kGaussian;
  std::size_t min_events = 2;
  std::size_t max_events = 4;
  double max_length_ratio = 10.0;  ///< longest / shortest event in a script
  double min_event_length = 0.5;
  double fps = 8.0;
  std::uint64_t seed = 0;
  PropertyCheckOptions check;
};

/// Script whose adjacent event lengths are drawn log-uniformly so that the
/// longest/shortest ratio lies in [1, max_ratio]; one random event is forced
/// to the full ratio when max_ratio > 1.
EventScript random_property_script(Rng& rng, const PropertySuiteConfig& cfg);

struct PropertyReport {
  PropertySuiteConfig config;
  PropertyResults bias;      ///< on probe biases
  PropertyResults distance;  ///< on rotation-position distance
  /// VanillaRoPE only: first frame violating (i) and first boundary
  /// violating (iii) found by a search over scripts (null if none).
  nlohmann::json vanilla_violation;
  double seconds = 0.0;

  bool passed() const { return bias.passed(); }
};

/// Runs `trials` random (script, L, d, probe) combinations. Trial i draws
/// from Rng(seed).split("properties").split(i).
PropertyReport verify_properties(const PropertySuiteConfig& cfg);

/// For a VanillaRoPE bias map: first (frame, wrong event) pair violating (i)
/// and first boundary violating (iii), or null entries.
nlohmann::json find_vanilla_violation(const EventScript& script, std::span<const double> probe,
                                      const RotaryEncoder& enc, double boundary_tol = 1e-9);

/// Mean over events of bias(midpoint frame) / bias(event boundary) for event
/// n's own column under ReRoPE; boundaries are evaluated at the exact times.
double concentration_ratio(const EventScript& script, double rescale_length,
                           std::span<const double> probe, const RotaryEncoder& enc);

/// Writes a bias map as CSV or PGM ("csv" | "pgm").
void emit_heatmap(const Tensor& map, const std::string& path, const std::string& format);

nlohmann::json to_json(const PropertyResult& r);
nlohmann::json to_json(const PropertyResults& r);
nlohmann::json to_json(const PropertyReport& r);

/// Evaluation of a trained model on a corpus.
struct EvalReport {
  double timing_accuracy = 0.0;
  double timing_accuracy_no_cuts = 0.0;
  double mean_cuts_per_video = 0.0;             ///< cut conditioning active
  double mean_cuts_per_video_no_cuts = 0.0;     ///< --no-cuts sampling
  double zero_cut_fraction_no_cuts = 0.0;       ///< videos with no detected cut
  std::vector<int> cut_timing_errors;           ///< frames, per scripted cut; INT_MAX if missed
  double cut_hit_fraction = 0.0;                ///< |error| <= 1 frame
  std::size_t videos = 0;
  std::size_t cut_videos = 0;
  ConditioningMode mode = ConditioningMode::kReRoPE;
  double rescale_length = 8.0;
  std::uint64_t sample_seed = 0;
  std::uint64_t property_seed = 0;
  PropertyResults properties;
};

nlohmann::json to_json(const EvalReport& r);

/// Signed frame offset from the scripted cut frame to the nearest detection,
/// or nullopt if nothing was detected.
std::optional<int> cut_timing_error(const std::vector<std::size_t>& detections,
                                    const EventScript& script, std::size_t cut_index);

struct EvalOptions {
  SampleConfig sample;
  std::uint64_t property_seed = 0;
  std::size_t property_trials = 200;
  double tau = kDefaultCutThreshold;
  /// Called after each sampled video with (index, total).
  std::function<void(std::size_t, std::size_t)> progress;
};

/// Samples every corpus script twice (cuts active, then --no-cuts) and
/// scores the outputs; also runs the property suite for the model's mode.
EvalReport evaluate_model(const ToyDiT& model, const Corpus& corpus, const EvalOptions& opts);

}  // namespace tdit
