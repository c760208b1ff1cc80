#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace tdit {

/// An event description bound to [t_start, t_end] seconds. Tokens are
/// vocabulary ids standing in for caption text.
struct TemporalCaption {
  std::vector<int> tokens;
  double t_start = 0.0;
  double t_end = 0.0;

  double midpoint() const { return 0.5 * (t_start + t_end); }
  double length() const { return t_end - t_start; }
  bool operator==(const TemporalCaption&) const = default;
};

struct SceneCut {
  double t_cut = 0.0;
  bool operator==(const SceneCut&) const = default;
};

/// Timeline of captions and cuts. Only `validate_script` produces values that
/// satisfy the invariants (events tile [0, duration], cuts strictly inside).
struct EventScript {
  std::vector<int> global_tokens;
  std::vector<TemporalCaption> events;
  std::vector<SceneCut> cuts;
  double duration = 0.0;
  double fps = 1.0;

  std::size_t num_frames() const;
  bool operator==(const EventScript&) const = default;
};

enum class ScriptErrorKind {
  kEmptyEvents,
  kTooManyEvents,
  kEmptyTokens,
  kReversedInterval,
  kGap,
  kOverlap,
  kCoverage,
  kCutOutOfRange,
  kCutsUnsorted,
  kBadDuration,
  kBadFps,
  kBadToken,
};

const char* to_string(ScriptErrorKind kind);

class ScriptError : public std::invalid_argument {
 public:
  ScriptError(ScriptErrorKind kind, const std::string& detail)
      : std::invalid_argument(std::string(to_string(kind)) + ": " + detail), kind_(kind) {}
  ScriptErrorKind kind() const { return kind_; }

 private:
  ScriptErrorKind kind_;
};

struct ScriptLimits {
  std::size_t max_events = 16;
  int vocab_size = 0;  ///< 0 disables the token-range check
};

/// Checks every invariant and returns the script with boundaries snapped to be
/// exactly contiguous. Throws ScriptError with a distinct kind per violation.
EventScript validate_script(const EventScript& raw, const ScriptLimits& limits = {});

/// 0-based index n with t in [t_start_n, t_end_n). Interior boundaries belong
/// to the later event; t == duration belongs to the last event.
std::size_t locate_event(double t, const EventScript& script);

/// Piecewise-linear timestamp map stretching every event to length L:
/// t_start_n -> n L and t_end_n -> (n + 1) L with 0-based n.
class RescaleMap {
 public:
  RescaleMap(const EventScript& script, double rescale_length);

  double operator()(double t) const;
  double rescale_length() const { return length_; }
  std::size_t num_events() const { return starts_.size(); }
  double midpoint(std::size_t n) const { return (static_cast<double>(n) + 0.5) * length_; }

 private:
  std::vector<double> starts_;
  std::vector<double> ends_;
  double duration_;
  double length_;
};

double rescale_timestamp(double t, const EventScript& script, double rescale_length);

/// Rescaled midpoints (n + 1/2) L for every event.
std::vector<double> event_midpoint_positions(const EventScript& script, double rescale_length);

/// k / fps for k = 0 .. round(duration * fps) - 1.
std::vector<double> frame_timestamps(const EventScript& script);

/// JSON document with exactly the fields duration, fps, global, events, cuts.
EventScript script_from_json(const nlohmann::json& j);
nlohmann::json script_to_json(const EventScript& script);
EventScript load_script(const std::string& path, const ScriptLimits& limits = {});
void save_script(const EventScript& script, const std::string& path);

}  // namespace tdit
