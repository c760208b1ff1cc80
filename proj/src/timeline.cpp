#include "tdit/timeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace tdit {

const char* to_string(ScriptErrorKind kind) {
  switch (kind) {
    case ScriptErrorKind::kEmptyEvents: return "empty events";
    case ScriptErrorKind::kTooManyEvents: return "too many events";
    case ScriptErrorKind::kEmptyTokens: return "empty token sequence";
    case ScriptErrorKind::kReversedInterval: return "reversed interval";
    case ScriptErrorKind::kGap: return "gap between events";
    case ScriptErrorKind::kOverlap: return "overlapping events";
    case ScriptErrorKind::kCoverage: return "events do not cover the video";
    case ScriptErrorKind::kCutOutOfRange: return "cut outside range";
    case ScriptErrorKind::kCutsUnsorted: return "cuts not sorted";
    case ScriptErrorKind::kBadDuration: return "invalid duration";
    case ScriptErrorKind::kBadFps: return "invalid fps";
    case ScriptErrorKind::kBadToken: return "token id out of range";
  }
  return "unknown";
}

std::size_t EventScript::num_frames() const {
  return static_cast<std::size_t>(std::llround(duration * fps));
}

namespace {

std::string fmt_interval(std::size_t n, const TemporalCaption& e) {
  std::ostringstream os;
  os << "event " << n << " [" << e.t_start << ", " << e.t_end << "]";
  return os.str();
}

bool close(double a, double b, double scale) {
  return std::abs(a - b) <= 1e-12 * std::max(1.0, scale);
}

void check_tokens(const std::vector<int>& tokens, const ScriptLimits& limits,
                  const std::string& where) {
  for (int tok : tokens)
    if (tok < 0 || (limits.vocab_size > 0 && tok >= limits.vocab_size))
      throw ScriptError(ScriptErrorKind::kBadToken, where + " has token " + std::to_string(tok));
}

}  // namespace

EventScript validate_script(const EventScript& raw, const ScriptLimits& limits) {
  EventScript s = raw;
  if (!(std::isfinite(s.duration) && s.duration > 0.0))
    throw ScriptError(ScriptErrorKind::kBadDuration, std::to_string(s.duration));
  if (!(std::isfinite(s.fps) && s.fps > 0.0))
    throw ScriptError(ScriptErrorKind::kBadFps, std::to_string(s.fps));
  if (s.events.empty()) throw ScriptError(ScriptErrorKind::kEmptyEvents, "no events");
  if (s.events.size() > limits.max_events)
    throw ScriptError(ScriptErrorKind::kTooManyEvents,
                      std::to_string(s.events.size()) + " > " + std::to_string(limits.max_events));
  check_tokens(s.global_tokens, limits, "global caption");

  for (std::size_t n = 0; n < s.events.size(); ++n) {
    const auto& e = s.events[n];
    if (e.tokens.empty()) throw ScriptError(ScriptErrorKind::kEmptyTokens, fmt_interval(n, e));
    check_tokens(e.tokens, limits, fmt_interval(n, e));
    if (!(std::isfinite(e.t_start) && std::isfinite(e.t_end) && e.t_start < e.t_end))
      throw ScriptError(ScriptErrorKind::kReversedInterval, fmt_interval(n, e));
  }
  if (!close(s.events.front().t_start, 0.0, s.duration))
    throw ScriptError(ScriptErrorKind::kCoverage,
                      "first event starts at " + std::to_string(s.events.front().t_start));
  s.events.front().t_start = 0.0;
  for (std::size_t n = 0; n + 1 < s.events.size(); ++n) {
    auto& cur = s.events[n];
    auto& next = s.events[n + 1];
    if (close(cur.t_end, next.t_start, s.duration)) {
      next.t_start = cur.t_end;
      continue;
    }
    if (cur.t_end < next.t_start)
      throw ScriptError(ScriptErrorKind::kGap, fmt_interval(n, cur) + " and " +
                                                   fmt_interval(n + 1, next));
    throw ScriptError(ScriptErrorKind::kOverlap,
                      fmt_interval(n, cur) + " and " + fmt_interval(n + 1, next));
  }
  if (!close(s.events.back().t_end, s.duration, s.duration))
    throw ScriptError(ScriptErrorKind::kCoverage, "last event ends at " +
                                                      std::to_string(s.events.back().t_end) +
                                                      ", duration is " +
                                                      std::to_string(s.duration));
  s.events.back().t_end = s.duration;
  for (std::size_t n = 0; n < s.events.size(); ++n)
    if (!(s.events[n].t_start < s.events[n].t_end))
      throw ScriptError(ScriptErrorKind::kReversedInterval, fmt_interval(n, s.events[n]));

  for (std::size_t c = 0; c < s.cuts.size(); ++c) {
    const double t = s.cuts[c].t_cut;
    if (!(std::isfinite(t) && t > 0.0 && t < s.duration))
      throw ScriptError(ScriptErrorKind::kCutOutOfRange,
                        "cut " + std::to_string(c) + " at " + std::to_string(t));
    if (c > 0 && !(s.cuts[c - 1].t_cut < t))
      throw ScriptError(ScriptErrorKind::kCutsUnsorted, "cut " + std::to_string(c));
  }
  return s;
}

std::size_t locate_event(double t, const EventScript& script) {
  if (script.events.empty()) throw std::invalid_argument("locate_event: script has no events");
  if (!(t >= 0.0 && t <= script.duration))
    throw std::out_of_range("locate_event: t=" + std::to_string(t) + " outside [0, " +
                            std::to_string(script.duration) + "]");
  // Last event whose start is <= t.
  auto it = std::upper_bound(script.events.begin(), script.events.end(), t,
                             [](double v, const TemporalCaption& e) { return v < e.t_start; });
  return static_cast<std::size_t>(std::distance(script.events.begin(), it)) - 1;
}

RescaleMap::RescaleMap(const EventScript& script, double rescale_length)
    : duration_(script.duration), length_(rescale_length) {
  if (!(rescale_length > 0.0)) throw std::invalid_argument("RescaleMap: L must be > 0");
  for (const auto& e : script.events) {
    starts_.push_back(e.t_start);
    ends_.push_back(e.t_end);
  }
}

double RescaleMap::operator()(double t) const {
  if (!(t >= 0.0 && t <= duration_))
    throw std::out_of_range("rescale_timestamp: t=" + std::to_string(t) + " outside [0, " +
                            std::to_string(duration_) + "]");
  auto it = std::upper_bound(starts_.begin(), starts_.end(), t);
  const auto n = static_cast<std::size_t>(std::distance(starts_.begin(), it)) - 1;
  return (t - starts_[n]) * length_ / (ends_[n] - starts_[n]) + static_cast<double>(n) * length_;
}

double rescale_timestamp(double t, const EventScript& script, double rescale_length) {
  return RescaleMap(script, rescale_length)(t);
}

std::vector<double> event_midpoint_positions(const EventScript& script, double rescale_length) {
  std::vector<double> mids(script.events.size());
  for (std::size_t n = 0; n < mids.size(); ++n)
    mids[n] = static_cast<double>(n) * rescale_length + rescale_length / 2.0;
  return mids;
}

std::vector<double> frame_timestamps(const EventScript& script) {
  if (!(script.fps > 0.0)) throw std::invalid_argument("frame_timestamps: fps must be > 0");
  std::vector<double> ts(script.num_frames());
  for (std::size_t k = 0; k < ts.size(); ++k) ts[k] = static_cast<double>(k) / script.fps;
  return ts;
}

// --- JSON -------------------------------------------------------------------

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> allowed,
                    const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw std::invalid_argument(where + ": unknown field \"" + it.key() + "\"");
  }
}

const nlohmann::json& field(const nlohmann::json& j, const char* name, const std::string& where) {
  auto it = j.find(name);
  if (it == j.end()) throw std::invalid_argument(where + ": missing field \"" + name + "\"");
  return *it;
}

std::vector<int> parse_tokens(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array()) throw std::invalid_argument(where + ": tokens must be an array");
  std::vector<int> out;
  for (const auto& v : j) {
    if (!v.is_number_integer()) throw std::invalid_argument(where + ": token ids must be integers");
    out.push_back(v.get<int>());
  }
  return out;
}

double parse_number(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number()) throw std::invalid_argument(where + ": expected a number");
  return j.get<double>();
}

}  // namespace

EventScript script_from_json(const nlohmann::json& j) {
  reject_unknown(j, {"duration", "fps", "global", "events", "cuts"}, "script");
  EventScript s;
  s.duration = parse_number(field(j, "duration", "script"), "script.duration");
  s.fps = parse_number(field(j, "fps", "script"), "script.fps");
  s.global_tokens = parse_tokens(field(j, "global", "script"), "script.global");
  const auto& events = field(j, "events", "script");
  if (!events.is_array()) throw std::invalid_argument("script.events: expected an array");
  for (std::size_t n = 0; n < events.size(); ++n) {
    const std::string where = "script.events[" + std::to_string(n) + "]";
    reject_unknown(events[n], {"tokens", "start", "end"}, where);
    TemporalCaption e;
    e.tokens = parse_tokens(field(events[n], "tokens", where), where + ".tokens");
    e.t_start = parse_number(field(events[n], "start", where), where + ".start");
    e.t_end = parse_number(field(events[n], "end", where), where + ".end");
    s.events.push_back(std::move(e));
  }
  const auto& cuts = field(j, "cuts", "script");
  if (!cuts.is_array()) throw std::invalid_argument("script.cuts: expected an array");
  for (std::size_t c = 0; c < cuts.size(); ++c)
    s.cuts.push_back({parse_number(cuts[c], "script.cuts[" + std::to_string(c) + "]")});
  return s;
}

nlohmann::json script_to_json(const EventScript& s) {
  nlohmann::json events = nlohmann::json::array();
  for (const auto& e : s.events)
    events.push_back({{"tokens", e.tokens}, {"start", e.t_start}, {"end", e.t_end}});
  nlohmann::json cuts = nlohmann::json::array();
  for (const auto& c : s.cuts) cuts.push_back(c.t_cut);
  return {{"duration", s.duration},
          {"fps", s.fps},
          {"global", s.global_tokens},
          {"events", events},
          {"cuts", cuts}};
}

EventScript load_script(const std::string& path, const ScriptLimits& limits) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open script file " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::parse_error& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  return validate_script(script_from_json(j), limits);
}

void save_script(const EventScript& script, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << script_to_json(script).dump(2) << '\n';
}

}  // namespace tdit
