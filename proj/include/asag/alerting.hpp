#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <tuple>
#include <variant>
#include <vector>

#include "asag/common.hpp"
#include "asag/metrics.hpp"
#include "asag/points.hpp"
#include "asag/record_store.hpp"

namespace asag {

struct AlertPolicy {
  double level1_threshold = 0.15;
  std::size_t level1_min_rows = 20;
  double level2_threshold = 0.40;
  bool emit_level1 = true;
  bool emit_level2 = true;

  void validate() const {
    if (!(level1_threshold > 0.0 && level1_threshold <= 1.0) || !(level2_threshold > 0.0 && level2_threshold <= 1.0)) {
      throw Error(ErrorCode::InvalidConfig, "alert thresholds must lie in (0, 1]");
    }
    if (level1_min_rows < 1) throw Error(ErrorCode::InvalidConfig, "level1_min_rows must be >= 1");
  }

  static AlertPolicy from_json(const Json& j) {
    AlertPolicy p;
    p.level1_threshold = j.value("level1_threshold", p.level1_threshold);
    p.level1_min_rows = j.value("level1_min_rows", p.level1_min_rows);
    p.level2_threshold = j.value("level2_threshold", p.level2_threshold);
    p.emit_level1 = j.value("emit_level1", p.emit_level1);
    p.emit_level2 = j.value("emit_level2", p.emit_level2);
    p.validate();
    return p;
  }

  Json to_json() const {
    return Json{{"level1_threshold", level1_threshold},
                {"level1_min_rows", level1_min_rows},
                {"level2_threshold", level2_threshold},
                {"emit_level1", emit_level1},
                {"emit_level2", emit_level2}};
  }
};

enum class AlertKind { grader_outlier, question_outlier };
enum class AlertState { open, under_review, resolved };
enum class Decision { confirmed, adjusted };

inline std::string_view to_string(AlertKind k) {
  return k == AlertKind::grader_outlier ? "grader_outlier" : "question_outlier";
}
inline std::string_view to_string(AlertState s) {
  switch (s) {
    case AlertState::open: return "open";
    case AlertState::under_review: return "under_review";
    case AlertState::resolved: return "resolved";
  }
  return "open";
}
inline std::string_view to_string(Decision d) { return d == Decision::confirmed ? "confirmed" : "adjusted"; }

inline AlertKind parse_alert_kind(std::string_view s) {
  if (s == "grader_outlier") return AlertKind::grader_outlier;
  if (s == "question_outlier") return AlertKind::question_outlier;
  throw Error(ErrorCode::InvalidArgument, "unknown alert kind '" + std::string(s) + "'");
}
inline AlertState parse_alert_state(std::string_view s) {
  if (s == "open") return AlertState::open;
  if (s == "under_review") return AlertState::under_review;
  if (s == "resolved") return AlertState::resolved;
  throw Error(ErrorCode::InvalidArgument, "unknown alert state '" + std::string(s) + "'");
}
inline Decision parse_decision(std::string_view s) {
  if (s == "confirmed") return Decision::confirmed;
  if (s == "adjusted") return Decision::adjusted;
  throw Error(ErrorCode::InvalidArgument, "unknown decision '" + std::string(s) + "'");
}

/// Level-1 evidence holds aggregates only; the per-row fields are filled
/// for question outliers alone.
struct Evidence {
  std::size_t n = 0;
  std::optional<double> mean_abs_dev;
  std::optional<double> abs_dev;
  double threshold = 0.0;
  Points max_points;
  std::optional<Points> official_points;
  std::optional<Points> model_points;
};

struct Resolution {
  Decision decision = Decision::confirmed;
  std::optional<Points> adjusted_points;
  std::string reviewer_id;
  std::string note;
  std::string timestamp;
};

struct Alert {
  std::string alert_id;
  AlertKind kind = AlertKind::grader_outlier;
  std::string subject;  // grader_id or record_id
  std::string batch_id;
  std::string course_id;
  Evidence evidence;
  AlertState state = AlertState::open;
  std::optional<std::string> claimed_by;
  std::optional<Resolution> resolution;
  std::uint64_t created_seq = 0;
  std::string created_at;
};

inline std::string make_alert_id(std::string_view batch_id, AlertKind kind, std::string_view subject) {
  std::string key(batch_id);
  key += '\x1f';
  key += to_string(kind);
  key += '\x1f';
  key += subject;
  return "al-" + hex64(fnv1a64(key));
}

inline Json to_json(const Evidence& e, AlertKind kind) {
  Json j = Json::object();
  j["n"] = e.n;
  if (kind == AlertKind::grader_outlier) {
    j["mean_abs_dev"] = e.mean_abs_dev.value_or(0.0);
  } else {
    j["abs_dev"] = e.abs_dev.value_or(0.0);
  }
  j["threshold"] = e.threshold;
  j["max_points"] = e.max_points;
  if (kind == AlertKind::question_outlier) {
    if (e.official_points) j["official_points"] = *e.official_points;
    if (e.model_points) j["model_points"] = *e.model_points;
  }
  return j;
}

inline Json to_json(const Resolution& r) {
  Json j = Json::object();
  j["decision"] = to_string(r.decision);
  if (r.adjusted_points) j["adjusted_points"] = *r.adjusted_points;
  j["reviewer_id"] = r.reviewer_id;
  j["note"] = r.note;
  j["timestamp"] = r.timestamp;
  return j;
}

inline Json to_json(const Alert& a) {
  Json j = Json::object();
  j["alert_id"] = a.alert_id;
  j["kind"] = to_string(a.kind);
  j["subject"] = a.subject;
  j["batch_id"] = a.batch_id;
  j["course_id"] = a.course_id;
  j["evidence"] = to_json(a.evidence, a.kind);
  j["state"] = to_string(a.state);
  if (a.claimed_by) j["claimed_by"] = *a.claimed_by;
  j["resolution"] = a.resolution ? to_json(*a.resolution) : Json(nullptr);
  j["created_seq"] = a.created_seq;
  j["created_at"] = a.created_at;
  return j;
}

inline Alert alert_from_json(const Json& j) {
  Alert a;
  a.alert_id = j.at("alert_id").get<std::string>();
  a.kind = parse_alert_kind(j.at("kind").get<std::string>());
  a.subject = j.at("subject").get<std::string>();
  a.batch_id = j.at("batch_id").get<std::string>();
  a.course_id = j.value("course_id", "");
  const Json& e = j.at("evidence");
  a.evidence.n = e.at("n").get<std::size_t>();
  if (e.contains("mean_abs_dev")) a.evidence.mean_abs_dev = e["mean_abs_dev"].get<double>();
  if (e.contains("abs_dev")) a.evidence.abs_dev = e["abs_dev"].get<double>();
  a.evidence.threshold = e.at("threshold").get<double>();
  a.evidence.max_points = e.at("max_points").get<Points>();
  if (e.contains("official_points")) a.evidence.official_points = e["official_points"].get<Points>();
  if (e.contains("model_points")) a.evidence.model_points = e["model_points"].get<Points>();
  a.state = parse_alert_state(j.value("state", "open"));
  if (j.contains("claimed_by")) a.claimed_by = j["claimed_by"].get<std::string>();
  if (j.contains("resolution") && !j["resolution"].is_null()) {
    const Json& r = j["resolution"];
    Resolution res;
    res.decision = parse_decision(r.at("decision").get<std::string>());
    if (r.contains("adjusted_points")) res.adjusted_points = r["adjusted_points"].get<Points>();
    res.reviewer_id = r.value("reviewer_id", "");
    res.note = r.value("note", "");
    res.timestamp = r.value("timestamp", "");
    a.resolution = res;
  }
  a.created_seq = j.value("created_seq", std::uint64_t{0});
  a.created_at = j.value("created_at", "");
  return a;
}

/// One row of a graded exam batch paired with its shadow model grade.
struct BatchRow {
  std::string record_id;
  std::string course_id;
  std::string grader_id;
  Points max_points;
  Points official_points;
  std::optional<Points> model_points;
};

/// Compares official and model grades of one batch.
///
/// Raises a grader_outlier alert per grader whose mean normalized absolute
/// deviation over at least level1_min_rows rows exceeds level1_threshold,
/// and a question_outlier alert per row whose normalized absolute deviation
/// exceeds level2_threshold. Pure: identical inputs give identical alerts.
inline std::vector<Alert> evaluate_batch(std::string_view batch_id, std::span<const BatchRow> rows,
                                         const AlertPolicy& policy) {
  policy.validate();
  struct GraderAgg {
    std::vector<double> devs;
    Points max_points;
    std::set<std::string> courses;
  };
  std::map<std::string, GraderAgg> graders;
  std::vector<Alert> out;
  for (const auto& r : rows) {
    if (!r.model_points) throw Error(ErrorCode::MissingModelGrade, "row " + r.record_id + " has no model grade");
    if (r.grader_id.empty()) throw Error(ErrorCode::MissingGraderId, "row " + r.record_id + " has no grader id");
    if (r.max_points.units() <= 0) throw Error(ErrorCode::NonPositiveMaxPoints, "row " + r.record_id);
    const double dev = static_cast<double>(std::llabs(r.official_points.units() - r.model_points->units())) /
                       static_cast<double>(r.max_points.units());
    auto& agg = graders[r.grader_id];
    agg.devs.push_back(dev);
    agg.max_points = std::max(agg.max_points, r.max_points);
    agg.courses.insert(r.course_id);

    if (policy.emit_level2 && dev > policy.level2_threshold) {
      Alert a;
      a.kind = AlertKind::question_outlier;
      a.subject = r.record_id;
      a.batch_id = batch_id;
      a.course_id = r.course_id;
      a.alert_id = make_alert_id(batch_id, a.kind, a.subject);
      a.evidence.n = 1;
      a.evidence.abs_dev = dev;
      a.evidence.threshold = policy.level2_threshold;
      a.evidence.max_points = r.max_points;
      a.evidence.official_points = r.official_points;
      a.evidence.model_points = r.model_points;
      out.push_back(std::move(a));
    }
  }
  if (policy.emit_level1) {
    for (const auto& [grader, agg] : graders) {
      if (agg.devs.size() < policy.level1_min_rows) continue;
      const double m = mean(agg.devs);
      if (!(m > policy.level1_threshold)) continue;
      Alert a;
      a.kind = AlertKind::grader_outlier;
      a.subject = grader;
      a.batch_id = batch_id;
      a.course_id = agg.courses.size() == 1 ? *agg.courses.begin() : "";
      a.alert_id = make_alert_id(batch_id, a.kind, a.subject);
      a.evidence.n = agg.devs.size();
      a.evidence.mean_abs_dev = m;
      a.evidence.threshold = policy.level1_threshold;
      a.evidence.max_points = agg.max_points;
      out.push_back(std::move(a));
    }
  }
  // Level-1 first, then rows, each ordered by subject.
  std::sort(out.begin(), out.end(), [](const Alert& a, const Alert& b) {
    return std::tie(a.kind, a.subject) < std::tie(b.kind, b.subject);
  });
  return out;
}

struct ClaimAction {
  std::optional<std::string> reviewer_id;
};

struct ResolveAction {
  Decision decision = Decision::confirmed;
  std::optional<Points> adjusted_points;
  std::string reviewer_id;
  std::string note;
};

inline std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[40];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

/// Applies a lifecycle action to a copy of `alert`. Legal moves are
/// open -> under_review (claim) and under_review -> resolved (resolve).
inline Alert apply_transition(Alert alert, const std::variant<ClaimAction, ResolveAction>& action,
                              const std::string& timestamp) {
  if (const auto* claim = std::get_if<ClaimAction>(&action)) {
    if (alert.state != AlertState::open) {
      throw Error(ErrorCode::IllegalTransition, "claim from state " + std::string(to_string(alert.state)));
    }
    alert.state = AlertState::under_review;
    alert.claimed_by = claim->reviewer_id;
    return alert;
  }
  const auto& resolve = std::get<ResolveAction>(action);
  if (alert.state != AlertState::under_review) {
    throw Error(ErrorCode::IllegalTransition, "resolve from state " + std::string(to_string(alert.state)));
  }
  if (resolve.decision == Decision::adjusted) {
    if (!resolve.adjusted_points) {
      throw Error(ErrorCode::InvalidAdjustedPoints, "decision 'adjusted' requires adjusted_points");
    }
    if (resolve.adjusted_points->units() < 0 || *resolve.adjusted_points > alert.evidence.max_points) {
      throw Error(ErrorCode::InvalidAdjustedPoints, resolve.adjusted_points->to_string() + " outside [0, " +
                                                        alert.evidence.max_points.to_string() + "]");
    }
  } else if (resolve.adjusted_points) {
    throw Error(ErrorCode::InvalidAdjustedPoints, "adjusted_points only allowed with decision 'adjusted'");
  }
  alert.state = AlertState::resolved;
  alert.resolution = Resolution{resolve.decision, resolve.adjusted_points, resolve.reviewer_id, resolve.note, timestamp};
  return alert;
}

struct AlertFilter {
  std::optional<AlertState> state;
  std::optional<AlertKind> kind;
  std::optional<std::string> batch_id;
  std::optional<std::string> course_id;
};

struct AlertPage {
  std::vector<Alert> alerts;
  std::optional<std::string> next_cursor;
};

/// Persistent alert set backed by an append-only JSONL event log.
///
/// Transitions on one alert are serialized: two conflicting transitions
/// yield one success and one IllegalTransition.
class AlertStore {
 public:
  AlertStore() = default;

  explicit AlertStore(std::filesystem::path log_path) : log_path_(std::move(log_path)) {
    if (!std::filesystem::exists(log_path_)) {
      if (log_path_.has_parent_path()) std::filesystem::create_directories(log_path_.parent_path());
      return;
    }
    for (const auto& jl : parse_jsonl(read_file(log_path_))) {
      if (!jl.value) throw Error(ErrorCode::MalformedRow, log_path_.string() + ": line " + std::to_string(jl.line));
      const Json& ev = *jl.value;
      const std::string type = ev.at("event").get<std::string>();
      if (type == "raised") {
        Alert a = alert_from_json(ev.at("alert"));
        next_seq_ = std::max(next_seq_, a.created_seq + 1);
        order_.push_back(a.alert_id);
        alerts_.emplace(a.alert_id, std::move(a));
      } else {
        auto it = alerts_.find(ev.at("alert_id").get<std::string>());
        if (it == alerts_.end()) continue;
        it->second = alert_from_json(ev.at("alert"));
      }
    }
  }

  /// Stores alerts not seen before (keyed by alert_id); returns the ones added.
  std::vector<Alert> add(std::span<const Alert> alerts) {
    std::lock_guard lock(mutex_);
    std::vector<Alert> added;
    std::string lines;
    for (const auto& a : alerts) {
      if (alerts_.contains(a.alert_id)) continue;
      Alert stored = a;
      stored.state = AlertState::open;
      stored.resolution.reset();
      stored.claimed_by.reset();
      stored.created_seq = next_seq_++;
      stored.created_at = utc_timestamp();
      lines += Json{{"event", "raised"}, {"alert", to_json(stored)}}.dump() + "\n";
      order_.push_back(stored.alert_id);
      alerts_.emplace(stored.alert_id, stored);
      added.push_back(std::move(stored));
    }
    append(lines);
    return added;
  }

  Alert transition(const std::string& alert_id, const std::variant<ClaimAction, ResolveAction>& action) {
    std::lock_guard lock(mutex_);
    auto it = alerts_.find(alert_id);
    if (it == alerts_.end()) throw Error(ErrorCode::UnknownAlert, alert_id);
    Alert updated = apply_transition(it->second, action, utc_timestamp());
    const char* event = std::holds_alternative<ClaimAction>(action) ? "claimed" : "resolved";
    append(Json{{"event", event}, {"alert_id", alert_id}, {"alert", to_json(updated)}}.dump() + "\n");
    it->second = updated;
    return updated;
  }

  std::optional<Alert> get(const std::string& alert_id) const {
    std::lock_guard lock(mutex_);
    auto it = alerts_.find(alert_id);
    if (it == alerts_.end()) return std::nullopt;
    return it->second;
  }

  /// Alerts in creation order (created_seq, then alert_id).
  std::vector<Alert> all() const {
    std::lock_guard lock(mutex_);
    std::vector<Alert> out;
    for (const auto& id : order_) out.push_back(alerts_.at(id));
    std::sort(out.begin(), out.end(), [](const Alert& a, const Alert& b) {
      return std::tie(a.created_seq, a.alert_id) < std::tie(b.created_seq, b.alert_id);
    });
    return out;
  }

  /// Cursor is the created_seq of the last alert of the previous page.
  AlertPage list(const AlertFilter& filter, std::optional<std::string> cursor, std::size_t limit) const {
    std::uint64_t after = 0;
    bool has_cursor = false;
    if (cursor && !cursor->empty()) {
      try {
        after = std::stoull(*cursor);
        has_cursor = true;
      } catch (const std::exception&) {
        throw Error(ErrorCode::InvalidArgument, "bad cursor '" + *cursor + "'");
      }
    }
    AlertPage page;
    for (auto& a : all()) {
      if (has_cursor && a.created_seq <= after) continue;
      if (filter.state && a.state != *filter.state) continue;
      if (filter.kind && a.kind != *filter.kind) continue;
      if (filter.batch_id && a.batch_id != *filter.batch_id) continue;
      if (filter.course_id && a.course_id != *filter.course_id) continue;
      if (page.alerts.size() == limit) {
        page.next_cursor = std::to_string(page.alerts.back().created_seq);
        break;
      }
      page.alerts.push_back(std::move(a));
    }
    return page;
  }

 private:
  void append(const std::string& lines) {
    if (lines.empty() || log_path_.empty()) return;
    std::ofstream out(log_path_, std::ios::binary | std::ios::app);
    out << lines;
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "cannot append to " + log_path_.string());
  }

  std::filesystem::path log_path_;
  mutable std::mutex mutex_;
  std::map<std::string, Alert> alerts_;
  std::vector<std::string> order_;
  std::uint64_t next_seq_ = 1;
};

struct AlertStats {
  std::size_t raised = 0;
  std::size_t resolved = 0;
  std::size_t adjusted = 0;
  std::optional<double> adjustment_rate;  // undefined without resolutions
};

inline AlertStats alert_stats(std::span<const Alert> history) {
  AlertStats s;
  s.raised = history.size();
  for (const auto& a : history) {
    if (a.state != AlertState::resolved || !a.resolution) continue;
    ++s.resolved;
    if (a.resolution->decision == Decision::adjusted) ++s.adjusted;
  }
  if (s.resolved > 0) s.adjustment_rate = static_cast<double>(s.adjusted) / static_cast<double>(s.resolved);
  return s;
}

inline Json to_json(const AlertStats& s) {
  return Json{{"raised", s.raised},
              {"resolved", s.resolved},
              {"adjusted", s.adjusted},
              {"adjustment_rate", s.adjustment_rate ? Json(*s.adjustment_rate) : Json{{"undefined", true}}}};
}

}  // namespace asag
