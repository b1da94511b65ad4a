#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "asag/common.hpp"
#include "asag/points.hpp"

namespace asag {

/// One graded exam answer: the grader input tuple (question, reference
/// answer, max points, student answer) plus the official grade and ids.
///
/// The optional regrade/model fields carry a benchmark triple when present.
struct GradingRecord {
  std::string record_id;
  std::string course_id;
  std::string module_id;
  std::string question_id;
  std::string question;
  std::string reference_answer;
  Points max_points;
  std::string student_answer;
  Points official_points;
  std::string official_grader_id;

  std::optional<Points> regrader_points;
  std::optional<std::string> regrader_id;
  std::optional<Points> model_points;

  bool operator==(const GradingRecord&) const = default;
};

struct GradeTriple {
  std::string record_id;
  Points official_points;
  Points regrader_points;
  std::string regrader_id;
  Points model_points;

  bool operator==(const GradeTriple&) const = default;
};

struct NormalizedGrade {
  double value = 0.0;
};

/// Field names of the record file formats, in canonical output order.
inline constexpr std::array<std::string_view, 10> kRecordFields = {
    "record_id",      "course_id",       "module_id",          "question_id",
    "question",       "reference_answer", "max_points",        "student_answer",
    "official_points", "official_grader_id"};

inline constexpr std::array<std::string_view, 3> kTripleFields = {"regrader_points", "regrader_id",
                                                                  "model_points"};

struct FieldError {
  ErrorCode code;
  std::string field;
  std::string message;

  bool operator==(const FieldError&) const = default;
};

/// Either a typed record or the complete list of violated invariants.
using Validated = std::variant<GradingRecord, std::vector<FieldError>>;

inline NormalizedGrade normalize(Points points, Points max_points) {
  if (max_points.units() <= 0) {
    throw Error(ErrorCode::NonPositiveMaxPoints, "max_points must be > 0, got " + max_points.to_string());
  }
  if (points.units() < 0 || points > max_points) {
    throw Error(ErrorCode::PointsOutOfRange,
                points.to_string() + " outside [0, " + max_points.to_string() + "]");
  }
  return NormalizedGrade{static_cast<double>(points.units()) / static_cast<double>(max_points.units())};
}

namespace detail {

inline bool is_blank(const std::string& s) {
  return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

// A text field; numbers are accepted for id fields and rendered back as text.
inline std::optional<std::string> text_field(const Json& candidate, std::string_view name,
                                             std::vector<FieldError>& errors, bool required) {
  auto it = candidate.find(name);
  if (it == candidate.end() || it->is_null()) {
    if (required) errors.push_back({ErrorCode::MissingField, std::string(name), "field is absent"});
    return std::nullopt;
  }
  if (it->is_string()) return it->get<std::string>();
  if (it->is_number_integer()) return it->dump();
  errors.push_back({ErrorCode::InvalidFieldType, std::string(name), "expected text"});
  return std::nullopt;
}

inline std::optional<Points> points_field(const Json& candidate, std::string_view name,
                                          std::vector<FieldError>& errors, bool required) {
  auto it = candidate.find(name);
  if (it == candidate.end() || it->is_null() || (it->is_string() && is_blank(it->get<std::string>()))) {
    if (required) errors.push_back({ErrorCode::MissingField, std::string(name), "field is absent"});
    return std::nullopt;
  }
  try {
    return it->get<Points>();
  } catch (const Error&) {
    errors.push_back({ErrorCode::InvalidFieldType, std::string(name), "expected a decimal number"});
    return std::nullopt;
  }
}

}  // namespace detail

/// Validates a raw record (a JSON object whose values are text or numbers).
/// Every violated invariant is reported. `exists` checks record_id uniqueness
/// against an existing store when provided.
inline Validated validate_record(const Json& candidate,
                                 const std::function<bool(const std::string&)>& exists = {}) {
  std::vector<FieldError> errors;
  if (!candidate.is_object()) {
    errors.push_back({ErrorCode::InvalidFieldType, "", "record must be an object"});
    return errors;
  }
  GradingRecord r;
  auto req_text = [&](std::string_view name, std::string& out, bool allow_blank) {
    if (auto v = detail::text_field(candidate, name, errors, true)) {
      if (!allow_blank && detail::is_blank(*v)) {
        errors.push_back({ErrorCode::MissingField, std::string(name), "field is empty"});
      }
      out = std::move(*v);
    }
  };
  req_text("record_id", r.record_id, false);
  req_text("course_id", r.course_id, false);
  req_text("module_id", r.module_id, false);
  req_text("question_id", r.question_id, false);
  req_text("question", r.question, false);
  req_text("reference_answer", r.reference_answer, false);
  req_text("student_answer", r.student_answer, true);
  req_text("official_grader_id", r.official_grader_id, false);

  auto max_points = detail::points_field(candidate, "max_points", errors, true);
  auto official = detail::points_field(candidate, "official_points", errors, true);
  r.regrader_points = detail::points_field(candidate, "regrader_points", errors, false);
  r.model_points = detail::points_field(candidate, "model_points", errors, false);
  r.regrader_id = detail::text_field(candidate, "regrader_id", errors, false);
  if (r.regrader_id && detail::is_blank(*r.regrader_id)) r.regrader_id.reset();

  if (max_points) {
    r.max_points = *max_points;
    if (max_points->units() <= 0) {
      errors.push_back({ErrorCode::NonPositiveMaxPoints, "max_points",
                        "max_points must be > 0, got " + max_points->to_string()});
    }
  }
  auto check_range = [&](std::string_view name, const std::optional<Points>& p) {
    if (!p || !max_points || max_points->units() <= 0) return;
    if (p->units() < 0 || *p > *max_points) {
      errors.push_back({ErrorCode::PointsOutOfRange, std::string(name),
                        p->to_string() + " outside [0, " + max_points->to_string() + "]"});
    }
  };
  if (official) r.official_points = *official;
  check_range("official_points", official);
  check_range("regrader_points", r.regrader_points);
  check_range("model_points", r.model_points);

  if (r.regrader_points.has_value() != r.regrader_id.has_value()) {
    errors.push_back({ErrorCode::MissingField, r.regrader_id ? "regrader_points" : "regrader_id",
                      "regrader_points and regrader_id must be given together"});
  }
  if (r.regrader_id && !r.official_grader_id.empty() && *r.regrader_id == r.official_grader_id) {
    errors.push_back({ErrorCode::RegraderIsOfficialGrader, "regrader_id",
                      "regrader must differ from the official grader"});
  }
  if (exists && !r.record_id.empty() && exists(r.record_id)) {
    errors.push_back({ErrorCode::DuplicateRecordId, "record_id", "record_id already stored: " + r.record_id});
  }
  if (!errors.empty()) return errors;
  return r;
}

inline Json to_json(const GradingRecord& r) {
  Json j = Json::object();
  j["record_id"] = r.record_id;
  j["course_id"] = r.course_id;
  j["module_id"] = r.module_id;
  j["question_id"] = r.question_id;
  j["question"] = r.question;
  j["reference_answer"] = r.reference_answer;
  j["max_points"] = r.max_points;
  j["student_answer"] = r.student_answer;
  j["official_points"] = r.official_points;
  j["official_grader_id"] = r.official_grader_id;
  if (r.regrader_points) j["regrader_points"] = *r.regrader_points;
  if (r.regrader_id) j["regrader_id"] = *r.regrader_id;
  if (r.model_points) j["model_points"] = *r.model_points;
  return j;
}

inline Json to_json(const FieldError& e) {
  return Json{{"code", to_string(e.code)}, {"field", e.field}, {"message", e.message}};
}

/// The benchmark triple stored on a record, if all three grades are present.
inline std::optional<GradeTriple> triple_of(const GradingRecord& r) {
  if (!r.regrader_points || !r.regrader_id || !r.model_points) return std::nullopt;
  return GradeTriple{r.record_id, r.official_points, *r.regrader_points, *r.regrader_id, *r.model_points};
}

inline Json to_json(const GradeTriple& t) {
  Json j = Json::object();
  j["record_id"] = t.record_id;
  j["official_points"] = t.official_points;
  j["regrader_points"] = t.regrader_points;
  j["regrader_id"] = t.regrader_id;
  j["model_points"] = t.model_points;
  return j;
}

/// Parses a triple line; official_points may be omitted and is then taken
/// from the joined record.
inline GradeTriple triple_from_json(const Json& j, const GradingRecord* record = nullptr) {
  std::vector<FieldError> errors;
  GradeTriple t;
  if (auto id = detail::text_field(j, "record_id", errors, true)) t.record_id = *id;
  auto official = detail::points_field(j, "official_points", errors, record == nullptr);
  auto regrader = detail::points_field(j, "regrader_points", errors, true);
  auto model = detail::points_field(j, "model_points", errors, true);
  if (auto rid = detail::text_field(j, "regrader_id", errors, true)) t.regrader_id = *rid;
  if (!errors.empty()) throw Error(errors.front().code, errors.front().field + ": " + errors.front().message);
  t.official_points = official ? *official : record->official_points;
  t.regrader_points = *regrader;
  t.model_points = *model;
  return t;
}

/// Checks the GradeTriple invariants against the referenced record.
inline std::vector<FieldError> check_triple(const GradeTriple& t, const GradingRecord& r) {
  std::vector<FieldError> errors;
  auto in_range = [&](std::string_view name, Points p) {
    if (p.units() < 0 || p > r.max_points) {
      errors.push_back({ErrorCode::PointsOutOfRange, std::string(name),
                        p.to_string() + " outside [0, " + r.max_points.to_string() + "]"});
    }
  };
  in_range("official_points", t.official_points);
  in_range("regrader_points", t.regrader_points);
  in_range("model_points", t.model_points);
  if (t.regrader_id == r.official_grader_id) {
    errors.push_back({ErrorCode::RegraderIsOfficialGrader, "regrader_id", "regrader must differ from the official grader"});
  }
  return errors;
}

}  // namespace asag
