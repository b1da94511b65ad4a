#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "asag/common.hpp"
#include "asag/records.hpp"

namespace asag {

enum class Split { train, develop, test_unseen_questions, test_unseen_courses };

inline constexpr std::array<Split, 4> kAllSplits = {Split::train, Split::develop, Split::test_unseen_questions,
                                                    Split::test_unseen_courses};

inline std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::develop: return "develop";
    case Split::test_unseen_questions: return "test_unseen_questions";
    case Split::test_unseen_courses: return "test_unseen_courses";
  }
  return "train";
}

inline Split parse_split(std::string_view s) {
  for (Split v : kAllSplits) {
    if (to_string(v) == s) return v;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown split label '" + std::string(s) + "'");
}

struct SplitConfig {
  std::uint64_t seed = 42;
  double frac_train = 0.37;
  double frac_develop = 0.018;
  double frac_test_unseen_questions = 0.60;
  double frac_test_unseen_courses = 0.01;

  void validate() const {
    for (double f : {frac_train, frac_develop, frac_test_unseen_questions, frac_test_unseen_courses}) {
      if (!(f > 0.0)) throw Error(ErrorCode::InvalidConfig, "split fractions must be positive");
    }
    const double sum = frac_train + frac_develop + frac_test_unseen_questions + frac_test_unseen_courses;
    if (sum < 0.99 || sum > 1.01) {
      throw Error(ErrorCode::InvalidConfig, "split fractions sum to " + std::to_string(sum) + ", expected ~1");
    }
  }

  double fraction(Split s) const {
    switch (s) {
      case Split::train: return frac_train;
      case Split::develop: return frac_develop;
      case Split::test_unseen_questions: return frac_test_unseen_questions;
      case Split::test_unseen_courses: return frac_test_unseen_courses;
    }
    return 0.0;
  }

  Json to_json() const {
    return Json{{"seed", seed},
                {"frac_train", frac_train},
                {"frac_develop", frac_develop},
                {"frac_test_unseen_questions", frac_test_unseen_questions},
                {"frac_test_unseen_courses", frac_test_unseen_courses}};
  }

  std::string hash() const { return hex64(fnv1a64(to_json().dump())); }
};

struct SplitAssignment {
  std::map<std::string, Split> labels;  // record_id -> split, ordered by id
  std::uint64_t seed = 0;
  std::string config_hash;
  std::vector<std::string> warnings;

  std::size_t count(Split s) const {
    return static_cast<std::size_t>(
        std::count_if(labels.begin(), labels.end(), [s](const auto& kv) { return kv.second == s; }));
  }
};

/// One line per record: {"record_id": ..., "split": ...}, sorted by id.
inline std::string to_jsonl(const SplitAssignment& a) {
  std::string out;
  for (const auto& [id, split] : a.labels) {
    out += Json{{"record_id", id}, {"split", to_string(split)}}.dump();
    out += '\n';
  }
  return out;
}

namespace detail {

// Seeded sort key per id. Keys do not depend on which other ids exist, so
// dropping an id leaves the relative order of the rest unchanged.
inline std::uint64_t draw_key(std::uint64_t seed, std::string_view salt, std::string_view id) {
  return splitmix64(seed ^ splitmix64(fnv1a64(id, fnv1a64(salt))));
}

template <typename Weight>
std::vector<std::string> draw_order(std::uint64_t seed, std::string_view salt, const std::map<std::string, Weight>& ids) {
  std::vector<std::pair<std::uint64_t, std::string>> keyed;
  keyed.reserve(ids.size());
  for (const auto& kv : ids) keyed.emplace_back(draw_key(seed, salt, kv.first), kv.first);
  std::sort(keyed.begin(), keyed.end());
  std::vector<std::string> out;
  out.reserve(keyed.size());
  for (auto& kv : keyed) out.push_back(std::move(kv.second));
  return out;
}

// Take the next group while under target and taking it lands at least as
// close to the target as stopping.
inline bool should_take(std::size_t current, std::size_t weight, std::size_t target) {
  if (current >= target) return false;
  const std::size_t after = current + weight;
  const std::size_t under = target - current;
  const std::size_t over = after > target ? after - target : 0;
  return after <= target || over <= under;
}

inline std::size_t row_target(double frac, std::size_t n) {
  return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
}

}  // namespace detail

/// Partitions records into train / develop / unseen-question test /
/// unseen-course test.
///
/// Order: whole courses for the unseen-courses split first, then whole
/// question_ids from the remaining courses for the unseen-questions split,
/// then develop question_ids sampled per module from what is left. The
/// remainder is train. All targets are row counts.
inline SplitAssignment partition(std::span<const GradingRecord> store, const SplitConfig& config) {
  if (store.empty()) throw Error(ErrorCode::EmptyStore, "cannot partition an empty store");
  config.validate();

  SplitAssignment out;
  out.seed = config.seed;
  out.config_hash = config.hash();
  const std::size_t n = store.size();

  // (1) unseen courses
  std::map<std::string, std::size_t> course_rows;
  for (const auto& r : store) ++course_rows[r.course_id];
  std::set<std::string> unseen_courses;
  if (course_rows.size() < 2) {
    out.warnings.push_back("InsufficientCourses: " + std::to_string(course_rows.size()) +
                           " course(s); test_unseen_courses left empty");
  } else {
    const std::size_t target = detail::row_target(config.frac_test_unseen_courses, n);
    std::size_t taken = 0;
    for (const auto& course : detail::draw_order(config.seed, "course", course_rows)) {
      // Always leave at least one course for the other splits.
      if (unseen_courses.size() + 1 >= course_rows.size()) break;
      // Plain prefix rule: sizes of courses that are not taken never
      // influence the selection.
      if (taken >= target) break;
      unseen_courses.insert(course);
      taken += course_rows[course];
    }
  }

  // (2) unseen questions, drawn from rows outside the unseen courses
  std::map<std::string, std::size_t> question_rows;
  for (const auto& r : store) {
    if (!unseen_courses.contains(r.course_id)) ++question_rows[r.question_id];
  }
  std::set<std::string> unseen_questions;
  {
    const std::size_t target = detail::row_target(config.frac_test_unseen_questions, n);
    std::size_t taken = 0;
    for (const auto& q : detail::draw_order(config.seed, "question", question_rows)) {
      const std::size_t w = question_rows[q];
      if (!detail::should_take(taken, w, target)) {
        if (taken >= target) break;
        continue;
      }
      unseen_questions.insert(q);
      taken += w;
    }
  }

  // (3) develop: question_ids stratified by module over the remaining pool
  std::map<std::string, std::map<std::string, std::size_t>> pool;  // module -> question -> rows
  std::size_t pool_rows = 0;
  for (const auto& r : store) {
    if (unseen_courses.contains(r.course_id) || unseen_questions.contains(r.question_id)) continue;
    ++pool[r.module_id][r.question_id];
    ++pool_rows;
  }
  std::set<std::string> develop_questions;
  if (pool_rows > 0) {
    const std::size_t target = detail::row_target(config.frac_develop, n);
    struct Stratum {
      std::vector<std::string> order;
      const std::map<std::string, std::size_t>* rows;
      std::size_t next = 0;
      double quota = 0.0;
      std::size_t taken = 0;
    };
    std::vector<Stratum> strata;
    for (const auto& [module, questions] : pool) {
      std::size_t module_rows = 0;
      for (const auto& kv : questions) module_rows += kv.second;
      Stratum s;
      s.order = detail::draw_order(config.seed, "develop/" + module, questions);
      s.rows = &questions;
      s.quota = static_cast<double>(target) * static_cast<double>(module_rows) / static_cast<double>(pool_rows);
      strata.push_back(std::move(s));
    }
    std::size_t total = 0;
    for (auto& s : strata) {
      while (s.next < s.order.size()) {
        const std::size_t w = s.rows->at(s.order[s.next]);
        const double after = static_cast<double>(s.taken + w);
        if (after > s.quota && after - s.quota > s.quota - static_cast<double>(s.taken)) break;
        develop_questions.insert(s.order[s.next++]);
        s.taken += w;
        total += w;
      }
    }
    // Per-module rounding can leave the total short; top up from the module
    // furthest below its quota.
    while (total < target) {
      Stratum* best = nullptr;
      for (auto& s : strata) {
        if (s.next >= s.order.size()) continue;
        if (!best || s.quota - static_cast<double>(s.taken) > best->quota - static_cast<double>(best->taken)) {
          best = &s;
        }
      }
      if (!best) break;
      const std::size_t w = best->rows->at(best->order[best->next]);
      if (!detail::should_take(total, w, target)) break;
      develop_questions.insert(best->order[best->next++]);
      best->taken += w;
      total += w;
    }
  }

  // (4) label
  for (const auto& r : store) {
    Split s = Split::train;
    if (unseen_courses.contains(r.course_id)) {
      s = Split::test_unseen_courses;
    } else if (unseen_questions.contains(r.question_id)) {
      s = Split::test_unseen_questions;
    } else if (develop_questions.contains(r.question_id)) {
      s = Split::develop;
    }
    out.labels.emplace(r.record_id, s);
  }
  return out;
}

struct SplitStats {
  std::size_t records = 0;
  std::size_t courses = 0;
  std::size_t questions = 0;
  double fraction = 0.0;
};

struct Violation {
  std::string kind;  // course_leakage | question_leakage | unassigned
  std::string id;
  std::string detail;
};

struct AuditReport {
  std::vector<Violation> violations;
  std::map<Split, SplitStats> splits;
  std::size_t total = 0;
  std::uint64_t seed = 0;
  std::string config_hash;

  bool ok() const { return violations.empty(); }
};

/// Checks totality and both disjointness rules and reports per-split sizes.
inline AuditReport audit(const SplitAssignment& assignment, std::span<const GradingRecord> store) {
  std::map<std::string, const GradingRecord*> by_id;
  for (const auto& r : store) by_id.emplace(r.record_id, &r);
  for (const auto& kv : assignment.labels) {
    if (!by_id.contains(kv.first)) throw Error(ErrorCode::UnknownRecordId, kv.first);
  }

  AuditReport report;
  report.seed = assignment.seed;
  report.config_hash = assignment.config_hash;
  report.total = store.size();
  std::map<Split, std::set<std::string>> courses;
  std::map<Split, std::set<std::string>> questions;
  for (Split s : kAllSplits) report.splits[s] = {};

  for (const auto& r : store) {
    auto it = assignment.labels.find(r.record_id);
    if (it == assignment.labels.end()) {
      report.violations.push_back({"unassigned", r.record_id, "record has no split label"});
      continue;
    }
    ++report.splits[it->second].records;
    courses[it->second].insert(r.course_id);
    questions[it->second].insert(r.question_id);
  }
  for (Split s : kAllSplits) {
    auto& st = report.splits[s];
    st.courses = courses[s].size();
    st.questions = questions[s].size();
    st.fraction = report.total ? static_cast<double>(st.records) / static_cast<double>(report.total) : 0.0;
  }

  for (const auto& c : courses[Split::test_unseen_courses]) {
    std::string where;
    for (Split s : {Split::train, Split::develop, Split::test_unseen_questions}) {
      if (courses[s].contains(c)) where += (where.empty() ? "" : ",") + std::string(to_string(s));
    }
    if (!where.empty()) report.violations.push_back({"course_leakage", c, "unseen course also in " + where});
  }
  for (Split held_out : {Split::test_unseen_questions, Split::develop}) {
    for (const auto& q : questions[held_out]) {
      if (questions[Split::train].contains(q)) {
        report.violations.push_back(
            {"question_leakage", q, std::string(to_string(held_out)) + " question also in train"});
      }
    }
  }
  return report;
}

inline Json to_json(const AuditReport& report) {
  Json splits = Json::object();
  for (const auto& [s, st] : report.splits) {
    splits[std::string(to_string(s))] =
        Json{{"records", st.records}, {"courses", st.courses}, {"questions", st.questions}, {"fraction", st.fraction}};
  }
  Json violations = Json::array();
  for (const auto& v : report.violations) {
    violations.push_back(Json{{"kind", v.kind}, {"id", v.id}, {"detail", v.detail}});
  }
  return Json{{"total_records", report.total},
              {"seed", report.seed},
              {"config_hash", report.config_hash},
              {"splits", splits},
              {"violations", violations}};
}

}  // namespace asag
