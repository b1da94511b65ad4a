#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include "asag/common.hpp"
#include "asag/points.hpp"
#include "asag/record_store.hpp"
#include "asag/records.hpp"

namespace asag {

/// The grader input tuple. `task_id` identifies the source record when
/// known; only the replay grader needs it.
struct GradingTask {
  std::string question;
  std::string reference_answer;
  Points max_points;
  std::string student_answer;
  std::string task_id;
};

inline GradingTask task_from(const GradingRecord& r) {
  return GradingTask{r.question, r.reference_answer, r.max_points, r.student_answer, r.record_id};
}

struct GradeResult {
  Points points;
  Points raw_points;
  bool clamped = false;

  bool operator==(const GradeResult&) const = default;
};

/// Clamps a grader's raw output into [0, max_points].
inline GradeResult clamp_grade(Points raw, Points max_points) {
  Points p = std::clamp(raw, Points{}, max_points);
  return GradeResult{p, raw, p != raw};
}

/// The grader contract. Implementations must be callable from several
/// threads at once.
class Grader {
 public:
  virtual ~Grader() = default;
  virtual GradeResult grade(const GradingTask& task) const = 0;
  virtual std::string name() const = 0;
};

namespace detail {

inline std::set<std::string> token_set(std::string_view text) {
  std::set<std::string> tokens;
  std::string current;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (c < 0x80 && std::isspace(c)) {
      if (!current.empty()) tokens.insert(std::move(current));
      current.clear();
    } else if (c < 0x80 && std::ispunct(c)) {
      continue;
    } else {
      current += static_cast<char>(c < 0x80 ? std::tolower(c) : c);
    }
  }
  if (!current.empty()) tokens.insert(std::move(current));
  return tokens;
}

}  // namespace detail

/// Jaccard coefficient of the lowercased, punctuation-stripped token sets.
inline double baseline_similarity(std::string_view a, std::string_view b) {
  const auto ta = detail::token_set(a);
  const auto tb = detail::token_set(b);
  if (ta.empty() || tb.empty()) return 0.0;
  std::size_t common = 0;
  for (const auto& t : ta) common += tb.count(t);
  const std::size_t uni = ta.size() + tb.size() - common;
  return static_cast<double>(common) / static_cast<double>(uni);
}

/// similarity(A, A_ref) * max_points, rounded to the nearest half point
/// (ties away from zero), then clamped.
inline GradeResult baseline_grade(const GradingTask& task) {
  if (task.max_points.units() <= 0) throw Error(ErrorCode::NonPositiveMaxPoints, "task max_points must be > 0");
  const double sim = baseline_similarity(task.student_answer, task.reference_answer);
  const double halves = std::round(sim * task.max_points.value() * 2.0);
  return clamp_grade(Points::from_double(halves / 2.0), task.max_points);
}

class BaselineGrader final : public Grader {
 public:
  GradeResult grade(const GradingTask& task) const override { return baseline_grade(task); }
  std::string name() const override { return "baseline"; }
};

/// Replays previously recorded grades keyed by record_id.
class ReplayGrader final : public Grader {
 public:
  ReplayGrader() = default;
  explicit ReplayGrader(std::unordered_map<std::string, Points> grades) : grades_(std::move(grades)) {}

  /// Loads JSONL lines of {"record_id": ..., "points": ...}.
  static ReplayGrader from_file(const std::filesystem::path& path) {
    std::unordered_map<std::string, Points> grades;
    for (const auto& jl : parse_jsonl(read_file(path))) {
      if (!jl.value || !jl.value->is_object() || !jl.value->contains("record_id") || !jl.value->contains("points")) {
        throw Error(ErrorCode::MalformedRow, path.string() + ": line " + std::to_string(jl.line));
      }
      grades[(*jl.value)["record_id"].get<std::string>()] = (*jl.value)["points"].get<Points>();
    }
    return ReplayGrader(std::move(grades));
  }

  GradeResult grade(const GradingTask& task) const override {
    auto it = grades_.find(task.task_id);
    if (it == grades_.end()) throw Error(ErrorCode::MissingReplayEntry, "no replay grade for '" + task.task_id + "'");
    return clamp_grade(it->second, task.max_points);
  }

  std::string name() const override { return "replay"; }

  std::size_t size() const { return grades_.size(); }

 private:
  std::unordered_map<std::string, Points> grades_;
};

struct BatchFailure {
  std::size_t index = 0;
  ErrorCode code = ErrorCode::GraderUnavailable;
  std::string message;
};

struct BatchOutcome {
  std::vector<std::optional<GradeResult>> results;  // same order as the input
  std::vector<BatchFailure> failures;                // ordered by index
};

struct BatchOptions {
  unsigned threads = 1;
  // Called with (completed, total) after each task; may run on a worker thread.
  std::function<void(std::size_t, std::size_t)> progress;
};

/// Grades every task, recording per-task failures instead of aborting.
inline BatchOutcome batch_grade(std::span<const GradingTask> tasks, const Grader& grader,
                                const BatchOptions& options = {}) {
  BatchOutcome out;
  out.results.resize(tasks.size());
  std::vector<std::optional<BatchFailure>> failures(tasks.size());
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;

  auto work = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        out.results[i] = grader.grade(tasks[i]);
      } catch (const Error& e) {
        failures[i] = BatchFailure{i, e.code(), e.what()};
      } catch (const std::exception& e) {
        failures[i] = BatchFailure{i, ErrorCode::GraderUnavailable, e.what()};
      }
      const std::size_t completed = ++done;
      if (options.progress) {
        std::lock_guard lock(progress_mutex);
        options.progress(completed, tasks.size());
      }
    }
  };

  const unsigned threads = std::max(1u, std::min<unsigned>(options.threads, static_cast<unsigned>(tasks.size())));
  if (threads <= 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(work);
  }
  for (auto& f : failures) {
    if (f) out.failures.push_back(std::move(*f));
  }
  return out;
}

}  // namespace asag
