#pragma once

#include <array>
#include <atomic>
#include <chrono>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "asag/asag.hpp"
#include "asag/cli.hpp"

namespace fixture {

using asag::GradingRecord;
using asag::Points;
namespace fs = std::filesystem;

/// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("asag-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = {
      "market",   "price",     "demand",   "supply",   "contract", "liability", "damage",  "consent",
      "leader",   "team",      "vision",   "change",   "culture",  "process",   "model",   "data",
      "feature",  "training",  "error",    "variance", "bias",     "cluster",   "network", "layer",
      "strategy", "customer",  "segment",  "brand",    "product",  "channel",   "budget",  "risk",
      "norm",     "attitude",  "group",    "identity", "trait",    "behavior",  "memory",  "learning",
      "law",      "court",     "claim",    "property", "duty",     "remedy",    "state",   "right"};
  return words;
}

inline std::string words(std::mt19937_64& rng, std::size_t n) {
  const auto& v = vocabulary();
  std::uniform_int_distribution<std::size_t> pick(0, v.size() - 1);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ' ';
    out += v[pick(rng)];
  }
  return out;
}

inline Points halves(double v, Points max) {
  const double clipped = std::clamp(v, 0.0, max.value());
  return Points::from_double(std::round(clipped * 2.0) / 2.0);
}

/// Synthetic store: `courses` courses of exactly 16 rows, questions with
/// 2 to 6 answers, ten modules, mixed max_points, and a regrade triple on
/// every row when `with_triples` is set.
inline std::vector<GradingRecord> synthetic_records(int courses = 100, std::uint64_t seed = 7,
                                                    bool with_triples = true) {
  std::mt19937_64 rng(seed);
  const std::array<int, 5> maxes = {2, 4, 6, 8, 10};
  std::vector<GradingRecord> out;
  for (int c = 0; c < courses; ++c) {
    char course[16];
    std::snprintf(course, sizeof course, "C%03d", c);
    int remaining = 16;
    int q = 0;
    while (remaining > 0) {
      int answers = std::uniform_int_distribution<int>(2, 6)(rng);
      if (remaining - answers == 1) ++answers;
      answers = std::min(answers, remaining);
      remaining -= answers;
      const std::string qid = std::string(course) + "-Q" + std::to_string(q++);
      const std::string question = "Explain " + words(rng, 3) + ".";
      const std::string reference = words(rng, 8);
      const Points max = Points::from_double(maxes[std::uniform_int_distribution<std::size_t>(0, 4)(rng)]);
      for (int a = 0; a < answers; ++a) {
        GradingRecord r;
        r.record_id = qid + "-A" + std::to_string(a);
        r.course_id = course;
        r.module_id = "M" + std::to_string(c % 10);
        r.question_id = qid;
        r.question = question;
        r.reference_answer = reference;
        r.max_points = max;
        const double quality = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        // Student answers reuse a share of the reference words.
        std::string answer;
        std::size_t pos = 0;
        while (pos < reference.size()) {
          std::size_t end = reference.find(' ', pos);
          if (end == std::string::npos) end = reference.size();
          if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) < quality) {
            if (!answer.empty()) answer += ' ';
            answer += reference.substr(pos, end - pos);
          }
          pos = end + 1;
        }
        if (!answer.empty()) answer += ' ';
        answer += words(rng, 2);
        r.student_answer = answer;
        std::normal_distribution<double> noise(0.0, 0.15 * max.value());
        r.official_points = halves(quality * max.value() + noise(rng), max);
        r.official_grader_id = "G" + std::to_string(c % 7);
        if (with_triples) {
          r.regrader_points = halves(r.official_points.value() + noise(rng) * 1.5, max);
          r.regrader_id = "R" + std::to_string(c % 5);
          r.model_points = halves(r.official_points.value() + noise(rng), max);
        }
        out.push_back(std::move(r));
      }
    }
  }
  return out;
}

struct CourseRow {
  const char* course;
  double rmse_hh;
  double rmse_hm;
};

/// Per-course RMSE values of the regrading benchmark, normalized scale.
inline constexpr std::array<CourseRow, 16> kCourseTable = {{
    {"Marketing II", 0.303, 0.297},
    {"Personal und Unternehmensführung", 0.328, 0.277},
    {"Diversity Management", 0.371, 0.330},
    {"Differentielle und Persönlichkeitspsychologie", 0.245, 0.231},
    {"Sozialpsychologie", 0.360, 0.243},
    {"Besonderes Schuldrecht I", 0.315, 0.282},
    {"Grundlagen des bürgerlichen Rechts I", 0.381, 0.330},
    {"Öffentliches Recht I", 0.214, 0.213},
    {"Schuldrecht I, Einführung", 0.294, 0.326},
    {"Leadership", 0.358, 0.223},
    {"Globale Unternehmen und Globalisierung", 0.532, 0.276},
    {"Artificial Intelligence", 0.5401, 0.259},
    {"Data Utilization", 0.506, 0.358},
    {"Data Science", 0.583, 0.282},
    {"Change Management und Organisationsentwicklung", 0.449, 0.301},
    {"Machine Learning", 0.557, 0.278},
}};

inline const std::set<std::string>& excluded_courses() {
  static const std::set<std::string> s = {"Globale Unternehmen und Globalisierung", "Artificial Intelligence",
                                          "Data Utilization", "Data Science",
                                          "Change Management und Organisationsentwicklung", "Machine Learning"};
  return s;
}

/// 16 courses x `rows_per_course` rows with max_points 1. Half the rows have
/// official 0 and the other half official 1; the regrader (model) is off by
/// exactly the course's rmse_hh (rmse_hm) on every row, so the per-course
/// RMSE equals the table value.
inline std::vector<GradingRecord> course_table_records(int rows_per_course = 100) {
  std::vector<GradingRecord> out;
  int c = 0;
  for (const auto& row : kCourseTable) {
    const Points r = Points::from_double(row.rmse_hh);
    const Points m = Points::from_double(row.rmse_hm);
    const Points one = Points::from_double(1);
    for (int i = 0; i < rows_per_course; ++i) {
      GradingRecord g;
      g.record_id = "T" + std::to_string(c) + "-" + std::to_string(i);
      g.course_id = row.course;
      g.module_id = "M" + std::to_string(c % 4);
      g.question_id = "T" + std::to_string(c) + "-Q" + std::to_string(i % 10);
      g.question = "Question " + std::to_string(i % 10);
      g.reference_answer = "reference";
      g.max_points = one;
      g.student_answer = "answer " + std::to_string(i);
      const bool low = i % 2 == 0;
      g.official_points = low ? Points{} : one;
      g.official_grader_id = "G" + std::to_string(c);
      g.regrader_points = low ? r : one - r;
      g.regrader_id = "R" + std::to_string(c);
      g.model_points = low ? m : one - m;
      out.push_back(std::move(g));
    }
    ++c;
  }
  return out;
}

inline std::vector<asag::JoinedTriple> joined(const std::vector<GradingRecord>& records) {
  std::vector<asag::JoinedTriple> out;
  for (const auto& r : records) {
    if (auto t = asag::triple_of(r)) out.push_back({*t, r.course_id, r.max_points});
  }
  return out;
}

inline void write_jsonl(const fs::path& path, const std::vector<GradingRecord>& records) {
  std::string text;
  for (const auto& r : records) text += asag::to_json(r).dump() + "\n";
  asag::write_file(path, text);
}

/// Grading endpoint stub on 127.0.0.1 with a swappable handler.
class StubServer {
 public:
  using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;

  explicit StubServer(Handler grade, Handler batch = {}) {
    server_.Post("/grade", std::move(grade));
    if (batch) server_.Post("/grade_batch", std::move(batch));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~StubServer() {
    server_.stop();
    thread_.join();
  }

  int port() const { return port_; }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
};

inline int cli(std::vector<std::string> args, std::string* out = nullptr, std::string* err = nullptr) {
  args.insert(args.begin(), "asag");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream o, e;
  const int rc = asag::cli::run(static_cast<int>(argv.size()), argv.data(), o, e);
  if (out) *out = o.str();
  if (err) *err = e.str();
  return rc;
}

}  // namespace fixture
