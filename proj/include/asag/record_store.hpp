#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "asag/common.hpp"
#include "asag/csv.hpp"
#include "asag/records.hpp"

namespace asag {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::FileUnreadable, "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << content;
  if (!out) throw Error(ErrorCode::IoError, "short write to " + path.string());
}

struct JsonLine {
  std::size_t line = 0;
  std::optional<Json> value;  // empty when the line is not valid JSON
};

/// Splits JSONL text into parsed lines, skipping blank ones.
inline std::vector<JsonLine> parse_jsonl(std::string_view text) {
  std::vector<JsonLine> out;
  std::size_t line = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view raw = text.substr(pos, end - pos);
    ++line;
    if (!raw.empty() && raw.back() == '\r') raw.remove_suffix(1);
    if (raw.find_first_not_of(" \t") != std::string_view::npos) {
      JsonLine jl{line, std::nullopt};
      try {
        jl.value = Json::parse(raw);
      } catch (const Json::parse_error&) {
      }
      out.push_back(std::move(jl));
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
  return out;
}

enum class FileFormat { jsonl, csv };

inline FileFormat parse_format(std::string_view s) {
  if (s == "jsonl") return FileFormat::jsonl;
  if (s == "csv") return FileFormat::csv;
  throw Error(ErrorCode::InvalidArgument, "unknown format '" + std::string(s) + "' (expected jsonl or csv)");
}

struct Rejection {
  std::size_t row = 0;   // 1-based data row
  std::size_t line = 0;  // physical line in the file
  std::string record_id;
  std::vector<FieldError> errors;
};

struct IngestReport {
  std::size_t ingested = 0;
  std::vector<Rejection> rejected;

  std::size_t duplicates() const {
    std::size_t n = 0;
    for (const auto& r : rejected) {
      if (r.errors.size() == 1 && r.errors[0].code == ErrorCode::DuplicateRecordId) ++n;
    }
    return n;
  }
  bool has_invalid_rows() const { return duplicates() != rejected.size(); }
};

inline Json to_json(const IngestReport& report) {
  Json rejected = Json::array();
  for (const auto& r : report.rejected) {
    Json errs = Json::array();
    for (const auto& e : r.errors) errs.push_back(to_json(e));
    rejected.push_back(Json{{"row", r.row}, {"line", r.line}, {"record_id", r.record_id}, {"errors", errs}});
  }
  return Json{{"ingested", report.ingested}, {"duplicates", report.duplicates()}, {"rejected", rejected}};
}

/// Append-only record log with an in-memory index.
///
/// Readers share a lock; inserts take it exclusively. Ingestion as a whole
/// is serialized by a second mutex so two ingests never interleave.
class RecordStore {
 public:
  RecordStore() = default;

  /// Opens (or creates) a store backed by `log_path`, replaying existing lines.
  explicit RecordStore(std::filesystem::path log_path) : log_path_(std::move(log_path)) {
    if (std::filesystem::exists(log_path_)) {
      for (const auto& jl : parse_jsonl(read_file(log_path_))) {
        if (!jl.value) {
          throw Error(ErrorCode::MalformedRow, log_path_.string() + ": line " + std::to_string(jl.line));
        }
        auto v = validate_record(*jl.value);
        if (auto* errs = std::get_if<std::vector<FieldError>>(&v)) {
          throw Error(errs->front().code, log_path_.string() + ": line " + std::to_string(jl.line) + ": " +
                                              errs->front().message);
        }
        auto rec = std::get<GradingRecord>(std::move(v));
        if (!index_.contains(rec.record_id)) {
          index_.emplace(rec.record_id, rows_.size());
          rows_.push_back(std::move(rec));
        }
      }
    } else if (log_path_.has_parent_path()) {
      std::filesystem::create_directories(log_path_.parent_path());
    }
  }

  static RecordStore open_dir(const std::filesystem::path& dir) { return RecordStore(dir / "records.jsonl"); }

  RecordStore(RecordStore&& other) noexcept
      : log_path_(std::move(other.log_path_)), rows_(std::move(other.rows_)), index_(std::move(other.index_)) {}

  /// Returns false (and stores nothing) if the record_id is already present.
  bool insert(const GradingRecord& record) {
    std::vector<GradingRecord> one{record};
    return insert_all(one) == 1;
  }

  /// Inserts all records whose ids are new; returns how many were stored.
  std::size_t insert_all(std::span<const GradingRecord> records) {
    std::unique_lock lock(mutex_);
    std::string lines;
    std::size_t added = 0;
    for (const auto& r : records) {
      if (index_.contains(r.record_id)) continue;
      index_.emplace(r.record_id, rows_.size());
      rows_.push_back(r);
      lines += to_json(r).dump();
      lines += '\n';
      ++added;
    }
    if (!lines.empty() && !log_path_.empty()) {
      std::ofstream out(log_path_, std::ios::binary | std::ios::app);
      out << lines;
      out.flush();
      if (!out) throw Error(ErrorCode::IoError, "cannot append to " + log_path_.string());
    }
    return added;
  }

  bool contains(const std::string& record_id) const {
    std::shared_lock lock(mutex_);
    return index_.contains(record_id);
  }

  std::optional<GradingRecord> find(const std::string& record_id) const {
    std::shared_lock lock(mutex_);
    auto it = index_.find(record_id);
    if (it == index_.end()) return std::nullopt;
    return rows_[it->second];
  }

  /// All records in insertion order.
  std::vector<GradingRecord> snapshot() const {
    std::shared_lock lock(mutex_);
    return rows_;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return rows_.size();
  }

  const std::filesystem::path& log_path() const { return log_path_; }

  std::mutex& ingest_mutex() { return ingest_mutex_; }

 private:
  std::filesystem::path log_path_;
  mutable std::shared_mutex mutex_;
  std::mutex ingest_mutex_;
  std::vector<GradingRecord> rows_;
  std::unordered_map<std::string, std::size_t> index_;
};

namespace detail {

inline Json csv_row_to_json(const std::vector<std::string>& header, const std::vector<std::string>& fields) {
  Json obj = Json::object();
  for (std::size_t k = 0; k < header.size(); ++k) {
    const bool optional_field =
        std::find(kTripleFields.begin(), kTripleFields.end(), header[k]) != kTripleFields.end();
    if (optional_field && fields[k].empty()) continue;
    obj[header[k]] = fields[k];
  }
  return obj;
}

}  // namespace detail

/// Validates and stores every row of a JSONL or CSV file.
/// Invalid rows are returned with reasons; duplicates are rejected as
/// DuplicateRecordId, so re-ingesting a file stores nothing new.
inline IngestReport ingest(RecordStore& store, const std::filesystem::path& path, FileFormat format) {
  const std::string text = read_file(path);
  std::lock_guard serial(store.ingest_mutex());

  struct Candidate {
    std::size_t row;
    std::size_t line;
    std::optional<Json> value;
    std::string problem;
  };
  std::vector<Candidate> candidates;
  if (format == FileFormat::jsonl) {
    std::size_t row = 0;
    for (auto& jl : parse_jsonl(text)) {
      ++row;
      candidates.push_back({row, jl.line, std::move(jl.value), jl.value ? "" : "line is not valid JSON"});
    }
  } else {
    auto rows = csv::parse(text);
    if (rows.empty()) throw Error(ErrorCode::MalformedRow, path.string() + ": missing CSV header");
    const auto& header = rows.front().fields;
    for (auto field : kRecordFields) {
      if (std::find(header.begin(), header.end(), field) == header.end()) {
        throw Error(ErrorCode::MalformedRow, path.string() + ": CSV header lacks column " + std::string(field));
      }
    }
    for (std::size_t k = 1; k < rows.size(); ++k) {
      if (rows[k].fields.size() != header.size()) {
        candidates.push_back({k, rows[k].line, std::nullopt,
                              "expected " + std::to_string(header.size()) + " fields, got " +
                                  std::to_string(rows[k].fields.size())});
      } else {
        candidates.push_back({k, rows[k].line, detail::csv_row_to_json(header, rows[k].fields), ""});
      }
    }
  }

  IngestReport report;
  std::vector<GradingRecord> accepted;
  std::unordered_map<std::string, bool> seen_in_file;
  for (auto& c : candidates) {
    if (!c.value) {
      report.rejected.push_back({c.row, c.line, "", {{ErrorCode::MalformedRow, "", "line " + std::to_string(c.line) + ": " + c.problem}}});
      continue;
    }
    auto v = validate_record(*c.value, [&](const std::string& id) {
      return store.contains(id) || seen_in_file.contains(id);
    });
    if (auto* errs = std::get_if<std::vector<FieldError>>(&v)) {
      std::string id;
      if (auto it = c.value->find("record_id"); it != c.value->end() && it->is_string()) id = it->get<std::string>();
      report.rejected.push_back({c.row, c.line, id, std::move(*errs)});
      continue;
    }
    auto rec = std::get<GradingRecord>(std::move(v));
    seen_in_file.emplace(rec.record_id, true);
    accepted.push_back(std::move(rec));
  }
  report.ingested = store.insert_all(accepted);
  return report;
}

/// Writes the store in either file format; ingesting the output into an
/// empty store reproduces the same records.
inline void export_records(const RecordStore& store, const std::filesystem::path& path, FileFormat format) {
  std::string out;
  const auto rows = store.snapshot();
  if (format == FileFormat::jsonl) {
    for (const auto& r : rows) {
      out += to_json(r).dump();
      out += '\n';
    }
  } else {
    std::vector<std::string> header(kRecordFields.begin(), kRecordFields.end());
    header.insert(header.end(), kTripleFields.begin(), kTripleFields.end());
    out += csv::format_row(header);
    for (const auto& r : rows) {
      out += csv::format_row({r.record_id, r.course_id, r.module_id, r.question_id, r.question,
                              r.reference_answer, r.max_points.to_string(), r.student_answer,
                              r.official_points.to_string(), r.official_grader_id,
                              r.regrader_points ? r.regrader_points->to_string() : "",
                              r.regrader_id.value_or(""),
                              r.model_points ? r.model_points->to_string() : ""});
    }
  }
  write_file(path, out);
}

}  // namespace asag
