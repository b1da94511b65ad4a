#pragma once

#include <condition_variable>
#include <deque>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "asag/alerting.hpp"
#include "asag/common.hpp"
#include "asag/config.hpp"
#include "asag/graders.hpp"
#include "asag/record_store.hpp"
#include "asag/remote_grader.hpp"
#include "asag/reports.hpp"

namespace asag {

/// Serialized form of a report as written by the CLI and served over HTTP.
inline std::string report_bytes(const Json& report) { return report.dump(2) + "\n"; }

enum class BatchState { queued, grading, evaluated };

inline std::string_view to_string(BatchState s) {
  switch (s) {
    case BatchState::queued: return "queued";
    case BatchState::grading: return "grading";
    case BatchState::evaluated: return "evaluated";
  }
  return "queued";
}

struct BatchStatus {
  std::string batch_id;
  BatchState state = BatchState::queued;
  std::size_t graded = 0;  // rows with a model grade
  std::size_t failed = 0;  // rows whose shadow grading failed
  std::size_t total = 0;
  std::size_t alerts_raised = 0;
};

inline Json to_json(const BatchStatus& s) {
  return Json{{"batch_id", s.batch_id},
              {"state", to_string(s.state)},
              {"progress", Json{{"done", s.graded + s.failed}, {"total", s.total}}},
              {"graded", s.graded},
              {"failed", s.failed},
              {"alerts_raised", s.alerts_raised}};
}

/// Rejection of a batch submission with per-row reasons.
class ValidationFailed : public Error {
 public:
  explicit ValidationFailed(Json rows) : Error(ErrorCode::ValidationFailed, "batch rows failed validation"), rows_(std::move(rows)) {}
  const Json& rows() const { return rows_; }

 private:
  Json rows_;
};

/// Long-running pipeline service: batch intake with background shadow
/// grading, alert listing and lifecycle, and report views.
///
/// Store layout under store_dir: records.jsonl, alerts.jsonl, batches.jsonl.
/// All three are append-only; a restart replays them and resumes grading
/// of batches that were not yet evaluated.
class Service {
 public:
  explicit Service(ServiceConfig config, std::shared_ptr<const Grader> grader = nullptr)
      : config_(std::move(config)),
        records_(RecordStore::open_dir(config_.store_dir)),
        alerts_(config_.store_dir / "alerts.jsonl"),
        batch_log_(config_.store_dir / "batches.jsonl"),
        grader_(std::move(grader)) {
    if (!grader_) {
      if (config_.grader.endpoint.empty()) {
        grader_ = std::make_shared<BaselineGrader>();
      } else {
        grader_ = std::make_shared<RemoteGrader>(config_.grader);
      }
    }
    replay_batches();
  }

  ~Service() { stop(); }

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Starts workers and the HTTP listener; returns the bound port
  /// (config port 0 picks a free one).
  int start() {
    install_routes();
    int port = config_.port;
    if (port == 0) {
      port = server_.bind_to_any_port(config_.host);
    } else if (!server_.bind_to_port(config_.host, port)) {
      port = -1;
    }
    if (port < 0) throw Error(ErrorCode::IoError, "cannot bind " + config_.host + ":" + std::to_string(config_.port));
    port_ = port;
    start_workers();
    listener_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Starts only the background workers (no HTTP), for in-process use.
  void start_workers() {
    std::lock_guard lock(queue_mutex_);
    if (!workers_.empty()) return;
    stopping_ = false;
    for (int i = 0; i < config_.workers; ++i) workers_.emplace_back([this] { worker_loop(); });
  }

  void stop() {
    server_.stop();
    if (listener_.joinable()) listener_.join();
    {
      std::lock_guard lock(queue_mutex_);
      stopping_ = true;
    }
    queue_cv_.notify_all();
    for (auto& w : workers_) {
      if (w.joinable()) w.join();
    }
    workers_.clear();
  }

  int port() const { return port_; }
  RecordStore& records() { return records_; }
  AlertStore& alerts() { return alerts_; }
  const ServiceConfig& config() const { return config_; }

  // ---- operations (shared by HTTP handlers and tests) ----

  Json submit_batch(const Json& body) {
    if (!body.is_object()) throw Error(ErrorCode::InvalidArgument, "body must be a JSON object");
    const std::string batch_id = body.value("batch_id", "");
    if (batch_id.empty()) throw Error(ErrorCode::InvalidArgument, "batch_id is required");
    if (!body.contains("rows") || !body["rows"].is_array() || body["rows"].empty()) {
      throw Error(ErrorCode::InvalidArgument, "rows must be a nonempty array");
    }
    std::optional<std::string> endpoint;
    if (body.contains("grader_endpoint") && body["grader_endpoint"].is_string()) {
      endpoint = body["grader_endpoint"].get<std::string>();
    }

    std::lock_guard submit(submit_mutex_);
    {
      std::lock_guard lock(batch_mutex_);
      if (batches_.contains(batch_id)) throw Error(ErrorCode::DuplicateBatch, batch_id);
    }
    Json bad_rows = Json::array();
    std::vector<GradingRecord> to_insert;
    std::vector<std::string> ids;
    std::set<std::string> seen;
    std::size_t row_no = 0;
    for (const auto& row : body["rows"]) {
      ++row_no;
      auto reject = [&](const std::string& id, Json errors) {
        bad_rows.push_back(Json{{"row", row_no}, {"record_id", id}, {"errors", std::move(errors)}});
      };
      auto one_error = [](ErrorCode c, const std::string& msg) {
        return Json::array({Json{{"code", to_string(c)}, {"field", "record_id"}, {"message", msg}}});
      };
      std::optional<std::string> ref;
      if (row.is_string()) ref = row.get<std::string>();
      if (row.is_object() && row.size() == 1 && row.contains("record_id") && row["record_id"].is_string()) {
        ref = row["record_id"].get<std::string>();
      }
      if (ref) {
        if (!records_.contains(*ref)) {
          reject(*ref, one_error(ErrorCode::UnknownRecordId, "no stored record " + *ref));
        } else if (!seen.insert(*ref).second) {
          reject(*ref, one_error(ErrorCode::DuplicateRecordId, "record listed twice"));
        } else {
          ids.push_back(*ref);
        }
        continue;
      }
      auto v = validate_record(row);
      if (auto* errs = std::get_if<std::vector<FieldError>>(&v)) {
        Json e = Json::array();
        for (const auto& fe : *errs) e.push_back(to_json(fe));
        reject(row.is_object() ? row.value("record_id", "") : "", std::move(e));
        continue;
      }
      auto rec = std::get<GradingRecord>(std::move(v));
      if (!seen.insert(rec.record_id).second) {
        reject(rec.record_id, one_error(ErrorCode::DuplicateRecordId, "record listed twice"));
        continue;
      }
      if (auto existing = records_.find(rec.record_id)) {
        if (!(*existing == rec)) {
          reject(rec.record_id, one_error(ErrorCode::DuplicateRecordId, "differs from the stored record"));
          continue;
        }
      } else {
        to_insert.push_back(rec);
      }
      ids.push_back(rec.record_id);
    }
    if (!bad_rows.empty()) throw ValidationFailed(std::move(bad_rows));

    records_.insert_all(to_insert);
    Json ev{{"event", "submitted"}, {"batch_id", batch_id}, {"record_ids", ids}};
    if (endpoint) ev["grader_endpoint"] = *endpoint;
    append_batch_event(ev);
    {
      std::lock_guard lock(batch_mutex_);
      Batch b;
      b.id = batch_id;
      b.record_ids = ids;
      b.endpoint = endpoint;
      batches_.emplace(batch_id, std::move(b));
    }
    enqueue(batch_id);
    return Json{{"batch_id", batch_id}, {"row_count", ids.size()}};
  }

  BatchStatus batch_status(const std::string& batch_id) const {
    std::lock_guard lock(batch_mutex_);
    auto it = batches_.find(batch_id);
    if (it == batches_.end()) throw Error(ErrorCode::UnknownBatch, batch_id);
    const Batch& b = it->second;
    BatchStatus s;
    s.batch_id = b.id;
    s.total = b.record_ids.size();
    s.graded = b.results.size();
    s.failed = b.failures.size();
    s.alerts_raised = b.alerts_raised;
    s.state = b.evaluated ? BatchState::evaluated
              : (b.started || s.graded + s.failed > 0) ? BatchState::grading
                                                        : BatchState::queued;
    return s;
  }

  /// Blocks until the batch is evaluated or the timeout passes.
  bool wait_evaluated(const std::string& batch_id, std::chrono::milliseconds timeout) {
    std::unique_lock lock(batch_mutex_);
    return batch_cv_.wait_for(lock, timeout, [&] {
      auto it = batches_.find(batch_id);
      return it != batches_.end() && it->second.evaluated;
    });
  }

  Json report(const std::string& kind, const std::string& dataset_id, const std::optional<std::string>& grouping,
              const std::optional<double>& threshold) const {
    auto it = config_.datasets.find(dataset_id);
    if (it == config_.datasets.end()) throw Error(ErrorCode::UnknownDataset, "unknown dataset '" + dataset_id + "'");
    const DatasetSpec& d = it->second;
    if (kind == "experiment1") {
      if (!d.predictions) throw Error(ErrorCode::UnknownDataset, dataset_id + " has no predictions");
      std::optional<SplitAssignment> split;
      if (d.split) split = load_split(*d.split);
      const auto records = records_.snapshot();
      return experiment1_report(records, load_predictions(*d.predictions), split,
                                parse_grouping(grouping.value_or("by_max_points")));
    }
    if (kind == "benchmark") {
      const auto triples = load_joined_triples(records_, d.triples);
      return benchmark_report(triples, threshold.value_or(0.40));
    }
    throw Error(ErrorCode::InvalidArgument, "unknown report kind '" + kind + "'");
  }

 private:
  struct Batch {
    std::string id;
    std::vector<std::string> record_ids;
    std::optional<std::string> endpoint;
    std::map<std::string, GradeResult> results;
    std::map<std::string, std::string> failures;
    bool started = false;
    bool evaluated = false;
    std::size_t alerts_raised = 0;
  };

  void append_batch_event(const Json& ev) {
    std::lock_guard lock(log_mutex_);
    std::ofstream out(batch_log_, std::ios::binary | std::ios::app);
    out << ev.dump() << '\n';
    out.flush();
    if (!out) throw Error(ErrorCode::IoError, "cannot append to " + batch_log_.string());
  }

  void replay_batches() {
    if (!std::filesystem::exists(batch_log_)) return;
    for (const auto& jl : parse_jsonl(read_file(batch_log_))) {
      if (!jl.value) continue;  // a torn final line from a crash
      const Json& ev = *jl.value;
      const std::string type = ev.value("event", "");
      const std::string id = ev.value("batch_id", "");
      if (type == "submitted") {
        Batch b;
        b.id = id;
        b.record_ids = ev["record_ids"].get<std::vector<std::string>>();
        if (ev.contains("grader_endpoint")) b.endpoint = ev["grader_endpoint"].get<std::string>();
        batches_.emplace(id, std::move(b));
        continue;
      }
      auto it = batches_.find(id);
      if (it == batches_.end()) continue;
      Batch& b = it->second;
      if (type == "graded") {
        b.results[ev["record_id"].get<std::string>()] =
            GradeResult{ev["points"].get<Points>(), ev["raw_points"].get<Points>(), ev["clamped"].get<bool>()};
      } else if (type == "grade_failed") {
        b.failures[ev["record_id"].get<std::string>()] = ev.value("message", "");
      } else if (type == "evaluated") {
        b.evaluated = true;
        b.alerts_raised = ev.value("alerts_raised", std::size_t{0});
      }
    }
    for (const auto& [id, b] : batches_) {
      if (!b.evaluated) queue_.push_back(id);
    }
  }

  void enqueue(const std::string& batch_id) {
    {
      std::lock_guard lock(queue_mutex_);
      queue_.push_back(batch_id);
    }
    queue_cv_.notify_one();
  }

  void worker_loop() {
    for (;;) {
      std::string id;
      {
        std::unique_lock lock(queue_mutex_);
        queue_cv_.wait(lock, [&] { return stopping_ || !queue_.empty(); });
        if (stopping_) return;
        id = queue_.front();
        queue_.pop_front();
      }
      try {
        process(id);
      } catch (const std::exception&) {
        // Leave the batch unevaluated; it is retried on the next restart.
      }
    }
  }

  void process(const std::string& batch_id) {
    std::vector<std::string> todo;
    std::optional<std::string> endpoint;
    {
      std::lock_guard lock(batch_mutex_);
      Batch& b = batches_.at(batch_id);
      b.started = true;
      endpoint = b.endpoint;
      for (const auto& id : b.record_ids) {
        if (!b.results.contains(id) && !b.failures.contains(id)) todo.push_back(id);
      }
    }
    std::shared_ptr<const Grader> grader = grader_;
    if (endpoint && !endpoint->empty()) {
      RemoteGraderConfig rc = config_.grader;
      rc.endpoint = *endpoint;
      grader = std::make_shared<RemoteGrader>(rc);
    }
    for (const auto& id : todo) {
      {
        std::lock_guard lock(queue_mutex_);
        if (stopping_) return;
      }
      const auto rec = records_.find(id);
      try {
        if (!rec) throw Error(ErrorCode::UnknownRecordId, id);
        const GradeResult r = grader->grade(task_from(*rec));
        append_batch_event(Json{{"event", "graded"},
                                {"batch_id", batch_id},
                                {"record_id", id},
                                {"points", r.points},
                                {"raw_points", r.raw_points},
                                {"clamped", r.clamped}});
        std::lock_guard lock(batch_mutex_);
        batches_.at(batch_id).results[id] = r;
      } catch (const Error& e) {
        append_batch_event(Json{{"event", "grade_failed"},
                                {"batch_id", batch_id},
                                {"record_id", id},
                                {"code", to_string(e.code())},
                                {"message", e.what()}});
        std::lock_guard lock(batch_mutex_);
        batches_.at(batch_id).failures[id] = e.what();
      }
    }

    std::vector<BatchRow> rows;
    std::size_t failures = 0;
    {
      std::lock_guard lock(batch_mutex_);
      const Batch& b = batches_.at(batch_id);
      failures = b.failures.size();
      for (const auto& id : b.record_ids) {
        auto res = b.results.find(id);
        if (res == b.results.end()) continue;
        const auto rec = records_.find(id);
        if (!rec) continue;
        rows.push_back({rec->record_id, rec->course_id, rec->official_grader_id, rec->max_points,
                        rec->official_points, res->second.points});
      }
    }
    std::vector<Alert> raised;
    if (!rows.empty()) raised = evaluate_batch(batch_id, rows, config_.policy);
    alerts_.add(raised);
    append_batch_event(Json{{"event", "evaluated"},
                            {"batch_id", batch_id},
                            {"alerts_raised", raised.size()},
                            {"failures", failures}});
    {
      std::lock_guard lock(batch_mutex_);
      Batch& b = batches_.at(batch_id);
      b.evaluated = true;
      b.alerts_raised = raised.size();
    }
    batch_cv_.notify_all();
  }

  static int status_for(ErrorCode code) {
    switch (code) {
      case ErrorCode::UnknownBatch:
      case ErrorCode::UnknownAlert:
      case ErrorCode::UnknownDataset:
      case ErrorCode::UnknownRecordId: return 404;
      case ErrorCode::IllegalTransition:
      case ErrorCode::DuplicateBatch: return 409;
      case ErrorCode::FileUnreadable:
      case ErrorCode::IoError: return 500;
      default: return 400;
    }
  }

  static void send_json(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  template <typename F>
  static void guarded(httplib::Response& res, F&& f) {
    try {
      f();
    } catch (const ValidationFailed& e) {
      send_json(res, 400, Json{{"error", "ValidationFailed"}, {"message", e.what()}, {"rows", e.rows()}});
    } catch (const Error& e) {
      send_json(res, status_for(e.code()), Json{{"error", to_string(e.code())}, {"message", e.what()}});
    } catch (const Json::exception& e) {
      send_json(res, 400, Json{{"error", "InvalidArgument"}, {"message", e.what()}});
    } catch (const std::exception& e) {
      send_json(res, 500, Json{{"error", "Internal"}, {"message", e.what()}});
    }
  }

  static Json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return Json::object();
    try {
      return Json::parse(req.body);
    } catch (const Json::parse_error& e) {
      throw Error(ErrorCode::InvalidArgument, std::string("body is not JSON: ") + e.what());
    }
  }

  static std::optional<std::string> param(const httplib::Request& req, const char* name) {
    if (!req.has_param(name)) return std::nullopt;
    std::string v = req.get_param_value(name);
    if (v.empty()) return std::nullopt;
    return v;
  }

  void install_routes() {
    server_.Post("/batches", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 202, submit_batch(parse_body(req))); });
    });
    server_.Get(R"(/batches/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] { send_json(res, 200, to_json(batch_status(req.matches[1]))); });
    });
    server_.Get("/alerts", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        AlertFilter f;
        if (auto v = param(req, "state")) f.state = parse_alert_state(*v);
        if (auto v = param(req, "kind")) f.kind = parse_alert_kind(*v);
        f.batch_id = param(req, "batch_id");
        f.course_id = param(req, "course_id");
        std::size_t limit = 50;
        if (auto v = param(req, "limit")) limit = std::max<std::size_t>(1, std::stoul(*v));
        const AlertPage page = alerts_.list(f, param(req, "cursor"), limit);
        Json items = Json::array();
        for (const auto& a : page.alerts) items.push_back(to_json(a));
        send_json(res, 200, Json{{"alerts", items}, {"next_cursor", page.next_cursor ? Json(*page.next_cursor) : Json(nullptr)}});
      });
    });
    server_.Get(R"(/alerts/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto a = alerts_.get(req.matches[1]);
        if (!a) throw Error(ErrorCode::UnknownAlert, req.matches[1]);
        send_json(res, 200, to_json(*a));
      });
    });
    server_.Post(R"(/alerts/([^/]+)/claim)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const Json body = parse_body(req);
        ClaimAction claim;
        if (body.contains("reviewer_id")) claim.reviewer_id = body["reviewer_id"].get<std::string>();
        send_json(res, 200, to_json(alerts_.transition(req.matches[1], claim)));
      });
    });
    server_.Post(R"(/alerts/([^/]+)/resolve)", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        const Json body = parse_body(req);
        ResolveAction action;
        action.decision = parse_decision(body.value("decision", ""));
        if (body.contains("adjusted_points") && !body["adjusted_points"].is_null()) {
          action.adjusted_points = body["adjusted_points"].get<Points>();
        }
        action.reviewer_id = body.value("reviewer_id", "");
        action.note = body.value("note", "");
        send_json(res, 200, to_json(alerts_.transition(req.matches[1], action)));
      });
    });
    // Record text for the reviewer console; benchmark grades are not exposed.
    server_.Get(R"(/records/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        auto r = records_.find(req.matches[1]);
        if (!r) throw Error(ErrorCode::UnknownRecordId, req.matches[1]);
        r->regrader_points.reset();
        r->regrader_id.reset();
        r->model_points.reset();
        send_json(res, 200, to_json(*r));
      });
    });
    server_.Get(R"(/reports/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
      guarded(res, [&] {
        std::optional<double> threshold;
        if (auto v = param(req, "threshold")) threshold = std::stod(*v);
        const Json rep = report(req.matches[1], param(req, "dataset").value_or(""), param(req, "grouping"), threshold);
        res.status = 200;
        res.set_content(report_bytes(rep), "application/json");
      });
    });
  }

  ServiceConfig config_;
  RecordStore records_;
  AlertStore alerts_;
  std::filesystem::path batch_log_;
  std::shared_ptr<const Grader> grader_;

  httplib::Server server_;
  std::thread listener_;
  int port_ = -1;

  std::mutex submit_mutex_;
  std::mutex log_mutex_;
  mutable std::mutex batch_mutex_;
  std::condition_variable batch_cv_;
  std::map<std::string, Batch> batches_;

  std::mutex queue_mutex_;
  std::condition_variable queue_cv_;
  std::deque<std::string> queue_;
  std::vector<std::thread> workers_;
  bool stopping_ = false;
};

}  // namespace asag
