#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>

#include "asag/common.hpp"
#include "asag/graders.hpp"

namespace asag {

struct RemoteGraderConfig {
  std::string endpoint;  // e.g. http://127.0.0.1:9000
  int timeout_ms = 5000;
  int max_retries = 2;
  int max_in_flight = 4;
  int backoff_ms = 50;

  static RemoteGraderConfig from_json(const Json& j) {
    RemoteGraderConfig c;
    c.endpoint = j.value("endpoint", c.endpoint);
    c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
    c.max_retries = j.value("max_retries", c.max_retries);
    c.max_in_flight = j.value("max_in_flight", c.max_in_flight);
    c.backoff_ms = j.value("backoff_ms", c.backoff_ms);
    return c;
  }

  /// ASAG_GRADER_ENDPOINT, ASAG_GRADER_TIMEOUT_MS, ASAG_GRADER_MAX_RETRIES and
  /// ASAG_GRADER_MAX_IN_FLIGHT override file values.
  void apply_env() {
    if (const char* v = std::getenv("ASAG_GRADER_ENDPOINT")) endpoint = v;
    if (const char* v = std::getenv("ASAG_GRADER_TIMEOUT_MS")) timeout_ms = std::atoi(v);
    if (const char* v = std::getenv("ASAG_GRADER_MAX_RETRIES")) max_retries = std::atoi(v);
    if (const char* v = std::getenv("ASAG_GRADER_MAX_IN_FLIGHT")) max_in_flight = std::atoi(v);
  }

  Json to_json() const {
    return Json{{"endpoint", endpoint},
                {"timeout_ms", timeout_ms},
                {"max_retries", max_retries},
                {"max_in_flight", max_in_flight},
                {"backoff_ms", backoff_ms}};
  }
};

inline Json task_to_json(const GradingTask& t) {
  return Json{{"question", t.question},
              {"reference_answer", t.reference_answer},
              {"max_points", t.max_points},
              {"student_answer", t.student_answer}};
}

/// HTTP client for an external grader speaking POST /grade.
class RemoteGrader final : public Grader {
 public:
  explicit RemoteGrader(RemoteGraderConfig config) : config_(std::move(config)) {
    if (config_.endpoint.empty()) throw Error(ErrorCode::InvalidConfig, "remote grader endpoint not configured");
    if (config_.max_in_flight < 1) config_.max_in_flight = 1;
    if (config_.max_retries < 0) config_.max_retries = 0;
  }

  GradeResult grade(const GradingTask& task) const override {
    const Json reply = post("/grade", task_to_json(task).dump());
    return parse_points(reply, task);
  }

  /// Uses the optional /grade_batch endpoint: array in, array out, same order.
  std::vector<GradeResult> grade_batch(std::span<const GradingTask> tasks) const {
    Json body = Json::array();
    for (const auto& t : tasks) body.push_back(task_to_json(t));
    const Json reply = post("/grade_batch", body.dump());
    if (!reply.is_array() || reply.size() != tasks.size()) {
      throw Error(ErrorCode::MalformedResponse, "grade_batch reply is not an array of matching length");
    }
    std::vector<GradeResult> out;
    for (std::size_t i = 0; i < tasks.size(); ++i) out.push_back(parse_points(reply[i], tasks[i]));
    return out;
  }

  std::string name() const override { return "remote:" + config_.endpoint; }

  const RemoteGraderConfig& config() const { return config_; }

  int peak_in_flight() const {
    std::lock_guard lock(slots_->mutex);
    return slots_->peak;
  }

 private:
  struct Slots {
    std::mutex mutex;
    std::condition_variable cv;
    int in_flight = 0;
    int peak = 0;
  };

  class SlotGuard {
   public:
    SlotGuard(Slots& s, int limit) : s_(s) {
      std::unique_lock lock(s_.mutex);
      s_.cv.wait(lock, [&] { return s_.in_flight < limit; });
      ++s_.in_flight;
      s_.peak = std::max(s_.peak, s_.in_flight);
    }
    ~SlotGuard() {
      {
        std::lock_guard lock(s_.mutex);
        --s_.in_flight;
      }
      s_.cv.notify_one();
    }
    SlotGuard(const SlotGuard&) = delete;
    SlotGuard& operator=(const SlotGuard&) = delete;

   private:
    Slots& s_;
  };

  static GradeResult parse_points(const Json& reply, const GradingTask& task) {
    if (!reply.is_object() || !reply.contains("points") || !reply["points"].is_number()) {
      throw Error(ErrorCode::MalformedResponse, "reply lacks numeric \"points\"");
    }
    return clamp_grade(Points::from_double(reply["points"].get<double>()), task.max_points);
  }

  Json post(const std::string& path, const std::string& body) const {
    SlotGuard slot(*slots_, config_.max_in_flight);
    const auto timeout = std::chrono::milliseconds(config_.timeout_ms);
    bool last_timeout = false;
    std::string last_error;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(config_.backoff_ms) * (1 << (attempt - 1)));
      }
      httplib::Client client(config_.endpoint);
      client.set_connection_timeout(timeout);
      client.set_read_timeout(timeout);
      client.set_write_timeout(timeout);
      auto res = client.Post(path, body, "application/json");
      if (!res) {
        const auto err = res.error();
        last_timeout = err == httplib::Error::Read || err == httplib::Error::ConnectionTimeout;
        last_error = httplib::to_string(err);
        continue;
      }
      if (res->status >= 500) {
        last_timeout = false;
        last_error = "HTTP " + std::to_string(res->status);
        if (attempt < config_.max_retries) continue;
        throw Error(ErrorCode::MalformedResponse, "grader answered " + last_error);
      }
      if (res->status < 200 || res->status >= 300) {
        throw Error(ErrorCode::MalformedResponse, "grader answered HTTP " + std::to_string(res->status));
      }
      try {
        return Json::parse(res->body);
      } catch (const Json::parse_error&) {
        throw Error(ErrorCode::MalformedResponse, "grader reply is not JSON");
      }
    }
    if (last_timeout) throw Error(ErrorCode::Timeout, config_.endpoint + path + ": " + last_error);
    throw Error(ErrorCode::GraderUnavailable, config_.endpoint + path + ": " + last_error);
  }

  RemoteGraderConfig config_;
  std::shared_ptr<Slots> slots_ = std::make_shared<Slots>();
};

}  // namespace asag
