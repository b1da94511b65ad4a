#include <gtest/gtest.h>

#include <barrier>
#include <random>

#include "support/fixtures.hpp"

using namespace asag;
using fixture::StubServer;
using fixture::TempDir;

namespace {

GradingTask task(std::string ref, std::string answer, double max) {
  return GradingTask{"Q?", std::move(ref), Points::from_double(max), std::move(answer), "id"};
}

RemoteGraderConfig fast_config(const std::string& url) {
  RemoteGraderConfig c;
  c.endpoint = url;
  c.timeout_ms = 300;
  c.max_retries = 2;
  c.backoff_ms = 5;
  return c;
}

void reply_points(httplib::Response& res, double points) {
  res.set_content(Json{{"points", points}}.dump(), "application/json");
}

class FlakyGrader final : public Grader {
 public:
  GradeResult grade(const GradingTask& t) const override {
    if (t.task_id.back() == '!') throw Error(ErrorCode::Timeout, "injected");
    return clamp_grade(Points::from_double(static_cast<double>(t.task_id.size())), t.max_points);
  }
  std::string name() const override { return "flaky"; }
};

}  // namespace

// ---- baseline ----

TEST(Baseline, SimilarityExamples) {
  EXPECT_NEAR(baseline_similarity("a b c d", "a b e f"), 2.0 / 6.0, 1e-12);
  EXPECT_EQ(baseline_similarity("Some text, here.", "some TEXT here"), 1.0);
  EXPECT_EQ(baseline_similarity("", "anything"), 0.0);
  EXPECT_EQ(baseline_similarity("...", "..."), 0.0);
}

TEST(Baseline, GradeExamples) {
  EXPECT_EQ(baseline_grade(task("the answer text", "the answer text", 6)).points, Points::from_double(6));
  EXPECT_EQ(baseline_grade(task("the answer text", "", 6)).points, Points{});
  EXPECT_EQ(baseline_grade(task("a b c d", "a b e f", 6)).points, Points::from_double(2));
  EXPECT_EQ(baseline_grade(task("x y", "x y", 10)).points, Points::from_double(10));
  // 7 of 12 tokens shared: 0.5833 * 6 = 3.5
  EXPECT_EQ(baseline_grade(task("a b c d e f g h i", "a b c d e f g j k l", 6)).points, Points::from_double(3.5));
  // 0.25 * 6 = 1.5 exactly; 0.125 * 2 = 0.25 sits halfway and rounds away from zero to 0.5
  EXPECT_EQ(baseline_grade(task("a", "a b c d", 6)).points, Points::from_double(1.5));
  EXPECT_EQ(baseline_grade(task("a b c d e", "a f g h", 2)).points, Points::from_double(0.5));
}

TEST(Baseline, PropertySymmetricBoundedPure) {
  std::mt19937_64 rng(1);
  for (int i = 0; i < 2000; ++i) {
    const std::string a = fixture::words(rng, rng() % 6), b = fixture::words(rng, rng() % 6);
    const double s = baseline_similarity(a, b);
    EXPECT_EQ(s, baseline_similarity(b, a));
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
    if (!a.empty()) EXPECT_EQ(baseline_similarity(a, a), 1.0);
    const auto t = task(a, b, 1 + static_cast<double>(rng() % 18));
    EXPECT_EQ(baseline_grade(t), baseline_grade(t));
  }
}

TEST(Clamp, NeverChangesInRangeResults) {
  const Points max = Points::from_double(6);
  EXPECT_EQ(clamp_grade(Points::from_double(4), max), (GradeResult{Points::from_double(4), Points::from_double(4), false}));
  EXPECT_EQ(clamp_grade(Points::from_double(7.5), max), (GradeResult{max, Points::from_double(7.5), true}));
  EXPECT_EQ(clamp_grade(Points::from_double(-1), max), (GradeResult{Points{}, Points::from_double(-1), true}));
}

// ---- replay ----

TEST(Replay, RecordedGradeIsReturned) {
  TempDir dir;
  write_file(dir / "replay.jsonl", R"({"record_id": "t1", "points": 4.0})" "\n");
  const auto g = ReplayGrader::from_file(dir / "replay.jsonl");
  GradingTask t{"Describe the effectiveness and efficiency approaches.", "ref", Points::from_double(6), "ans", "t1"};
  EXPECT_EQ(g.grade(t).points, Points::from_double(4));
  t.task_id = "other";
  try {
    g.grade(t);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingReplayEntry);
  }
}

// ---- remote ----

TEST(Remote, ReturnsAndClampsPoints) {
  double next = 4.0;
  StubServer stub([&](const httplib::Request& req, httplib::Response& res) {
    const auto body = Json::parse(req.body);
    EXPECT_EQ(body.size(), 4u);
    EXPECT_TRUE(body.contains("question") && body.contains("reference_answer") && body.contains("max_points") &&
                body.contains("student_answer"));
    reply_points(res, next);
  });
  RemoteGrader g(fast_config(stub.url()));
  const auto t = task("r", "a", 6);
  EXPECT_EQ(g.grade(t), (GradeResult{Points::from_double(4), Points::from_double(4), false}));
  next = 7.5;
  EXPECT_EQ(g.grade(t), (GradeResult{Points::from_double(6), Points::from_double(7.5), true}));
  next = -1;
  EXPECT_EQ(g.grade(t), (GradeResult{Points{}, Points::from_double(-1), true}));
}

TEST(Remote, MalformedReplies) {
  int mode = 0;
  StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    if (mode == 0) res.set_content(R"({"score": 3})", "application/json");
    if (mode == 1) res.set_content("not json", "text/plain");
    if (mode == 2) {
      res.status = 400;
      res.set_content("{}", "application/json");
    }
  });
  RemoteGrader g(fast_config(stub.url()));
  for (mode = 0; mode < 3; ++mode) {
    try {
      g.grade(task("r", "a", 6));
      FAIL() << mode;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::MalformedResponse) << mode;
    }
  }
}

TEST(Remote, RetriesServerErrorsThenSucceeds) {
  std::atomic<int> calls{0};
  StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    if (++calls < 3) {
      res.status = 503;
      return;
    }
    reply_points(res, 2);
  });
  RemoteGrader g(fast_config(stub.url()));
  EXPECT_EQ(g.grade(task("r", "a", 6)).points, Points::from_double(2));
  EXPECT_EQ(calls.load(), 3);
}

TEST(Remote, TimeoutAndUnavailable) {
  StubServer slow([](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    reply_points(res, 1);
  });
  auto cfg = fast_config(slow.url());
  cfg.max_retries = 1;
  try {
    RemoteGrader(cfg).grade(task("r", "a", 6));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::Timeout);
  }
  // Nothing listens on this port once the stub is gone.
  int port = 0;
  {
    StubServer gone([](const httplib::Request&, httplib::Response&) {});
    port = gone.port();
  }
  try {
    RemoteGrader(fast_config("http://127.0.0.1:" + std::to_string(port))).grade(task("r", "a", 6));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::GraderUnavailable);
  }
}

TEST(Remote, BoundsInFlightRequests) {
  std::atomic<int> now{0}, peak{0};
  StubServer stub([&](const httplib::Request&, httplib::Response& res) {
    const int v = ++now;
    int p = peak.load();
    while (v > p && !peak.compare_exchange_weak(p, v)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
    --now;
    reply_points(res, 1);
  });
  auto cfg = fast_config(stub.url());
  cfg.max_in_flight = 2;
  RemoteGrader g(cfg);
  std::vector<GradingTask> tasks(12, task("r", "a", 6));
  const auto out = batch_grade(tasks, g, BatchOptions{6, {}});
  EXPECT_TRUE(out.failures.empty());
  EXPECT_LE(peak.load(), 2);
  EXPECT_LE(g.peak_in_flight(), 2);
}

TEST(Remote, BatchEndpointKeepsOrder) {
  StubServer stub([](const httplib::Request&, httplib::Response& res) { reply_points(res, 0); },
                  [](const httplib::Request& req, httplib::Response& res) {
                    Json out = Json::array();
                    for (const auto& t : Json::parse(req.body)) out.push_back(Json{{"points", t["student_answer"].get<std::string>().size()}});
                    res.set_content(out.dump(), "application/json");
                  });
  RemoteGrader g(fast_config(stub.url()));
  std::vector<GradingTask> tasks{task("r", "a", 6), task("r", "abc", 6), task("r", "abcdefgh", 6)};
  const auto out = g.grade_batch(tasks);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_EQ(out[0].points, Points::from_double(1));
  EXPECT_EQ(out[1].points, Points::from_double(3));
  EXPECT_TRUE(out[2].clamped);
}

TEST(Remote, ConfigEnvOverride) {
  Json j{{"endpoint", "http://file"}, {"timeout_ms", 10}};
  auto c = RemoteGraderConfig::from_json(j);
  setenv("ASAG_GRADER_ENDPOINT", "http://env", 1);
  setenv("ASAG_GRADER_MAX_IN_FLIGHT", "9", 1);
  c.apply_env();
  unsetenv("ASAG_GRADER_ENDPOINT");
  unsetenv("ASAG_GRADER_MAX_IN_FLIGHT");
  EXPECT_EQ(c.endpoint, "http://env");
  EXPECT_EQ(c.timeout_ms, 10);
  EXPECT_EQ(c.max_in_flight, 9);
  EXPECT_THROW(RemoteGrader(RemoteGraderConfig{}), Error);
}

// ---- batch ----

TEST(Batch, OrderAndFailures) {
  FlakyGrader g;
  std::vector<GradingTask> tasks;
  for (const char* id : {"a", "bb!", "ccc"}) tasks.push_back({"q", "r", Points::from_double(10), "s", id});
  for (unsigned threads : {1u, 3u}) {
    const auto out = batch_grade(tasks, g, BatchOptions{threads, {}});
    ASSERT_EQ(out.results.size(), 3u);
    EXPECT_EQ(out.results[0]->points, Points::from_double(1));
    EXPECT_FALSE(out.results[1]);
    EXPECT_EQ(out.results[2]->points, Points::from_double(3));
    ASSERT_EQ(out.failures.size(), 1u);
    EXPECT_EQ(out.failures[0].index, 1u);
    EXPECT_EQ(out.failures[0].code, ErrorCode::Timeout);
  }
  EXPECT_TRUE(batch_grade(std::vector<GradingTask>{}, g).results.empty());
}

TEST(Batch, ProgressIsObservable) {
  BaselineGrader g;
  std::vector<GradingTask> tasks(25, task("a b", "a", 4));
  std::vector<std::size_t> seen;
  batch_grade(tasks, g, BatchOptions{4, [&](std::size_t done, std::size_t total) {
                                         EXPECT_EQ(total, 25u);
                                         seen.push_back(done);
                                       }});
  ASSERT_EQ(seen.size(), 25u);
  EXPECT_TRUE(std::is_sorted(seen.begin(), seen.end()));
  EXPECT_EQ(seen.back(), 25u);
}

// ---- alerting ----

namespace {

std::vector<BatchRow> grader_rows(const std::string& grader, int n, double dev, double max = 10) {
  std::vector<BatchRow> rows;
  for (int i = 0; i < n; ++i) {
    const double off = (i % 2) ? max : 0.0;
    const double mod = (i % 2) ? max - dev * max : dev * max;
    rows.push_back({grader + "-" + std::to_string(i), "course", grader, Points::from_double(max),
                    Points::from_double(off), Points::from_double(mod)});
  }
  return rows;
}

AlertPolicy level1_only() {
  AlertPolicy p;
  p.emit_level2 = false;
  return p;
}

}  // namespace

TEST(Alerting, Level1Examples) {
  auto rows = grader_rows("g-high", 100, 0.30);
  auto low = grader_rows("g-low", 100, 0.05);
  rows.insert(rows.end(), low.begin(), low.end());
  const auto alerts = evaluate_batch("b1", rows, level1_only());
  ASSERT_EQ(alerts.size(), 1u);
  EXPECT_EQ(alerts[0].kind, AlertKind::grader_outlier);
  EXPECT_EQ(alerts[0].subject, "g-high");
  EXPECT_EQ(alerts[0].evidence.n, 100u);
  EXPECT_NEAR(*alerts[0].evidence.mean_abs_dev, 0.30, 1e-12);
  EXPECT_EQ(evaluate_batch("b1", grader_rows("few", 5, 0.9), level1_only()).size(), 0u);
}

TEST(Alerting, Level2Example) {
  std::vector<BatchRow> rows{{"r1", "c", "g", Points::from_double(10), Points::from_double(1), Points::from_double(9)}};
  AlertPolicy p;
  p.level2_threshold = 0.5;
  const auto alerts = evaluate_batch("b", rows, p);
  ASSERT_EQ(alerts.size(), 1u);
  EXPECT_EQ(alerts[0].kind, AlertKind::question_outlier);
  EXPECT_NEAR(*alerts[0].evidence.abs_dev, 0.8, 1e-12);
  EXPECT_EQ(alerts[0].subject, "r1");
}

TEST(Alerting, InputErrors) {
  std::vector<BatchRow> rows{{"r1", "c", "g", Points::from_double(10), Points::from_double(1), std::nullopt}};
  try {
    evaluate_batch("b", rows, AlertPolicy{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingModelGrade);
  }
  rows[0].model_points = Points{};
  rows[0].grader_id = "";
  try {
    evaluate_batch("b", rows, AlertPolicy{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MissingGraderId);
  }
  AlertPolicy bad;
  bad.level1_threshold = 0;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Alerting, Level1PayloadHasNoRowPoints) {
  const auto alerts = evaluate_batch("b", grader_rows("g", 30, 0.4), AlertPolicy{});
  for (const auto& a : alerts) {
    const Json j = to_json(a);
    if (a.kind == AlertKind::grader_outlier) {
      EXPECT_FALSE(j["evidence"].contains("model_points"));
      EXPECT_FALSE(j["evidence"].contains("official_points"));
      EXPECT_FALSE(j["evidence"].contains("abs_dev"));
      EXPECT_EQ(j.dump().find("model_points"), std::string::npos);
    }
  }
}

TEST(Alerting, PropertyMonotoneInLevel2Threshold) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<BatchRow> rows;
    for (int i = 0; i < 40; ++i) {
      const double max = static_cast<double>(1 + rng() % 10);
      rows.push_back({"r" + std::to_string(i), "c", "g" + std::to_string(rng() % 3), Points::from_double(max),
                      Points::from_double(static_cast<double>(rng() % static_cast<int>(max + 1))),
                      Points::from_double(static_cast<double>(rng() % static_cast<int>(max + 1)))});
    }
    AlertPolicy hi, lo;
    hi.level2_threshold = std::uniform_real_distribution<double>(0.05, 1.0)(rng);
    lo.level2_threshold = hi.level2_threshold * std::uniform_real_distribution<double>(0.1, 1.0)(rng);
    std::set<std::string> a, b;
    for (const auto& x : evaluate_batch("b", rows, hi)) {
      if (x.kind == AlertKind::question_outlier) a.insert(x.alert_id);
    }
    for (const auto& x : evaluate_batch("b", rows, lo)) {
      if (x.kind == AlertKind::question_outlier) b.insert(x.alert_id);
    }
    EXPECT_TRUE(std::includes(b.begin(), b.end(), a.begin(), a.end()));
  }
}

TEST(Alerting, StateMachine) {
  AlertStore store;
  const auto raised = store.add(evaluate_batch("b", grader_rows("g", 30, 0.4), level1_only()));
  ASSERT_EQ(raised.size(), 1u);
  const std::string id = raised[0].alert_id;
  ResolveAction confirm{Decision::confirmed, std::nullopt, "rev", "ok"};
  auto expect_code = [&](auto&& f, ErrorCode code) {
    try {
      f();
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code);
    }
  };
  expect_code([&] { store.transition(id, confirm); }, ErrorCode::IllegalTransition);
  expect_code([&] { store.transition("al-missing", ClaimAction{}); }, ErrorCode::UnknownAlert);
  EXPECT_EQ(store.transition(id, ClaimAction{"rev"}).state, AlertState::under_review);
  expect_code([&] { store.transition(id, ClaimAction{"other"}); }, ErrorCode::IllegalTransition);
  expect_code([&] { store.transition(id, ResolveAction{Decision::adjusted, std::nullopt, "rev", ""}); },
              ErrorCode::InvalidAdjustedPoints);
  expect_code([&] { store.transition(id, ResolveAction{Decision::adjusted, Points::from_double(11), "rev", ""}); },
              ErrorCode::InvalidAdjustedPoints);
  expect_code([&] { store.transition(id, ResolveAction{Decision::confirmed, Points::from_double(1), "rev", ""}); },
              ErrorCode::InvalidAdjustedPoints);
  const auto done = store.transition(id, confirm);
  EXPECT_EQ(done.state, AlertState::resolved);
  ASSERT_TRUE(done.resolution);
  EXPECT_FALSE(done.resolution->adjusted_points);
  expect_code([&] { store.transition(id, confirm); }, ErrorCode::IllegalTransition);
  expect_code([&] { store.transition(id, ClaimAction{}); }, ErrorCode::IllegalTransition);
}

TEST(Alerting, ConcurrentResolutionHasOneWinner) {
  for (int round = 0; round < 20; ++round) {
    AlertStore store;
    const auto raised = store.add(evaluate_batch("b" + std::to_string(round), grader_rows("g", 30, 0.4), level1_only()));
    const std::string id = raised.at(0).alert_id;
    store.transition(id, ClaimAction{});
    std::atomic<int> wins{0}, conflicts{0};
    std::barrier sync(2);
    auto attempt = [&](Decision d) {
      sync.arrive_and_wait();
      try {
        std::optional<Points> adj;
        if (d == Decision::adjusted) adj = Points::from_double(5);
        store.transition(id, ResolveAction{d, adj, "r", ""});
        ++wins;
      } catch (const Error& e) {
        if (e.code() == ErrorCode::IllegalTransition) ++conflicts;
      }
    };
    std::thread t1(attempt, Decision::confirmed), t2(attempt, Decision::adjusted);
    t1.join();
    t2.join();
    EXPECT_EQ(wins.load(), 1);
    EXPECT_EQ(conflicts.load(), 1);
  }
}

TEST(Alerting, IdempotentReevaluationAndPersistence) {
  TempDir dir;
  auto rows = grader_rows("g", 30, 0.45);
  std::string id;
  {
    AlertStore store(dir / "alerts.jsonl");
    const auto first = store.add(evaluate_batch("b", rows, AlertPolicy{}));
    EXPECT_GT(first.size(), 1u);
    EXPECT_TRUE(store.add(evaluate_batch("b", rows, AlertPolicy{})).empty());
    id = first[0].alert_id;
    store.transition(id, ClaimAction{"x"});
    store.transition(id, ResolveAction{Decision::adjusted, Points::from_double(3), "x", "fixed"});
  }
  AlertStore reopened(dir / "alerts.jsonl");
  EXPECT_TRUE(reopened.add(evaluate_batch("b", rows, AlertPolicy{})).empty());
  const auto a = reopened.get(id);
  ASSERT_TRUE(a);
  EXPECT_EQ(a->state, AlertState::resolved);
  EXPECT_EQ(a->resolution->adjusted_points, Points::from_double(3));
  // full audit trail: raised, claimed, resolved events for this alert
  int events = 0;
  for (const auto& jl : parse_jsonl(read_file(dir / "alerts.jsonl"))) {
    const Json& ev = *jl.value;
    if ((ev.contains("alert_id") && ev["alert_id"] == id) || (ev.contains("alert") && ev["alert"]["alert_id"] == id)) {
      ++events;
    }
  }
  EXPECT_EQ(events, 3);
}

TEST(Alerting, ListingFiltersAndPages) {
  AlertStore store;
  store.add(evaluate_batch("b1", grader_rows("g", 30, 0.45), AlertPolicy{}));
  store.add(evaluate_batch("b2", grader_rows("h", 30, 0.45), AlertPolicy{}));
  const auto all = store.all();
  std::vector<std::string> paged;
  std::optional<std::string> cursor;
  do {
    const auto page = store.list({}, cursor, 7);
    EXPECT_LE(page.alerts.size(), 7u);
    for (const auto& a : page.alerts) paged.push_back(a.alert_id);
    cursor = page.next_cursor;
  } while (cursor);
  ASSERT_EQ(paged.size(), all.size());
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(paged[i], all[i].alert_id);

  AlertFilter open;
  open.state = AlertState::open;
  EXPECT_EQ(store.list(open, std::nullopt, 1000).alerts.size(), all.size());
  AlertFilter unknown;
  unknown.batch_id = "nope";
  EXPECT_TRUE(store.list(unknown, std::nullopt, 10).alerts.empty());
  AlertFilter kind;
  kind.kind = AlertKind::grader_outlier;
  EXPECT_EQ(store.list(kind, std::nullopt, 10).alerts.size(), 2u);
}

TEST(Alerting, Stats) {
  AlertStore store;
  std::vector<Alert> batch;
  for (int i = 0; i < 12; ++i) {
    auto rows = grader_rows("g" + std::to_string(i), 30, 0.45);
    for (auto& a : evaluate_batch("b", rows, level1_only())) batch.push_back(a);
  }
  store.add(batch);
  EXPECT_FALSE(alert_stats(store.all()).adjustment_rate);
  int i = 0;
  for (const auto& a : store.all()) {
    if (i >= 10) break;
    store.transition(a.alert_id, ClaimAction{});
    const bool adjust = i < 4;
    store.transition(a.alert_id, ResolveAction{adjust ? Decision::adjusted : Decision::confirmed,
                                               adjust ? std::optional<Points>(Points::from_double(2)) : std::nullopt,
                                               "r", ""});
    ++i;
  }
  const auto s = alert_stats(store.all());
  EXPECT_EQ(s.raised, 12u);
  EXPECT_EQ(s.resolved, 10u);
  EXPECT_DOUBLE_EQ(*s.adjustment_rate, 0.4);
}
