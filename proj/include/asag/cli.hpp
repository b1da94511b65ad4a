#pragma once

#include <atomic>
#include <chrono>
#include <csignal>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "asag/config.hpp"
#include "asag/graders.hpp"
#include "asag/manifest.hpp"
#include "asag/record_store.hpp"
#include "asag/remote_grader.hpp"
#include "asag/reports.hpp"
#include "asag/service.hpp"
#include "asag/splitter.hpp"

namespace asag::cli {

namespace fs = std::filesystem;

inline std::atomic<bool>& stop_requested() {
  static std::atomic<bool> flag{false};
  return flag;
}

struct Globals {
  std::optional<fs::path> config;
  std::optional<fs::path> store;
  fs::path output_dir = "out";
  std::uint64_t seed = 42;
};

/// Writes outputs and the manifest for one command.
class Run {
 public:
  Run(std::string command, std::vector<std::string> argv, const Globals& g)
      : out_dir_(g.output_dir) {
    manifest_.command = std::move(command);
    manifest_.argv = std::move(argv);
    manifest_.seed = g.seed;
    manifest_.started_at = utc_timestamp();
  }

  void input(const fs::path& p) { manifest_.inputs.push_back(RunManifest::describe(p)); }
  void config(Json c) { manifest_.config = std::move(c); }

  fs::path write(const std::string& name, std::string_view content) {
    const fs::path p = out_dir_ / name;
    write_file(p, content);
    written_.push_back(p);
    return p;
  }

  void finish() {
    for (const auto& p : written_) manifest_.outputs.push_back(RunManifest::describe(p));
    manifest_.finished_at = utc_timestamp();
    write_file(out_dir_ / (manifest_.command + ".manifest.json"), manifest_.to_json().dump(2) + "\n");
  }

 private:
  fs::path out_dir_;
  RunManifest manifest_;
  std::vector<fs::path> written_;
};

inline FileFormat format_for(const fs::path& p, const std::string& flag) {
  if (!flag.empty()) return parse_format(flag);
  return p.extension() == ".csv" ? FileFormat::csv : FileFormat::jsonl;
}

inline ServiceConfig load_config(const Globals& g) {
  ServiceConfig c = ServiceConfig::load(g.config);
  if (g.store) c.store_dir = *g.store;
  return c;
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Short-answer grading pipeline: ingest, split, grade, evaluate, benchmark, serve"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON config file");
  app.add_option("--store", g.store, "Store directory (overrides config)");
  app.add_option("--output-dir", g.output_dir, "Directory for outputs and manifests");
  app.add_option("--seed", g.seed, "Random seed for split");

  auto* ingest_cmd = app.add_subcommand("ingest", "Validate and store records from a JSONL or CSV file");
  fs::path ingest_path;
  std::string ingest_format;
  ingest_cmd->add_option("path", ingest_path)->required();
  ingest_cmd->add_option("--format", ingest_format, "jsonl or csv (default: by extension)");

  auto* export_cmd = app.add_subcommand("export", "Write all stored records to a file");
  fs::path export_path;
  std::string export_format;
  export_cmd->add_option("path", export_path)->required();
  export_cmd->add_option("--format", export_format, "jsonl or csv (default: by extension)");

  auto* split_cmd = app.add_subcommand("split", "Partition the store into train/develop/test splits");
  SplitConfig split_cfg;
  split_cmd->add_option("--frac-train", split_cfg.frac_train);
  split_cmd->add_option("--frac-develop", split_cfg.frac_develop);
  split_cmd->add_option("--frac-test-uq", split_cfg.frac_test_unseen_questions);
  split_cmd->add_option("--frac-test-uc", split_cfg.frac_test_unseen_courses);

  auto* grade_cmd = app.add_subcommand("grade", "Grade records and write predictions.jsonl");
  std::optional<fs::path> grade_split;
  std::vector<std::string> grade_labels{"test_unseen_questions", "test_unseen_courses"};
  std::string grader_kind = "baseline";
  std::string endpoint;
  std::optional<fs::path> replay_path;
  unsigned threads = 1;
  grade_cmd->add_option("--split", grade_split, "Split assignment file; without it every record is graded");
  grade_cmd->add_option("--label", grade_labels, "Split labels to grade (repeatable)");
  grade_cmd->add_option("--grader", grader_kind)->check(CLI::IsMember({"baseline", "remote", "replay"}));
  grade_cmd->add_option("--endpoint", endpoint, "Remote grader base URL");
  grade_cmd->add_option("--replay", replay_path, "JSONL of recorded grades for the replay grader");
  grade_cmd->add_option("--threads", threads);

  auto* eval_cmd = app.add_subcommand("eval", "Experiment-1 metrics of predictions against official grades");
  fs::path eval_predictions;
  std::optional<fs::path> eval_split;
  std::string grouping = "by_max_points";
  eval_cmd->add_option("--predictions", eval_predictions)->required();
  eval_cmd->add_option("--split", eval_split);
  eval_cmd->add_option("--grouping", grouping)->check(CLI::IsMember({"none", "by_max_points", "by_course"}));

  auto* bench_cmd = app.add_subcommand("benchmark", "Human-vs-human and human-vs-model deviation analysis");
  std::optional<fs::path> triples_path;
  double threshold = 0.40;
  bench_cmd->add_option("--triples", triples_path, "Triple JSONL (default: regrade fields of the records)");
  bench_cmd->add_option("--threshold", threshold);

  auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
  std::optional<std::string> listen;
  serve_cmd->add_option("--listen", listen, "host:port");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }

  try {
    const ServiceConfig cfg = load_config(g);
    auto open_store = [&] { return RecordStore::open_dir(cfg.store_dir); };

    if (*ingest_cmd) {
      Run run("ingest", args, g);
      RecordStore store = open_store();
      const FileFormat fmt = format_for(ingest_path, ingest_format);
      run.input(ingest_path);
      run.config(Json{{"path", ingest_path.string()}, {"format", fmt == FileFormat::csv ? "csv" : "jsonl"},
                      {"store", cfg.store_dir.string()}});
      const IngestReport rep = ingest(store, ingest_path, fmt);
      run.write("ingest_report.json", to_json(rep).dump(2) + "\n");
      run.finish();
      out << "ingested " << rep.ingested << ", duplicates " << rep.duplicates() << ", rejected "
          << rep.rejected.size() - rep.duplicates() << "\n";
      for (const auto& r : rep.rejected) {
        for (const auto& e : r.errors) {
          if (e.code == ErrorCode::DuplicateRecordId) continue;
          err << ingest_path.string() << ":" << r.line << ": " << to_string(e.code) << " " << e.field << ": "
              << e.message << "\n";
        }
      }
      return rep.has_invalid_rows() ? 1 : 0;
    }

    if (*export_cmd) {
      Run run("export", args, g);
      RecordStore store = open_store();
      const FileFormat fmt = format_for(export_path, export_format);
      run.config(Json{{"path", export_path.string()}, {"format", fmt == FileFormat::csv ? "csv" : "jsonl"},
                      {"store", cfg.store_dir.string()}});
      run.input(store.log_path());
      export_records(store, export_path, fmt);
      run.finish();
      out << "exported " << store.size() << " records to " << export_path.string() << "\n";
      return 0;
    }

    if (*split_cmd) {
      Run run("split", args, g);
      RecordStore store = open_store();
      split_cfg.seed = g.seed;
      split_cfg.validate();
      run.input(store.log_path());
      run.config(split_cfg.to_json());
      const auto records = store.snapshot();
      const SplitAssignment a = partition(records, split_cfg);
      const AuditReport audit_rep = audit(a, records);
      run.write("split.jsonl", to_jsonl(a));
      Json summary = to_json(audit_rep);
      summary["warnings"] = a.warnings;
      run.write("split_audit.json", summary.dump(2) + "\n");
      run.finish();
      for (const auto& w : a.warnings) err << "warning: " << w << "\n";
      for (Split s : kAllSplits) out << to_string(s) << ": " << a.count(s) << "\n";
      if (!audit_rep.ok()) {
        err << "error: audit found " << audit_rep.violations.size() << " violations\n";
        return 1;
      }
      return 0;
    }

    if (*grade_cmd) {
      Run run("grade", args, g);
      RecordStore store = open_store();
      run.input(store.log_path());
      RemoteGraderConfig rc = cfg.grader;
      if (!endpoint.empty()) rc.endpoint = endpoint;
      Json c{{"grader", grader_kind}, {"threads", threads}};
      std::unique_ptr<Grader> grader;
      if (grader_kind == "baseline") {
        grader = std::make_unique<BaselineGrader>();
      } else if (grader_kind == "remote") {
        if (rc.endpoint.empty()) throw Error(ErrorCode::InvalidArgument, "remote grader needs --endpoint");
        grader = std::make_unique<RemoteGrader>(rc);
        c["remote"] = rc.to_json();
      } else {
        if (!replay_path) throw Error(ErrorCode::InvalidArgument, "replay grader needs --replay");
        run.input(*replay_path);
        grader = std::make_unique<ReplayGrader>(ReplayGrader::from_file(*replay_path));
      }
      std::vector<GradingRecord> selected;
      const auto records = store.snapshot();
      if (grade_split) {
        run.input(*grade_split);
        const SplitAssignment a = load_split(*grade_split);
        std::set<Split> wanted;
        for (const auto& l : grade_labels) wanted.insert(parse_split(l));
        c["labels"] = grade_labels;
        for (const auto& r : records) {
          auto it = a.labels.find(r.record_id);
          if (it != a.labels.end() && wanted.contains(it->second)) selected.push_back(r);
        }
      } else {
        selected = records;
      }
      run.config(c);
      std::vector<GradingTask> tasks;
      tasks.reserve(selected.size());
      for (const auto& r : selected) tasks.push_back(task_from(r));
      const BatchOutcome outcome = batch_grade(tasks, *grader, BatchOptions{threads, {}});
      std::string lines;
      std::size_t clamped = 0;
      for (std::size_t i = 0; i < tasks.size(); ++i) {
        const auto& res = outcome.results[i];
        if (!res) continue;
        clamped += res->clamped ? 1 : 0;
        lines += Json{{"record_id", tasks[i].task_id}, {"points", res->points}, {"raw_points", res->raw_points},
                      {"clamped", res->clamped}}
                     .dump();
        lines += '\n';
      }
      run.write("predictions.jsonl", lines);
      Json failures = Json::array();
      for (const auto& f : outcome.failures) {
        failures.push_back(Json{{"record_id", tasks[f.index].task_id}, {"code", to_string(f.code)}, {"message", f.message}});
      }
      run.write("grade_summary.json",
                Json{{"grader", grader->name()}, {"graded", tasks.size() - outcome.failures.size()},
                     {"clamped", clamped}, {"failures", failures}}
                        .dump(2) + "\n");
      run.finish();
      out << "graded " << tasks.size() - outcome.failures.size() << " of " << tasks.size() << " (" << clamped
          << " clamped)\n";
      for (const auto& f : outcome.failures) {
        err << tasks[f.index].task_id << ": " << to_string(f.code) << ": " << f.message << "\n";
      }
      return outcome.failures.empty() ? 0 : 1;
    }

    if (*eval_cmd) {
      Run run("eval", args, g);
      RecordStore store = open_store();
      run.input(store.log_path());
      run.input(eval_predictions);
      std::optional<SplitAssignment> split;
      if (eval_split) {
        run.input(*eval_split);
        split = load_split(*eval_split);
      }
      run.config(Json{{"grouping", grouping}});
      const auto records = store.snapshot();
      const Json rep = experiment1_report(records, load_predictions(eval_predictions), split, parse_grouping(grouping));
      const std::string text = render_experiment1(rep);
      run.write("experiment1.json", report_bytes(rep));
      run.write("experiment1.txt", text);
      run.finish();
      out << text;
      return 0;
    }

    if (*bench_cmd) {
      Run run("benchmark", args, g);
      RecordStore store = open_store();
      run.input(store.log_path());
      if (triples_path) run.input(*triples_path);
      run.config(Json{{"threshold", threshold}});
      const auto triples = load_joined_triples(store, triples_path);
      const Json rep = benchmark_report(triples, threshold);
      const std::string text = render_benchmark(rep);
      run.write("benchmark.json", report_bytes(rep));
      run.write("benchmark.txt", text);
      run.finish();
      out << text;
      return 0;
    }

    if (*serve_cmd) {
      ServiceConfig sc = cfg;
      if (listen) sc.set_listen(*listen);
      Service service(sc);
      const int port = service.start();
      out << "listening on " << sc.host << ":" << port << "\n" << std::flush;
      std::signal(SIGINT, [](int) { stop_requested() = true; });
      std::signal(SIGTERM, [](int) { stop_requested() = true; });
      while (!stop_requested()) std::this_thread::sleep_for(std::chrono::milliseconds(100));
      service.stop();
      return 0;
    }
  } catch (const Error& e) {
    err << "error: " << to_string(e.code()) << ": " << e.what() << "\n";
    return is_io_error(e.code()) ? 2 : 1;
  } catch (const fs::filesystem_error& e) {
    err << "error: IoError: " << e.what() << "\n";
    return 2;
  } catch (const Json::exception& e) {
    err << "error: InvalidConfig: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace asag::cli
