#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "asag/benchmark.hpp"
#include "asag/common.hpp"
#include "asag/metrics.hpp"
#include "asag/record_store.hpp"
#include "asag/records.hpp"
#include "asag/splitter.hpp"

namespace asag {

/// Plain-text table with left-aligned first column and right-aligned cells.
class TextTable {
 public:
  explicit TextTable(std::vector<std::string> header) : rows_{std::move(header)} {}

  void add(std::vector<std::string> row) { rows_.push_back(std::move(row)); }

  std::string render() const {
    std::vector<std::size_t> width;
    for (const auto& r : rows_) {
      if (width.size() < r.size()) width.resize(r.size(), 0);
      for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    }
    std::ostringstream out;
    auto line = [&](const std::vector<std::string>& r) {
      for (std::size_t c = 0; c < width.size(); ++c) {
        const std::string cell = c < r.size() ? r[c] : "";
        const std::string pad(width[c] - cell.size(), ' ');
        if (c) out << "  ";
        out << (c == 0 ? cell + pad : pad + cell);
      }
      out << '\n';
    };
    line(rows_.front());
    std::size_t total = 0;
    for (auto w : width) total += w;
    out << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    for (std::size_t i = 1; i < rows_.size(); ++i) line(rows_[i]);
    return out.str();
  }

 private:
  std::vector<std::vector<std::string>> rows_;
};

inline std::string fixed4(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline std::string fixed4(const Correlation& c) { return c.value ? fixed4(*c.value) : "undefined"; }

inline std::string percent1(double share) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.1f%%", share * 100.0);
  return buf;
}

/// Loads {"record_id", "points"} JSONL predictions.
inline std::map<std::string, Points> load_predictions(const std::filesystem::path& path) {
  std::map<std::string, Points> out;
  for (const auto& jl : parse_jsonl(read_file(path))) {
    if (!jl.value || !jl.value->is_object() || !jl.value->contains("record_id") || !jl.value->contains("points")) {
      throw Error(ErrorCode::MalformedRow, path.string() + ": line " + std::to_string(jl.line));
    }
    out[(*jl.value)["record_id"].get<std::string>()] = (*jl.value)["points"].get<Points>();
  }
  return out;
}

inline SplitAssignment load_split(const std::filesystem::path& path) {
  SplitAssignment a;
  for (const auto& jl : parse_jsonl(read_file(path))) {
    if (!jl.value || !jl.value->contains("record_id") || !jl.value->contains("split")) {
      throw Error(ErrorCode::MalformedRow, path.string() + ": line " + std::to_string(jl.line));
    }
    a.labels[(*jl.value)["record_id"].get<std::string>()] = parse_split((*jl.value)["split"].get<std::string>());
  }
  return a;
}

inline std::string split_title(std::string_view label) {
  if (label == "develop") return "S develop";
  if (label == "test_unseen_questions") return "S test, unseen questions";
  if (label == "test_unseen_courses") return "S test, unseen courses";
  if (label == "train") return "S train";
  return std::string(label);
}

/// Experiment-1 evaluation: metrics of predictions against official grades,
/// one column per split (or a single "all" column without a split file).
inline Json experiment1_report(std::span<const GradingRecord> records, const std::map<std::string, Points>& predictions,
                               const std::optional<SplitAssignment>& split, Grouping grouping) {
  std::map<std::string, std::vector<EvalRow>> columns;
  std::size_t missing = 0;
  for (const auto& r : records) {
    std::string label = "all";
    if (split) {
      auto it = split->labels.find(r.record_id);
      if (it == split->labels.end()) continue;
      label = to_string(it->second);
    }
    auto p = predictions.find(r.record_id);
    if (p == predictions.end()) {
      if (split && label != "train") ++missing;
      continue;
    }
    columns[label].push_back(
        {p->second.value(), r.official_points.value(), r.max_points.value(), r.max_points.to_string(), r.course_id});
  }
  std::set<std::string> known;
  for (const auto& r : records) known.insert(r.record_id);
  for (const auto& [id, _] : predictions) {
    if (!known.contains(id)) {
      throw Error(ErrorCode::UnknownRecordId, "prediction for unknown record '" + id + "'");
    }
  }
  if (columns.empty()) throw Error(ErrorCode::EmptySeries, "no record has a prediction");

  std::vector<std::string> order;
  for (std::string_view l : {"develop", "test_unseen_questions", "test_unseen_courses", "train", "all"}) {
    if (columns.contains(std::string(l))) order.emplace_back(l);
  }
  Json splits = Json::array();
  for (const auto& label : order) {
    splits.push_back(Json{{"split", label}, {"report", to_json(report(columns[label], grouping))}});
  }
  Json j = Json::object();
  j["kind"] = "experiment1";
  j["grouping"] = to_string(grouping);
  j["records_with_predictions"] = [&] {
    std::size_t n = 0;
    for (const auto& kv : columns) n += kv.second.size();
    return n;
  }();
  j["missing_predictions"] = missing;
  j["splits"] = std::move(splits);
  return j;
}

inline std::string corr_text(const Json& c) { return c.is_number() ? fixed4(c.get<double>()) : "undefined"; }

inline std::string render_experiment1(const Json& rep) {
  std::vector<std::string> header{""};
  for (const auto& s : rep["splits"]) header.push_back(split_title(s["split"].get<std::string>()));
  TextTable summary(header);
  auto row = [&](const std::string& name, const char* key, bool corr) {
    std::vector<std::string> r{name};
    for (const auto& s : rep["splits"]) {
      const Json& v = s["report"][key];
      r.push_back(corr ? corr_text(v) : fixed4(v.get<double>()));
    }
    summary.add(std::move(r));
  };
  row("MAE (points)", "mae_points", false);
  row("RMSE (points)", "rmse_points", false);
  row("Correlation", "corr_points", true);
  row("MAE (normalized)", "mae_norm", false);
  row("RMSE (normalized)", "rmse_norm", false);
  row("Correlation (normalized)", "corr_norm", true);

  std::ostringstream out;
  out << "Summary of experiment 1 (n per column: ";
  bool first = true;
  for (const auto& s : rep["splits"]) {
    out << (first ? "" : ", ") << s["report"]["n"].get<std::size_t>();
    first = false;
  }
  out << ")\n" << summary.render();

  const std::string grouping = rep["grouping"].get<std::string>();
  if (grouping != "none") {
    const std::string key_title = grouping == "by_max_points" ? "Max number of points" : "Course";
    for (const auto& s : rep["splits"]) {
      TextTable t({split_title(s["split"].get<std::string>()) + " / " + key_title, "Percentage of Data",
                   "MAE (normalized)", "Std"});
      for (const auto& g : s["report"]["groups"]) {
        t.add({g["key"].get<std::string>(), percent1(g["share_of_data"].get<double>()),
               fixed4(g["mae_norm"].get<double>()),
               g["std_abs_err_norm"].is_null() ? "n/a" : fixed4(g["std_abs_err_norm"].get<double>())});
      }
      out << '\n' << t.render();
    }
  }
  return out.str();
}

inline constexpr const char* kPercentileMethod = "linear interpolation between closest ranks, h = (n - 1) q";

/// Human benchmark analysis over grade triples: deviation summaries before
/// and after excluding extreme regraders, per-course comparison, reduction
/// statistics, the three-way comparison table and a Mann-Whitney U test of
/// d(hh) against d(hm).
inline Json benchmark_report(std::span<const JoinedTriple> triples, double threshold) {
  const auto devs = deviations(triples);
  if (devs.empty()) throw Error(ErrorCode::EmptySeries, "no grade triples");
  std::vector<double> hh, hm;
  for (const auto& d : devs) {
    hh.push_back(d.d_hh);
    hm.push_back(d.d_hm);
  }
  const auto courses = course_comparison(devs, threshold);
  const auto flagged = flagged_courses(courses);
  const auto sum_hh = percentile_summary(hh);
  const auto sum_hm = percentile_summary(hm);

  auto reduction_json = [](const PercentileSummary& a, const PercentileSummary& b) -> Json {
    try {
      return to_json(reduction_stats(a, b));
    } catch (const Error& e) {
      return Json{{"error", e.what()}};
    }
  };
  auto comparison_json = [](const ComparisonTable& t) {
    return Json{{"human_vs_human", to_json(t.human_vs_human)},
                {"human_vs_model", to_json(t.human_vs_model)},
                {"humans_avg_vs_model", to_json(t.humans_avg_vs_model)}};
  };

  Json filtered = nullptr;
  Json comparison_filtered = nullptr;
  std::size_t rows_filtered = 0;
  try {
    const auto fa = filtered_analysis(devs, flagged);
    rows_filtered = fa.rows_kept;
    filtered = Json{{"rows", fa.rows_kept},
                    {"rows_excluded", fa.rows_excluded},
                    {"d_hh", to_json(fa.hh)},
                    {"d_hm", to_json(fa.hm)},
                    {"reduction", reduction_json(fa.hh, fa.hm)}};
    std::vector<JoinedTriple> kept;
    for (const auto& t : triples) {
      if (!flagged.contains(t.course_id)) kept.push_back(t);
    }
    comparison_filtered = comparison_json(comparison_table(kept));
  } catch (const Error& e) {
    if (e.code() != ErrorCode::AllRowsExcluded) throw;
    filtered = Json{{"error", e.what()}};
  }

  Json course_rows = Json::array();
  for (const auto& c : courses) {
    course_rows.push_back(Json{{"course_id", c.course_id},
                               {"n", c.n},
                               {"rmse_hh", c.rmse_hh},
                               {"rmse_hm", c.rmse_hm},
                               {"pearson_hh", to_json(c.pearson_hh)},
                               {"pearson_hm", to_json(c.pearson_hm)},
                               {"flagged_extreme", c.flagged_extreme}});
  }

  Json j = Json::object();
  j["kind"] = "benchmark";
  j["provenance"] = Json{{"extreme_threshold", threshold},
                         {"exclusion_rule", "course flagged when normalized rmse(official, regrader) > threshold; "
                                            "reconstructed criterion, not taken from the source data"},
                         {"percentile_method", kPercentileMethod},
                         {"std", "sample standard deviation (n - 1)"},
                         {"rows_total", devs.size()},
                         {"rows_after_exclusion", rows_filtered},
                         {"flagged_courses", Json(std::vector<std::string>(flagged.begin(), flagged.end()))}};
  j["summary"] = Json{{"rows", devs.size()}, {"d_hh", to_json(sum_hh)}, {"d_hm", to_json(sum_hm)}};
  j["reduction"] = reduction_json(sum_hh, sum_hm);
  j["filtered"] = std::move(filtered);
  j["courses"] = std::move(course_rows);
  j["comparison_all"] = comparison_json(comparison_table(triples));
  j["comparison_filtered"] = std::move(comparison_filtered);
  j["mann_whitney"] = to_json(mann_whitney(hh, hm));
  return j;
}

inline std::string render_benchmark(const Json& rep) {
  std::ostringstream out;
  auto summary_table = [&](const Json& hh, const Json& hm, std::size_t rows) {
    TextTable t({"", "Mean", "Std", "Min", "25%", "50%", "75%", "90%", "95%", "Max"});
    for (const auto& [name, s] : {std::pair<std::string, const Json*>{"d(hh)", &hh}, {"d(hm)", &hm}}) {
      t.add({name, fixed4((*s)["mean"].get<double>()), fixed4((*s)["std"].get<double>()),
             fixed4((*s)["min"].get<double>()), fixed4((*s)["p25"].get<double>()), fixed4((*s)["p50"].get<double>()),
             fixed4((*s)["p75"].get<double>()), fixed4((*s)["p90"].get<double>()), fixed4((*s)["p95"].get<double>()),
             fixed4((*s)["max"].get<double>())});
    }
    out << "# of rows graded: " << rows << '\n' << t.render();
  };
  auto reduction_lines = [&](const Json& r) {
    if (r.contains("error")) {
      out << "reduction: " << r["error"].get<std::string>() << '\n';
      return;
    }
    out << "mean reduction: " << percent1(r["mean_reduction"].get<double>())
        << "  median reduction: " << percent1(r["median_reduction"].get<double>())
        << "  mean gap: " << fixed4(r["abs_mean_gap"].get<double>()) << '\n';
  };
  auto comparison = [&](const Json& c) {
    TextTable t({"Metric", "Human vs. Human", "Human vs. Model", "Average of Humans vs. Model"});
    const Json* cols[] = {&c["human_vs_human"], &c["human_vs_model"], &c["humans_avg_vs_model"]};
    auto line = [&](const std::string& name, const char* key, bool corr) {
      std::vector<std::string> r{name};
      for (const Json* col : cols) r.push_back(corr ? corr_text((*col)[key]) : fixed4((*col)[key].get<double>()));
      t.add(std::move(r));
    };
    line("MAE (points)", "mae_points", false);
    line("RMSE (points)", "rmse_points", false);
    line("Correlation (points)", "corr_points", true);
    line("MAE (normalized)", "mae_norm", false);
    line("RMSE (normalized)", "rmse_norm", false);
    line("Correlation (normalized)", "corr_norm", true);
    out << t.render();
  };

  const Json& prov = rep["provenance"];
  out << "Summary of deviations\n";
  summary_table(rep["summary"]["d_hh"], rep["summary"]["d_hm"], rep["summary"]["rows"].get<std::size_t>());
  reduction_lines(rep["reduction"]);

  out << "\nExcluding extreme regraders (threshold " << fixed4(prov["extreme_threshold"].get<double>()) << ")\n";
  if (rep["filtered"].contains("error")) {
    out << rep["filtered"]["error"].get<std::string>() << '\n';
  } else {
    summary_table(rep["filtered"]["d_hh"], rep["filtered"]["d_hm"], rep["filtered"]["rows"].get<std::size_t>());
    reduction_lines(rep["filtered"]["reduction"]);
  }

  out << "\nRegrading evaluation on course level (normalized)\n";
  TextTable courses({"Course", "RMSE human vs. human", "RMSE human vs. model", "Pearson human vs. human",
                     "Pearson human vs. model", "Extreme"});
  for (const auto& c : rep["courses"]) {
    courses.add({c["course_id"].get<std::string>(), fixed4(c["rmse_hh"].get<double>()),
                 fixed4(c["rmse_hm"].get<double>()), corr_text(c["pearson_hh"]), corr_text(c["pearson_hm"]),
                 c["flagged_extreme"].get<bool>() ? "yes" : ""});
  }
  out << courses.render();

  out << "\nComparison, all regraders included (" << prov["rows_total"].get<std::size_t>() << " rows)\n";
  comparison(rep["comparison_all"]);
  if (!rep["comparison_filtered"].is_null()) {
    out << "\nComparison, extreme regraders excluded (" << prov["rows_after_exclusion"].get<std::size_t>()
        << " rows)\n";
    comparison(rep["comparison_filtered"]);
  }

  const Json& mw = rep["mann_whitney"];
  char buf[160];
  std::snprintf(buf, sizeof buf, "\nMann-Whitney U, d(hh) vs d(hm): U = %.1f, two-sided p = %.3g (%s)\n",
                mw["u_x"].get<double>(), mw["p_two_sided"].get<double>(), mw["method"].get<std::string>().c_str());
  out << buf;
  out << "Provenance: percentile method " << prov["percentile_method"].get<std::string>() << "; "
      << prov["exclusion_rule"].get<std::string>() << '\n';
  return out.str();
}

/// Triples either from a separate JSONL file or from the records' own
/// regrade/model fields.
inline std::vector<JoinedTriple> load_joined_triples(const RecordStore& store,
                                                     const std::optional<std::filesystem::path>& triples_path) {
  std::vector<GradeTriple> triples;
  if (triples_path) {
    for (const auto& jl : parse_jsonl(read_file(*triples_path))) {
      if (!jl.value) throw Error(ErrorCode::MalformedRow, triples_path->string() + ": line " + std::to_string(jl.line));
      const std::string id = jl.value->value("record_id", "");
      auto rec = store.find(id);
      if (!rec) throw Error(ErrorCode::UnjoinedTriple, "no record for triple '" + id + "'");
      triples.push_back(triple_from_json(*jl.value, &*rec));
    }
  } else {
    for (const auto& r : store.snapshot()) {
      if (auto t = triple_of(r)) triples.push_back(*t);
    }
  }
  return join_triples(triples, [&](const std::string& id) { return store.find(id); });
}

}  // namespace asag
