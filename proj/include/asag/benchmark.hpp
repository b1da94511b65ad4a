#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "asag/common.hpp"
#include "asag/metrics.hpp"
#include "asag/records.hpp"

namespace asag {

/// A grade triple joined with the fields of its record that the analysis needs.
struct JoinedTriple {
  GradeTriple triple;
  std::string course_id;
  Points max_points;
};

/// Joins triples to records via `lookup`; throws UnjoinedTriple for a
/// record_id it cannot resolve and PointsOutOfRange / RegraderIsOfficialGrader
/// for triples violating their invariants.
template <typename Lookup>
std::vector<JoinedTriple> join_triples(std::span<const GradeTriple> triples, Lookup&& lookup) {
  std::vector<JoinedTriple> out;
  out.reserve(triples.size());
  for (const auto& t : triples) {
    std::optional<GradingRecord> rec = lookup(t.record_id);
    if (!rec) throw Error(ErrorCode::UnjoinedTriple, "no record for triple '" + t.record_id + "'");
    auto errs = check_triple(t, *rec);
    if (!errs.empty()) throw Error(errs.front().code, t.record_id + ": " + errs.front().message);
    out.push_back({t, rec->course_id, rec->max_points});
  }
  return out;
}

struct DeviationRecord {
  std::string record_id;
  std::string course_id;
  std::string regrader_id;
  double d_hh = 0.0;  // |official - regrader| / max_points
  double d_hm = 0.0;  // |official - model| / max_points
  double official_norm = 0.0;
  double regrader_norm = 0.0;
  double model_norm = 0.0;
};

inline std::vector<DeviationRecord> deviations(std::span<const JoinedTriple> triples) {
  std::vector<DeviationRecord> out;
  out.reserve(triples.size());
  for (const auto& j : triples) {
    const double m = static_cast<double>(j.max_points.units());
    if (!(m > 0)) throw Error(ErrorCode::NonPositiveMaxPoints, j.triple.record_id);
    DeviationRecord d;
    d.record_id = j.triple.record_id;
    d.course_id = j.course_id;
    d.regrader_id = j.triple.regrader_id;
    d.official_norm = static_cast<double>(j.triple.official_points.units()) / m;
    d.regrader_norm = static_cast<double>(j.triple.regrader_points.units()) / m;
    d.model_norm = static_cast<double>(j.triple.model_points.units()) / m;
    d.d_hh = static_cast<double>(std::llabs(j.triple.official_points.units() - j.triple.regrader_points.units())) / m;
    d.d_hm = static_cast<double>(std::llabs(j.triple.official_points.units() - j.triple.model_points.units())) / m;
    out.push_back(std::move(d));
  }
  return out;
}

struct PercentileSummary {
  double mean = 0, std = 0, min = 0, p25 = 0, p50 = 0, p75 = 0, p90 = 0, p95 = 0, max = 0;
  std::size_t n = 0;
};

/// Percentile by linear interpolation between closest ranks of sorted data:
/// position h = (n - 1) * q.
inline double percentile_sorted(std::span<const double> sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = h - static_cast<double>(lo);
  if (frac == 0.0 || sorted[lo] == sorted[hi]) return sorted[lo];
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline PercentileSummary percentile_summary(std::span<const double> values) {
  if (values.empty()) throw Error(ErrorCode::EmptySeries, "percentile summary of empty sequence");
  std::vector<double> v(values.begin(), values.end());
  std::sort(v.begin(), v.end());
  PercentileSummary s;
  s.n = v.size();
  s.mean = mean(v);
  s.std = sample_std(v).value_or(0.0);
  s.min = v.front();
  s.max = v.back();
  s.p25 = percentile_sorted(v, 0.25);
  s.p50 = percentile_sorted(v, 0.50);
  s.p75 = percentile_sorted(v, 0.75);
  s.p90 = percentile_sorted(v, 0.90);
  s.p95 = percentile_sorted(v, 0.95);
  return s;
}

inline Json to_json(const PercentileSummary& s) {
  return Json{{"n", s.n},     {"mean", s.mean}, {"std", s.std}, {"min", s.min}, {"p25", s.p25},
              {"p50", s.p50}, {"p75", s.p75},   {"p90", s.p90}, {"p95", s.p95}, {"max", s.max}};
}

struct ReductionStats {
  double mean_reduction = 0.0;
  double median_reduction = 0.0;
  double abs_mean_gap = 0.0;
};

/// Relative reduction of the human-human deviation achieved by the model.
inline ReductionStats reduction_stats(const PercentileSummary& hh, const PercentileSummary& hm) {
  if (hh.n == 0 || hm.n == 0) throw Error(ErrorCode::EmptySeries, "reduction of empty summaries");
  if (hh.mean == 0.0 || hh.p50 == 0.0) throw Error(ErrorCode::ZeroBaseline, "human-human baseline is zero");
  return ReductionStats{(hh.mean - hm.mean) / hh.mean, (hh.p50 - hm.p50) / hh.p50, hh.mean - hm.mean};
}

inline Json to_json(const ReductionStats& r) {
  return Json{{"mean_reduction", r.mean_reduction},
              {"median_reduction", r.median_reduction},
              {"abs_mean_gap", r.abs_mean_gap}};
}

struct CourseComparison {
  std::string course_id;
  std::size_t n = 0;
  double rmse_hh = 0.0;
  double rmse_hm = 0.0;
  Correlation pearson_hh;
  Correlation pearson_hm;
  bool flagged_extreme = false;
};

/// Per-course RMSE and Pearson (normalized) of regrader vs official and model
/// vs official. A course is flagged when its rmse_hh exceeds the threshold.
inline std::vector<CourseComparison> course_comparison(std::span<const DeviationRecord> devs,
                                                       double extreme_threshold) {
  if (devs.empty()) throw Error(ErrorCode::EmptySeries, "no deviations to compare");
  if (!(extreme_threshold > 0.0 && extreme_threshold <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "extreme threshold must lie in (0, 1]");
  }
  std::map<std::string, std::vector<const DeviationRecord*>> by_course;
  for (const auto& d : devs) by_course[d.course_id].push_back(&d);

  std::vector<CourseComparison> out;
  for (const auto& [course, rows] : by_course) {
    std::vector<double> sq_hh, sq_hm, off, reg, mod;
    for (const auto* d : rows) {
      sq_hh.push_back(d->d_hh * d->d_hh);
      sq_hm.push_back(d->d_hm * d->d_hm);
      off.push_back(d->official_norm);
      reg.push_back(d->regrader_norm);
      mod.push_back(d->model_norm);
    }
    CourseComparison c;
    c.course_id = course;
    c.n = rows.size();
    c.rmse_hh = std::sqrt(mean(sq_hh));
    c.rmse_hm = std::sqrt(mean(sq_hm));
    if (rows.size() >= 2) {
      c.pearson_hh = pearson(reg, off);
      c.pearson_hm = pearson(mod, off);
    }
    c.flagged_extreme = c.rmse_hh > extreme_threshold;
    out.push_back(std::move(c));
  }
  return out;
}

inline std::set<std::string> flagged_courses(std::span<const CourseComparison> courses) {
  std::set<std::string> out;
  for (const auto& c : courses) {
    if (c.flagged_extreme) out.insert(c.course_id);
  }
  return out;
}

struct FilteredAnalysis {
  PercentileSummary hh;
  PercentileSummary hm;
  std::size_t rows_kept = 0;
  std::size_t rows_excluded = 0;
};

inline FilteredAnalysis filtered_analysis(std::span<const DeviationRecord> devs,
                                          const std::set<std::string>& flagged) {
  std::vector<double> hh, hm;
  for (const auto& d : devs) {
    if (flagged.contains(d.course_id)) continue;
    hh.push_back(d.d_hh);
    hm.push_back(d.d_hm);
  }
  if (hh.empty()) throw Error(ErrorCode::AllRowsExcluded, "every row belongs to a flagged course");
  return FilteredAnalysis{percentile_summary(hh), percentile_summary(hm), hh.size(), devs.size() - hh.size()};
}

enum class MwMethod { automatic, exact, normal };

struct MannWhitneyResult {
  double u_x = 0.0;
  double u_y = 0.0;
  double p_two_sided = 1.0;
  bool exact = false;
};

namespace detail {

// Midranks (1-based) of the pooled sample; also returns sum of t^3 - t over tie groups.
inline std::vector<double> midranks(std::span<const double> pooled, double& tie_term) {
  std::vector<std::size_t> idx(pooled.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return pooled[a] < pooled[b]; });
  std::vector<double> ranks(pooled.size());
  tie_term = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && pooled[idx[j + 1]] == pooled[idx[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    const double t = static_cast<double>(j - i + 1);
    tie_term += t * t * t - t;
    i = j + 1;
  }
  return ranks;
}

// Number of n-subsets of {1..n+m} for each value of U = rank_sum - n(n+1)/2.
inline std::vector<std::uint64_t> u_distribution(std::size_t n, std::size_t m) {
  // count[k][u]: ways to choose k of the first i items with U contribution u.
  const std::size_t umax = n * m;
  std::vector<std::vector<std::uint64_t>> count(n + 1, std::vector<std::uint64_t>(umax + 1, 0));
  count[0][0] = 1;
  for (std::size_t i = 0; i < n + m; ++i) {
    for (std::size_t k = std::min(n, i + 1); k >= 1; --k) {
      // Item i (0-based) chosen as the k-th smallest of x contributes i - (k - 1)
      // y-values below it.
      const std::size_t below = i - (k - 1);
      if (below > m) continue;
      for (std::size_t u = umax; u + 1 > below; --u) count[k][u] += count[k - 1][u - below];
    }
  }
  return count[n];
}

inline double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

}  // namespace detail

/// Two-sided Mann-Whitney U test with midrank ties.
///
/// Automatic mode uses the exact null distribution when |x| + |y| <= 20 and
/// there are no ties, otherwise the normal approximation with tie and
/// continuity corrections.
inline MannWhitneyResult mann_whitney(std::span<const double> x, std::span<const double> y,
                                      MwMethod method = MwMethod::automatic) {
  if (x.empty() || y.empty()) throw Error(ErrorCode::EmptySeries, "mann_whitney needs two nonempty samples");
  const std::size_t n = x.size();
  const std::size_t m = y.size();
  std::vector<double> pooled(x.begin(), x.end());
  pooled.insert(pooled.end(), y.begin(), y.end());
  double tie_term = 0.0;
  const auto ranks = detail::midranks(pooled, tie_term);
  double rank_sum_x = 0.0;
  for (std::size_t i = 0; i < n; ++i) rank_sum_x += ranks[i];

  MannWhitneyResult res;
  res.u_x = rank_sum_x - static_cast<double>(n) * static_cast<double>(n + 1) / 2.0;
  res.u_y = static_cast<double>(n) * static_cast<double>(m) - res.u_x;

  const bool ties = tie_term > 0.0;
  bool use_exact = method == MwMethod::exact || (method == MwMethod::automatic && n + m <= 20 && !ties);
  if (use_exact) {
    if (ties) throw Error(ErrorCode::InvalidArgument, "exact Mann-Whitney requires untied data");
    if (n + m > 40) throw Error(ErrorCode::InvalidArgument, "exact Mann-Whitney limited to |x| + |y| <= 40");
    const auto dist = detail::u_distribution(n, m);
    const auto u = static_cast<std::size_t>(std::llround(res.u_x));
    std::uint64_t le = 0, ge = 0, total = 0;
    for (std::size_t k = 0; k < dist.size(); ++k) {
      total += dist[k];
      if (k <= u) le += dist[k];
      if (k >= u) ge += dist[k];
    }
    res.p_two_sided = std::min(1.0, 2.0 * static_cast<double>(std::min(le, ge)) / static_cast<double>(total));
    res.exact = true;
    return res;
  }

  const double nd = static_cast<double>(n);
  const double md = static_cast<double>(m);
  const double big_n = nd + md;
  const double mu = nd * md / 2.0;
  double var = nd * md / 12.0 * ((big_n + 1.0) - tie_term / (big_n * (big_n - 1.0)));
  if (big_n < 2.0) var = 0.0;
  if (!(var > 0.0)) {
    res.p_two_sided = 1.0;
    return res;
  }
  const double z = std::max(0.0, std::fabs(res.u_x - mu) - 0.5) / std::sqrt(var);
  res.p_two_sided = std::min(1.0, 2.0 * detail::normal_sf(z));
  return res;
}

inline Json to_json(const MannWhitneyResult& r) {
  return Json{{"u_x", r.u_x}, {"u_y", r.u_y}, {"p_two_sided", r.p_two_sided}, {"method", r.exact ? "exact" : "normal"}};
}

/// Regrader vs official, model vs official and model vs the mean of both
/// human grades, on both scales.
struct ComparisonTable {
  MetricsReport human_vs_human;
  MetricsReport human_vs_model;
  MetricsReport humans_avg_vs_model;
};

inline ComparisonTable comparison_table(std::span<const JoinedTriple> triples) {
  std::vector<EvalRow> hh, hm, avg;
  for (const auto& j : triples) {
    const double off = j.triple.official_points.value();
    const double reg = j.triple.regrader_points.value();
    const double mod = j.triple.model_points.value();
    const double mx = j.max_points.value();
    const std::string key = j.max_points.to_string();
    hh.push_back({reg, off, mx, key, j.course_id});
    hm.push_back({mod, off, mx, key, j.course_id});
    avg.push_back({mod, (off + reg) / 2.0, mx, key, j.course_id});
  }
  return {report(hh, Grouping::none), report(hm, Grouping::none), report(avg, Grouping::none)};
}

}  // namespace asag
