#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "asag/common.hpp"

namespace asag {

enum class Scale { points, normalized };

/// Predictions and truths with per-item max points for normalization.
class PairedSeries {
 public:
  PairedSeries(std::vector<double> predictions, std::vector<double> truths, std::vector<double> max_points)
      : predictions_(std::move(predictions)), truths_(std::move(truths)), max_points_(std::move(max_points)) {
    if (predictions_.empty()) throw Error(ErrorCode::EmptySeries, "paired series is empty");
    if (predictions_.size() != truths_.size() || predictions_.size() != max_points_.size()) {
      throw Error(ErrorCode::LengthMismatch, "predictions, truths and max_points differ in length");
    }
    for (double m : max_points_) {
      if (!(m > 0.0)) throw Error(ErrorCode::NonPositiveMaxPoints, "max_points must be > 0");
    }
  }

  /// Constant max_points for every item.
  PairedSeries(std::vector<double> predictions, std::vector<double> truths, double max_points = 1.0)
      : PairedSeries(predictions, std::move(truths), std::vector<double>(predictions.size(), max_points)) {}

  std::size_t size() const { return predictions_.size(); }

  std::vector<double> predictions(Scale scale) const { return scaled(predictions_, scale); }
  std::vector<double> truths(Scale scale) const { return scaled(truths_, scale); }

  std::vector<double> errors(Scale scale) const {
    std::vector<double> e(size());
    for (std::size_t i = 0; i < size(); ++i) {
      e[i] = predictions_[i] - truths_[i];
      if (scale == Scale::normalized) e[i] /= max_points_[i];
    }
    return e;
  }

 private:
  std::vector<double> scaled(const std::vector<double>& v, Scale scale) const {
    if (scale == Scale::points) return v;
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / max_points_[i];
    return out;
  }

  std::vector<double> predictions_;
  std::vector<double> truths_;
  std::vector<double> max_points_;
};

/// Pearson correlation, or nothing when either side has zero variance.
struct Correlation {
  std::optional<double> value;

  bool defined() const { return value.has_value(); }
};

inline Json to_json(const Correlation& c) {
  if (c.value) return Json(*c.value);
  return Json{{"undefined", true}};
}

inline double mean(std::span<const double> v) {
  if (v.empty()) throw Error(ErrorCode::EmptySeries, "mean of empty sequence");
  return pairwise_sum(v) / static_cast<double>(v.size());
}

/// Sample standard deviation (n - 1); nullopt for fewer than two values.
inline std::optional<double> sample_std(std::span<const double> v) {
  if (v.size() < 2) return std::nullopt;
  const double m = mean(v);
  std::vector<double> sq(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) sq[i] = (v[i] - m) * (v[i] - m);
  return std::sqrt(pairwise_sum(sq) / static_cast<double>(v.size() - 1));
}

inline double mae(const PairedSeries& s, Scale scale) {
  auto e = s.errors(scale);
  for (auto& x : e) x = std::fabs(x);
  return mean(e);
}

inline double rmse(const PairedSeries& s, Scale scale) {
  auto e = s.errors(scale);
  for (auto& x : e) x *= x;
  return std::sqrt(mean(e));
}

/// Sample Pearson correlation of two equally long sequences.
inline Correlation pearson(std::span<const double> x, std::span<const double> y) {
  if (x.empty()) throw Error(ErrorCode::EmptySeries, "pearson of empty series");
  if (x.size() != y.size()) throw Error(ErrorCode::LengthMismatch, "pearson inputs differ in length");
  if (x.size() < 2) throw Error(ErrorCode::TooShort, "pearson needs at least two pairs");
  auto constant = [](std::span<const double> v) {
    return std::all_of(v.begin(), v.end(), [&](double a) { return a == v.front(); });
  };
  if (constant(x) || constant(y)) return {};
  const double mx = mean(x);
  const double my = mean(y);
  std::vector<double> sxy(x.size()), sxx(x.size()), syy(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxy[i] = dx * dy;
    sxx[i] = dx * dx;
    syy[i] = dy * dy;
  }
  const double denom = std::sqrt(pairwise_sum(sxx)) * std::sqrt(pairwise_sum(syy));
  if (!(denom > 0.0)) return {};
  return Correlation{std::clamp(pairwise_sum(sxy) / denom, -1.0, 1.0)};
}

inline Correlation pearson(const PairedSeries& s, Scale scale) {
  const auto p = s.predictions(scale);
  const auto t = s.truths(scale);
  return pearson(p, t);
}

enum class Grouping { none, by_max_points, by_course };

inline std::string_view to_string(Grouping g) {
  switch (g) {
    case Grouping::none: return "none";
    case Grouping::by_max_points: return "by_max_points";
    case Grouping::by_course: return "by_course";
  }
  return "none";
}

inline Grouping parse_grouping(std::string_view s) {
  for (Grouping g : {Grouping::none, Grouping::by_max_points, Grouping::by_course}) {
    if (to_string(g) == s) return g;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown grouping '" + std::string(s) + "'");
}

/// One evaluated row: prediction and truth in points plus grouping keys.
struct EvalRow {
  double prediction = 0.0;
  double truth = 0.0;
  double max_points = 1.0;
  std::string max_points_key;  // rendered max points, e.g. "6"
  std::string course_id;
};

struct GroupMetrics {
  std::string key;
  std::size_t n = 0;
  double share_of_data = 0.0;
  double mae_norm = 0.0;
  std::optional<double> std_abs_err_norm;  // sample std; absent for n < 2
};

struct MetricsReport {
  std::size_t n = 0;
  double mae_points = 0.0;
  double rmse_points = 0.0;
  Correlation corr_points;
  double mae_norm = 0.0;
  double rmse_norm = 0.0;
  Correlation corr_norm;
  std::size_t undefined_correlations = 0;
  Grouping grouping = Grouping::none;
  std::vector<GroupMetrics> groups;
};

namespace detail {

inline Correlation safe_pearson(const PairedSeries& s, Scale scale) {
  if (s.size() < 2) return {};
  return pearson(s, scale);
}

}  // namespace detail

/// Top-level metrics on both scales plus the optional per-group breakdown
/// (share of rows, normalized MAE and std of the normalized absolute error).
inline MetricsReport report(std::span<const EvalRow> rows, Grouping grouping) {
  if (rows.empty()) throw Error(ErrorCode::EmptySeries, "no rows to report on");
  std::vector<double> pred, truth, maxp;
  for (const auto& r : rows) {
    pred.push_back(r.prediction);
    truth.push_back(r.truth);
    maxp.push_back(r.max_points);
  }
  const PairedSeries series(pred, truth, maxp);
  MetricsReport rep;
  rep.n = rows.size();
  rep.grouping = grouping;
  rep.mae_points = mae(series, Scale::points);
  rep.rmse_points = rmse(series, Scale::points);
  rep.corr_points = detail::safe_pearson(series, Scale::points);
  rep.mae_norm = mae(series, Scale::normalized);
  rep.rmse_norm = rmse(series, Scale::normalized);
  rep.corr_norm = detail::safe_pearson(series, Scale::normalized);
  rep.undefined_correlations = (rep.corr_points.defined() ? 0 : 1) + (rep.corr_norm.defined() ? 0 : 1);
  if (grouping == Grouping::none) return rep;

  // Max-points groups sort numerically, course groups lexically.
  std::map<std::pair<double, std::string>, std::vector<double>> abs_err;
  for (const auto& r : rows) {
    const double e = std::fabs(r.prediction - r.truth) / r.max_points;
    auto key = grouping == Grouping::by_max_points ? std::make_pair(r.max_points, r.max_points_key)
                                                   : std::make_pair(0.0, r.course_id);
    abs_err[key].push_back(e);
  }
  for (const auto& [key, errs] : abs_err) {
    GroupMetrics g;
    g.key = key.second;
    g.n = errs.size();
    g.share_of_data = static_cast<double>(errs.size()) / static_cast<double>(rows.size());
    g.mae_norm = mean(errs);
    g.std_abs_err_norm = sample_std(errs);
    rep.groups.push_back(std::move(g));
  }
  return rep;
}

inline Json to_json(const MetricsReport& r) {
  Json j = Json::object();
  j["n"] = r.n;
  j["mae_points"] = r.mae_points;
  j["rmse_points"] = r.rmse_points;
  j["corr_points"] = to_json(r.corr_points);
  j["mae_norm"] = r.mae_norm;
  j["rmse_norm"] = r.rmse_norm;
  j["corr_norm"] = to_json(r.corr_norm);
  j["undefined_correlations"] = r.undefined_correlations;
  j["grouping"] = to_string(r.grouping);
  Json groups = Json::array();
  for (const auto& g : r.groups) {
    Json gj = Json::object();
    gj["key"] = g.key;
    gj["n"] = g.n;
    gj["share_of_data"] = g.share_of_data;
    gj["mae_norm"] = g.mae_norm;
    gj["std_abs_err_norm"] = g.std_abs_err_norm ? Json(*g.std_abs_err_norm) : Json(nullptr);
    groups.push_back(std::move(gj));
  }
  j["groups"] = std::move(groups);
  return j;
}

}  // namespace asag
