#pragma once

#include <cmath>
#include <compare>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <optional>
#include <string>
#include <string_view>

#include "asag/common.hpp"

namespace asag {

/// Exact decimal number of points with four fractional digits.
///
/// Stored as an integer count of 1/10000 points so that values read from
/// a file and written back out are reproduced digit for digit.
class Points {
 public:
  static constexpr std::int64_t kScale = 10000;

  constexpr Points() = default;

  static constexpr Points from_units(std::int64_t units) {
    Points p;
    p.units_ = units;
    return p;
  }

  /// Rounds half away from zero onto the 1e-4 grid.
  static Points from_double(double value) {
    if (!std::isfinite(value) || std::fabs(value) > 9.0e14) {
      throw Error(ErrorCode::InvalidFieldType, "points value is not a finite number in range");
    }
    return from_units(std::llround(value * static_cast<double>(kScale)));
  }

  /// Parses a plain decimal literal ("4", "-1.25", "0.3333", "6.0").
  /// Digits beyond the fourth fractional place are rounded.
  static std::optional<Points> parse(std::string_view text) {
    while (!text.empty() && (text.front() == ' ' || text.front() == '\t')) text.remove_prefix(1);
    while (!text.empty() && (text.back() == ' ' || text.back() == '\t')) text.remove_suffix(1);
    if (text.empty()) return std::nullopt;
    bool negative = false;
    if (text.front() == '+' || text.front() == '-') {
      negative = text.front() == '-';
      text.remove_prefix(1);
    }
    // Exponent notation and anything else unusual goes through strtod.
    if (text.find_first_of("eE") != std::string_view::npos) {
      std::string buf(text);
      char* end = nullptr;
      double v = std::strtod(buf.c_str(), &end);
      if (end != buf.c_str() + buf.size()) return std::nullopt;
      try {
        Points p = from_double(v);
        return negative ? from_units(-p.units_) : p;
      } catch (const Error&) {
        return std::nullopt;
      }
    }
    std::int64_t whole = 0;
    std::int64_t frac = 0;
    int frac_digits = 0;
    bool round_up = false;
    bool seen_digit = false;
    bool in_frac = false;
    for (char c : text) {
      if (c == '.') {
        if (in_frac) return std::nullopt;
        in_frac = true;
        continue;
      }
      if (c < '0' || c > '9') return std::nullopt;
      seen_digit = true;
      const int d = c - '0';
      if (!in_frac) {
        if (whole > 90'000'000'000'000) return std::nullopt;
        whole = whole * 10 + d;
      } else if (frac_digits < 4) {
        frac = frac * 10 + d;
        ++frac_digits;
      } else if (frac_digits == 4) {
        round_up = d >= 5;
        ++frac_digits;
      }
    }
    if (!seen_digit) return std::nullopt;
    for (int i = std::min(frac_digits, 4); i < 4; ++i) frac *= 10;
    std::int64_t units = whole * kScale + frac + (round_up ? 1 : 0);
    return from_units(negative ? -units : units);
  }

  constexpr std::int64_t units() const { return units_; }
  constexpr double value() const { return static_cast<double>(units_) / static_cast<double>(kScale); }

  /// Shortest decimal rendering: "4", "4.5", "0.3333", "-1".
  std::string to_string() const {
    const std::int64_t mag = units_ < 0 ? -units_ : units_;
    std::string out = units_ < 0 ? "-" : "";
    out += std::to_string(mag / kScale);
    std::int64_t frac = mag % kScale;
    if (frac != 0) {
      std::string digits = std::to_string(frac);
      digits.insert(0, 4 - digits.size(), '0');
      while (!digits.empty() && digits.back() == '0') digits.pop_back();
      out += '.';
      out += digits;
    }
    return out;
  }

  friend constexpr auto operator<=>(Points, Points) = default;
  friend constexpr Points operator+(Points a, Points b) { return from_units(a.units_ + b.units_); }
  friend constexpr Points operator-(Points a, Points b) { return from_units(a.units_ - b.units_); }

 private:
  std::int64_t units_ = 0;
};

inline void to_json(Json& j, const Points& p) { j = p.value(); }

inline void from_json(const Json& j, Points& p) {
  if (j.is_number()) {
    p = Points::from_double(j.get<double>());
  } else if (j.is_string()) {
    auto parsed = Points::parse(j.get<std::string>());
    if (!parsed) throw Error(ErrorCode::InvalidFieldType, "not a decimal: " + j.get<std::string>());
    p = *parsed;
  } else {
    throw Error(ErrorCode::InvalidFieldType, "points must be a number");
  }
}

}  // namespace asag
