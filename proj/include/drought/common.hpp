#pragma once

// Shared vocabulary types for the drought impact toolkit: error classes,
// calendar months, a dense row-major matrix, number formatting that
// round-trips exactly, and deterministic seed derivation.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <type_traits>
#include <vector>

namespace drought {

/// Input violates a schema, an invariant, or a precondition.
class ValidationError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A file could not be opened, read, or written.
class IoError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// A numerical procedure (distribution fit, training, attribution) failed.
class NumericalError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Logging

using LogSink = std::function<void(std::string_view level, std::string_view message)>;

inline LogSink& log_sink() {
  static LogSink sink = [](std::string_view level, std::string_view message) {
    std::cerr << "[" << level << "] " << message << '\n';
  };
  return sink;
}

inline void log_info(std::string_view message) { log_sink()("info", message); }
inline void log_warning(std::string_view message) { log_sink()("warning", message); }

// ---------------------------------------------------------------------------
// Calendar months

/// A calendar month (year, month 1-12), ordered chronologically.
struct YearMonth {
  int year = 1970;
  int month = 1;

  /// Months since year 0, used for arithmetic and ordering.
  [[nodiscard]] constexpr std::int64_t ordinal() const { return std::int64_t{year} * 12 + (month - 1); }

  [[nodiscard]] static constexpr YearMonth from_ordinal(std::int64_t ordinal) {
    auto year = ordinal >= 0 ? ordinal / 12 : (ordinal - 11) / 12;
    return YearMonth{static_cast<int>(year), static_cast<int>(ordinal - year * 12) + 1};
  }

  [[nodiscard]] constexpr YearMonth plus(std::int64_t months) const { return from_ordinal(ordinal() + months); }

  [[nodiscard]] std::string to_string() const {
    auto y = std::to_string(year);
    if (y.size() < 4) y.insert(0, 4 - y.size(), '0');
    return y + (month < 10 ? "-0" : "-") + std::to_string(month);
  }

  /// Parses "YYYY-MM"; returns nullopt on any deviation from that layout.
  [[nodiscard]] static std::optional<YearMonth> parse(std::string_view text) {
    if (text.size() != 7 || text[4] != '-') return std::nullopt;
    int year = 0;
    int month = 0;
    auto [p1, e1] = std::from_chars(text.data(), text.data() + 4, year);
    auto [p2, e2] = std::from_chars(text.data() + 5, text.data() + 7, month);
    if (e1 != std::errc{} || p1 != text.data() + 4 || e2 != std::errc{} || p2 != text.data() + 7) return std::nullopt;
    if (month < 1 || month > 12) return std::nullopt;
    return YearMonth{year, month};
  }

  friend constexpr auto operator<=>(const YearMonth& a, const YearMonth& b) { return a.ordinal() <=> b.ordinal(); }
  friend constexpr bool operator==(const YearMonth& a, const YearMonth& b) = default;
};

// ---------------------------------------------------------------------------
// Dense matrix

/// Row-major dense matrix of doubles. NaN marks a missing value.
class Matrix {
public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  [[nodiscard]] std::size_t rows() const { return rows_; }
  [[nodiscard]] std::size_t cols() const { return cols_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  [[nodiscard]] std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  [[nodiscard]] std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  void append_row(std::span<const double> values) {
    if (rows_ == 0 && cols_ == 0) cols_ = values.size();
    if (values.size() != cols_) throw ValidationError("Matrix::append_row: width mismatch");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  /// Rows selected by index, in the given order.
  [[nodiscard]] Matrix select_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      auto src = row(indices[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  [[nodiscard]] const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

template <typename T>
[[nodiscard]] std::vector<T> select(std::span<const T> values, std::span<const std::size_t> indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (auto i : indices) out.push_back(values[i]);
  return out;
}

// ---------------------------------------------------------------------------
// Numbers

/// Shortest decimal form that parses back to the identical double.
[[nodiscard]] inline std::string format_double(double value) {
  if (std::isnan(value)) return "NA";
  char buffer[64];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value);
  if (ec != std::errc{}) throw std::logic_error("format_double: buffer too small");
  return std::string(buffer, ptr);
}

/// Fixed-precision form for human-facing tables.
[[nodiscard]] inline std::string format_fixed(double value, int digits) {
  char buffer[64];
  auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof(buffer), value, std::chars_format::fixed, digits);
  if (ec != std::errc{}) throw std::logic_error("format_fixed: buffer too small");
  return std::string(buffer, ptr);
}

/// Parses a complete decimal token; "NA" yields NaN.
[[nodiscard]] inline std::optional<double> parse_double(std::string_view text) {
  if (text == "NA") return std::numeric_limits<double>::quiet_NaN();
  if (!text.empty() && text.front() == '+') text.remove_prefix(1);
  double value = 0.0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) return std::nullopt;
  return value;
}

[[nodiscard]] inline std::optional<long long> parse_int(std::string_view text) {
  long long value = 0;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc{} || ptr != text.data() + text.size() || text.empty()) return std::nullopt;
  return value;
}

[[nodiscard]] inline double sigmoid(double margin) {
  if (margin >= 0) return 1.0 / (1.0 + std::exp(-margin));
  double e = std::exp(margin);
  return e / (1.0 + e);
}

[[nodiscard]] inline double logit(double p) { return std::log(p / (1.0 - p)); }

// ---------------------------------------------------------------------------
// Seeds

/// splitmix64 finalizer.
[[nodiscard]] constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Derives an independent stream seed from a root seed and a tag path, so every
/// stochastic stage is fully determined by the root seed.
template <typename... Tags>
[[nodiscard]] std::uint64_t derive_seed(std::uint64_t root, const Tags&... tags) {
  std::uint64_t state = mix64(root);
  auto absorb = [&state](const auto& tag) {
    if constexpr (std::is_convertible_v<decltype(tag), std::string_view>) {
      for (unsigned char c : std::string_view(tag)) state = mix64(state ^ c);
      state = mix64(state ^ 0xffULL);
    } else {
      state = mix64(state ^ static_cast<std::uint64_t>(tag));
    }
  };
  (absorb(tags), ...);
  return state;
}

}  // namespace drought
