#pragma once

// Minimal RFC-4180 style CSV reading/writing, ISO-8601 timestamps, and
// round-trip number formatting used by every persisted intermediate.

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "core.hpp"

namespace icunomo {

using Timestamp = std::chrono::sys_seconds;

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::optional<std::size_t> column(std::string_view name) const {
    for (std::size_t j = 0; j < header.size(); ++j)
      if (header[j] == name) return j;
    return std::nullopt;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

}  // namespace detail

inline CsvTable parse_csv(std::istream& in) {
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (first) {
      // UTF-8 byte-order mark
      if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
      if (detail::trim(line).empty()) continue;
      t.header = detail::split_csv_line(line);
      for (auto& h : t.header) h = std::string(detail::trim(h));
      first = false;
      continue;
    }
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    cells.resize(t.header.size());
    t.rows.push_back(std::move(cells));
  }
  if (first) throw Error(ErrorCode::EmptyFile, "no header row");
  return t;
}

inline CsvTable read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  return parse_csv(in);
}

inline std::string csv_escape(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

/// Shortest representation that parses back to the same double; empty for NaN.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline void write_csv(std::ostream& out, const CsvTable& t) {
  for (std::size_t j = 0; j < t.header.size(); ++j) out << (j ? "," : "") << csv_escape(t.header[j]);
  out << '\n';
  for (const auto& r : t.rows) {
    for (std::size_t j = 0; j < r.size(); ++j) out << (j ? "," : "") << csv_escape(r[j]);
    out << '\n';
  }
}

inline void write_csv(const std::string& path, const CsvTable& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  write_csv(out, t);
}

/// Empty (after trimming) means missing.
inline std::optional<double> parse_number(std::string_view cell, bool& ok) {
  ok = true;
  cell = detail::trim(cell);
  if (cell.empty()) return std::nullopt;
  double v = 0.0;
  if (cell.front() == '+') cell.remove_prefix(1);
  auto res = std::from_chars(cell.data(), cell.data() + cell.size(), v);
  if (res.ec != std::errc() || res.ptr != cell.data() + cell.size() || !std::isfinite(v)) {
    ok = false;
    return std::nullopt;
  }
  return v;
}

// ---------------------------------------------------------------------------
// Timestamps: "YYYY-MM-DD", "YYYY-MM-DD HH:MM[:SS[.fff]]" or with 'T'
// separator, optional trailing 'Z'. Interpreted as UTC.

inline std::optional<Timestamp> parse_timestamp(std::string_view s) {
  using namespace std::chrono;
  s = detail::trim(s);
  if (!s.empty() && s.back() == 'Z') s.remove_suffix(1);
  auto num = [&](std::size_t pos, std::size_t len, int& out) {
    if (pos + len > s.size()) return false;
    auto r = std::from_chars(s.data() + pos, s.data() + pos + len, out);
    return r.ec == std::errc() && r.ptr == s.data() + pos + len;
  };
  int y = 0, mo = 0, d = 0, hh = 0, mm = 0, ss = 0;
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') return std::nullopt;
  if (!num(0, 4, y) || !num(5, 2, mo) || !num(8, 2, d)) return std::nullopt;
  if (s.size() > 10) {
    if (s[10] != 'T' && s[10] != ' ') return std::nullopt;
    if (s.size() < 16 || s[13] != ':' || !num(11, 2, hh) || !num(14, 2, mm)) return std::nullopt;
    if (s.size() > 16) {
      if (s[16] != ':' || !num(17, 2, ss)) return std::nullopt;
      if (s.size() > 19 && s[19] != '.') return std::nullopt;
    }
  }
  year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok() || hh > 23 || mm > 59 || ss > 60) return std::nullopt;
  return Timestamp{sys_days{ymd}} + hours{hh} + minutes{mm} + seconds{ss};
}

inline std::string format_timestamp(Timestamp t) {
  using namespace std::chrono;
  auto day_point = floor<days>(t);
  year_month_day ymd{day_point};
  auto rest = t - day_point;
  auto h = duration_cast<hours>(rest);
  auto m = duration_cast<minutes>(rest - h);
  auto s = duration_cast<seconds>(rest - h - m);
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02d", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()), static_cast<int>(h.count()),
                static_cast<int>(m.count()), static_cast<int>(s.count()));
  return buf;
}

inline double days_between(Timestamp from, Timestamp to) {
  return static_cast<double>((to - from).count()) / 86400.0;
}

inline Timestamp add_days(Timestamp t, double days) {
  return t + std::chrono::seconds(static_cast<std::int64_t>(std::llround(days * 86400.0)));
}

}  // namespace icunomo
