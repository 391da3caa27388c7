#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "usspine/error.hpp"
#include "usspine/types.hpp"

namespace usspine {

inline constexpr std::string_view kAnnotationHeader =
    "slice,l0x,l0y,l1x,l1y,spx,spy,l2x,l2y,l3x,l3y,sp_real,ll_real,rl_real";
inline constexpr std::string_view kDetectionHeader =
    "slice,l0x,l0y,l1x,l1y,spx,spy,l2x,l2y,l3x,l3y,sp_real,ll_real,rl_real,sp_conf,ll_conf,rl_conf";

using AnnotationMap = std::map<int, SliceAnnotation>;
using DetectionMap = std::map<int, DetectionResult>;

// Shortest decimal text that parses back to the same double.
inline std::string format_number(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  if (ec != std::errc{}) throw Error("number formatting failed");
  return std::string(buf, end);
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    fields.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return fields;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

inline double parse_double(std::string_view s, std::size_t line, const char* field) {
  s = trim(s);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ParseError(line, std::string("invalid number in field ") + field + ": '" + std::string(s) + "'");
  return v;
}

inline int parse_int(std::string_view s, std::size_t line, const char* field) {
  s = trim(s);
  int v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size() || s.empty())
    throw ParseError(line, std::string("invalid integer in field ") + field + ": '" + std::string(s) + "'");
  return v;
}

inline bool parse_label(std::string_view s, std::size_t line, const char* field) {
  const int v = parse_int(s, line, field);
  if (v != 0 && v != 1) throw ParseError(line, std::string("label ") + field + " must be 0 or 1");
  return v == 1;
}

inline constexpr const char* kCoordNames[10] = {"l0x", "l0y", "l1x", "l1y", "spx",
                                                "spy", "l2x", "l2y", "l3x", "l3y"};
inline constexpr const char* kLabelNames[3] = {"sp_real", "ll_real", "rl_real"};
inline constexpr const char* kConfNames[3] = {"sp_conf", "ll_conf", "rl_conf"};

struct ParsedRow {
  int slice = 0;
  SliceAnnotation annotation;
  std::optional<std::array<double, 3>> confidences;
};

template <typename Fn>
void for_each_row(std::istream& in, Fn&& fn) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty()) continue;
    if (t == kAnnotationHeader || t == kDetectionHeader) {
      if (lineno != 1) throw ParseError(lineno, "header repeated inside file");
      continue;
    }
    const auto fields = split_csv(t);
    if (fields.size() != 14 && fields.size() != 17)
      throw ParseError(lineno, "expected 14 or 17 fields, got " + std::to_string(fields.size()));
    ParsedRow row;
    row.slice = parse_int(fields[0], lineno, "slice");
    if (row.slice < 0) throw ParseError(lineno, "negative slice index");
    for (int i = 0; i < 5; ++i) {
      row.annotation.landmarks[i] = {parse_double(fields[1 + 2 * i], lineno, kCoordNames[2 * i]),
                                     parse_double(fields[2 + 2 * i], lineno, kCoordNames[2 * i + 1])};
    }
    for (int i = 0; i < 3; ++i) row.annotation.labels[i] = parse_label(fields[11 + i], lineno, kLabelNames[i]);
    if (fields.size() == 17) {
      std::array<double, 3> c{};
      for (int i = 0; i < 3; ++i) {
        c[i] = parse_double(fields[14 + i], lineno, kConfNames[i]);
        if (!(c[i] >= 0.0 && c[i] <= 1.0)) throw ParseError(lineno, std::string(kConfNames[i]) + " outside [0,1]");
      }
      row.confidences = c;
    }
    fn(lineno, row);
  }
}

inline std::string landmark_fields(const LandmarkSet& l) {
  std::string s;
  for (int i = 0; i < 5; ++i) {
    s += ',' + format_number(l[i].x);
    s += ',' + format_number(l[i].y);
  }
  return s;
}

}  // namespace detail

// Parses annotation CSV text. When width/height are positive every landmark
// must lie inside [0,W)x[0,H).
inline AnnotationMap parse_annotations(std::istream& in, int width = 0, int height = 0) {
  AnnotationMap out;
  detail::for_each_row(in, [&](std::size_t lineno, const detail::ParsedRow& row) {
    if (width > 0 && height > 0 && !row.annotation.landmarks.in_bounds(width, height))
      throw ValidationError("line " + std::to_string(lineno) + ": landmark outside " + std::to_string(width) + "x" +
                            std::to_string(height) + " slice");
    if (!out.emplace(row.slice, row.annotation).second)
      throw ParseError(lineno, "duplicate slice index " + std::to_string(row.slice));
  });
  return out;
}

inline AnnotationMap read_annotations(const std::filesystem::path& path, int width = 0, int height = 0) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_annotations(in, width, height);
}

inline std::string format_annotations(const AnnotationMap& annotations) {
  std::string out(kAnnotationHeader);
  out += '\n';
  for (const auto& [k, a] : annotations) {
    out += std::to_string(k) + detail::landmark_fields(a.landmarks);
    for (bool b : a.labels) out += b ? ",1" : ",0";
    out += '\n';
  }
  return out;
}

inline void write_annotations(const AnnotationMap& annotations, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_annotations(annotations);
  if (!out) throw IoError("write failed for " + path.string());
}

// Detections CSV. Annotation-format rows (no confidence columns) are accepted
// too, with confidences taken from the labels.
inline DetectionMap parse_detections(std::istream& in) {
  DetectionMap out;
  detail::for_each_row(in, [&](std::size_t lineno, const detail::ParsedRow& row) {
    DetectionResult d;
    d.landmarks = row.annotation.landmarks;
    d.predicted_labels = row.annotation.labels;
    for (int i = 0; i < 3; ++i)
      d.confidences[i] = row.confidences ? (*row.confidences)[i] : (row.annotation.labels[i] ? 1.0 : 0.0);
    if (!out.emplace(row.slice, d).second)
      throw ParseError(lineno, "duplicate slice index " + std::to_string(row.slice));
  });
  return out;
}

inline DetectionMap read_detections(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return parse_detections(in);
}

inline std::string format_detections(const std::vector<DetectionResult>& results) {
  std::string out(kDetectionHeader);
  out += '\n';
  for (std::size_t k = 0; k < results.size(); ++k) {
    const auto& d = results[k];
    out += std::to_string(k) + detail::landmark_fields(d.landmarks);
    for (bool b : d.predicted_labels) out += b ? ",1" : ",0";
    for (double c : d.confidences) out += ',' + format_number(c);
    out += '\n';
  }
  return out;
}

inline void write_detections(const std::vector<DetectionResult>& results, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out << format_detections(results);
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace usspine
