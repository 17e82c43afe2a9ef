#pragma once

#include <cmath>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "dbsde/error.hpp"

namespace dbsde::experiment {

/// 9 significant digits, "nan"/"inf" for non-finite values, no negative zero.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (v == 0.0) v = 0.0;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

/// A CSV table held in memory and written in one go with LF line endings.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  class Row {
   public:
    Row& operator<<(double v) { return put(format_number(v)); }
    Row& operator<<(int v) { return put(std::to_string(v)); }
    Row& operator<<(const std::string& v) { return put(quote(v)); }
    Row& operator<<(const char* v) { return put(quote(v)); }

   private:
    friend class CsvTable;
    explicit Row(std::vector<std::string>& cells) : cells_(cells) {}
    Row& put(std::string s) {
      cells_.push_back(std::move(s));
      return *this;
    }
    static std::string quote(const std::string& s) {
      if (s.find_first_of(",\"\n") == std::string::npos) return s;
      std::string q = "\"";
      for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
      return q + "\"";
    }
    std::vector<std::string>& cells_;
  };

  Row row() {
    rows_.emplace_back();
    return Row(rows_.back());
  }

  const std::vector<std::string>& header() const { return header_; }
  std::size_t size() const { return rows_.size(); }

  std::string str() const {
    std::string out;
    auto line = [&](const std::vector<std::string>& cells) {
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) out += ',';
        out += cells[i];
      }
      out += '\n';
    };
    line(header_);
    for (const auto& r : rows_) {
      if (r.size() != header_.size()) throw InvalidSpec("csv: row width differs from header");
      line(r);
    }
    return out;
  }

  void write(const std::filesystem::path& path) const {
    const std::string text = str();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
  }

 private:
  std::vector<std::string> header_;
  std::deque<std::vector<std::string>> rows_;  // stable references for Row
};

}  // namespace dbsde::experiment
