#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "d3/errors.hpp"

namespace d3 {

// Deterministic CSV emission: doubles go through one fixed round-trip format
// so files are byte-identical across runs and thread counts.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

class CsvWriter {
 public:
  explicit CsvWriter(const std::string& path) : f_(path) {
    if (!f_) throw IoError("csv: cannot open '" + path + "' for writing");
    path_ = path;
  }

  void header(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      if (i) f_ << ',';
      f_ << names[i];
    }
    f_ << '\n';
  }

  void begin_row() { first_ = true; }
  void field(double v) { sep(); f_ << format_double(v); }
  void field(long v) { sep(); f_ << v; }
  void field(const std::string& s) { sep(); f_ << s; }
  void empty_field() { sep(); }
  void end_row() {
    f_ << '\n';
    if (!f_) throw IoError("csv: write failed for '" + path_ + "'");
  }

 private:
  void sep() {
    if (!first_) f_ << ',';
    first_ = false;
  }
  std::ofstream f_;
  std::string path_;
  bool first_ = true;
};

}  // namespace d3
