#pragma once

// Side-by-side metric tables and arithmetic assertions over runs.
//
// Assertion grammar (run and metric names are [A-Za-z0-9_]+):
//   assertion := expr op expr          op: >= <= > < == !=
//   expr      := term (('+' | '-') term)*
//   term      := factor (('*' | '/') factor)*
//   factor    := number | run '.' metric | '(' expr ')' | '-' factor | 'abs' '(' expr ')'
// A reference resolves to the run's aggregate ("mean") value.

#include <algorithm>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "bdk/error.hpp"

namespace bdk {

struct MetricEntry {
  double value = 0.0;
  double stderr_ = 0.0;
  std::size_t n_trials = 1;
};

struct RunMetrics {
  std::string name;
  std::filesystem::path path;
  std::map<std::string, MetricEntry> means;  // metric -> aggregate row
};

// Accepts a metrics.csv or a run directory containing one.
inline RunMetrics read_metrics(const std::string& name, std::filesystem::path path) {
  if (std::filesystem::is_directory(path)) path /= "metrics.csv";
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open metrics file " + path.string());
  RunMetrics r{name, path, {}};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (lineno == 1) {
      if (line.rfind("metric,scope,value", 0) != 0) throw ParseError(path.string() + ": not a metrics file");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw ParseError(path.string() + ":" + std::to_string(lineno) + ": expected 5 fields");
    if (f[1] != "mean") continue;
    try {
      r.means[f[0]] = {std::stod(f[2]), std::stod(f[3]), static_cast<std::size_t>(std::stoull(f[4]))};
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(lineno) + ": bad number");
    }
  }
  if (r.means.empty()) throw ParseError(path.string() + ": no aggregate rows");
  return r;
}

// Metrics present in at least two runs, in sorted order.
inline std::vector<std::string> shared_metrics(const std::vector<RunMetrics>& runs) {
  std::map<std::string, std::size_t> count;
  for (const auto& r : runs)
    for (const auto& [m, e] : r.means) ++count[m];
  std::vector<std::string> out;
  for (const auto& [m, c] : count)
    if (c >= 2) out.push_back(m);
  return out;
}

inline void validate_comparison(const std::vector<RunMetrics>& runs) {
  if (runs.size() < 2) throw PreconditionError("compare needs at least two runs");
  std::set<std::string> names;
  for (const auto& r : runs)
    if (!names.insert(r.name).second) throw PreconditionError("duplicate run name '" + r.name + "'");
  if (shared_metrics(runs).empty()) throw PreconditionError("runs share no metrics");
}

// Aligned table; the delta columns are relative to the first run.
inline void write_comparison_table(std::ostream& os, const std::vector<RunMetrics>& runs) {
  const auto metrics = shared_metrics(runs);
  std::size_t w0 = 6;
  for (const auto& m : metrics) w0 = std::max(w0, m.size());
  const int w = 14;
  os << std::left << std::setw(static_cast<int>(w0)) << "metric";
  for (const auto& r : runs) os << "  " << std::right << std::setw(w) << r.name;
  for (std::size_t i = 1; i < runs.size(); ++i) os << "  " << std::setw(w) << ("d(" + runs[i].name + ")");
  os << '\n';
  auto cell = [&](const RunMetrics& r, const std::string& m) -> std::string {
    auto it = r.means.find(m);
    if (it == r.means.end()) return "-";
    std::ostringstream s;
    s << std::setprecision(6) << it->second.value;
    return s.str();
  };
  for (const auto& m : metrics) {
    os << std::left << std::setw(static_cast<int>(w0)) << m;
    for (const auto& r : runs) os << "  " << std::right << std::setw(w) << cell(r, m);
    const auto base = runs[0].means.find(m);
    for (std::size_t i = 1; i < runs.size(); ++i) {
      const auto it = runs[i].means.find(m);
      std::ostringstream s;
      if (base == runs[0].means.end() || it == runs[i].means.end()) {
        s << "-";
      } else {
        s << std::showpos << std::setprecision(6) << (it->second.value - base->second.value);
      }
      os << "  " << std::setw(w) << s.str();
    }
    os << '\n';
  }
}

inline void write_comparison_csv(std::ostream& os, const std::vector<RunMetrics>& runs) {
  os << "metric";
  for (const auto& r : runs) os << ',' << r.name << ',' << r.name << "_stderr";
  os << '\n' << std::setprecision(17);
  for (const auto& m : shared_metrics(runs)) {
    os << m;
    for (const auto& r : runs) {
      auto it = r.means.find(m);
      if (it == r.means.end()) {
        os << ",,";
      } else {
        os << ',' << it->second.value << ',' << it->second.stderr_;
      }
    }
    os << '\n';
  }
}

struct AssertionResult {
  bool holds = false;
  double lhs = 0.0;
  double rhs = 0.0;
  std::string op;
};

namespace detail {

class AssertionParser {
 public:
  AssertionParser(const std::string& text, const std::vector<RunMetrics>& runs) : s_(text), runs_(runs) {}

  AssertionResult parse() {
    AssertionResult r;
    r.lhs = expr();
    skip();
    for (const char* op : {">=", "<=", "==", "!=", ">", "<"}) {
      if (s_.compare(pos_, std::char_traits<char>::length(op), op) == 0) {
        r.op = op;
        pos_ += r.op.size();
        break;
      }
    }
    if (r.op.empty()) fail("expected a comparison operator");
    r.rhs = expr();
    skip();
    if (pos_ != s_.size()) fail("unexpected trailing input");
    if (r.op == ">=") r.holds = r.lhs >= r.rhs;
    if (r.op == "<=") r.holds = r.lhs <= r.rhs;
    if (r.op == ">") r.holds = r.lhs > r.rhs;
    if (r.op == "<") r.holds = r.lhs < r.rhs;
    if (r.op == "==") r.holds = r.lhs == r.rhs;
    if (r.op == "!=") r.holds = r.lhs != r.rhs;
    return r;
  }

 private:
  [[noreturn]] void fail(const std::string& why) const {
    throw ParseError("assertion '" + s_ + "' at offset " + std::to_string(pos_) + ": " + why);
  }
  void skip() {
    while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
  }
  bool eat(char c) {
    skip();
    if (pos_ < s_.size() && s_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }
  static bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
  std::string ident() {
    const std::size_t b = pos_;
    while (pos_ < s_.size() && ident_char(s_[pos_])) ++pos_;
    return s_.substr(b, pos_ - b);
  }

  double expr() {
    double v = term();
    for (;;) {
      if (eat('+')) {
        v += term();
      } else if (eat('-')) {
        v -= term();
      } else {
        return v;
      }
    }
  }
  double term() {
    double v = factor();
    for (;;) {
      if (eat('*')) {
        v *= factor();
      } else if (eat('/')) {
        v /= factor();
      } else {
        return v;
      }
    }
  }
  double factor() {
    skip();
    if (pos_ >= s_.size()) fail("unexpected end of input");
    if (eat('-')) return -factor();
    if (eat('(')) {
      const double v = expr();
      if (!eat(')')) fail("expected ')'");
      return v;
    }
    const char c = s_[pos_];
    if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
      std::size_t used = 0;
      const double v = std::stod(s_.substr(pos_), &used);
      pos_ += used;
      return v;
    }
    if (!ident_char(c)) fail("unexpected character");
    const std::string run = ident();
    if (run == "abs" && eat('(')) {
      const double v = expr();
      if (!eat(')')) fail("expected ')'");
      return std::abs(v);
    }
    if (pos_ >= s_.size() || s_[pos_] != '.') fail("expected run.metric");
    ++pos_;
    const std::string metric = ident();
    if (metric.empty()) fail("expected a metric name");
    return lookup(run, metric);
  }
  double lookup(const std::string& run, const std::string& metric) const {
    for (const auto& r : runs_) {
      if (r.name != run) continue;
      auto it = r.means.find(metric);
      if (it == r.means.end()) throw ParseError("run '" + run + "' has no metric '" + metric + "'");
      return it->second.value;
    }
    throw ParseError("unknown run '" + run + "'");
  }

  std::string s_;
  const std::vector<RunMetrics>& runs_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline AssertionResult evaluate_assertion(const std::string& text, const std::vector<RunMetrics>& runs) {
  return detail::AssertionParser(text, runs).parse();
}

}  // namespace bdk
