#include "pc/metrics.h"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <sstream>

#include "pc/serialize.h"

namespace pc {
namespace {

// Moves the decimal point of a plain decimal string `shift` places to the
// right (left when negative). Working on the text keeps the percent form an
// exact restatement of the stored fraction.
std::string shift_point(const std::string& text, int shift) {
  std::string sign, body = text;
  if (!body.empty() && (body[0] == '-' || body[0] == '+')) {
    sign = body.substr(0, 1);
    body.erase(0, 1);
  }
  const auto dot = body.find('.');
  const std::string whole = dot == std::string::npos ? body : body.substr(0, dot);
  const std::string frac = dot == std::string::npos ? "" : body.substr(dot + 1);
  const std::string digits = whole + frac;
  const long point = static_cast<long>(whole.size()) + shift;
  std::string out;
  if (point <= 0) {
    out = "0." + std::string(static_cast<std::size_t>(-point), '0') + digits;
  } else if (point >= static_cast<long>(digits.size())) {
    out = digits + std::string(static_cast<std::size_t>(point) - digits.size(), '0');
  } else {
    out = digits.substr(0, static_cast<std::size_t>(point)) + "." +
          digits.substr(static_cast<std::size_t>(point));
  }
  const auto first = out.find_first_not_of('0');
  if (first == std::string::npos) {
    out = "0";
  } else if (out[first] == '.') {
    out.erase(0, first - 1);
  } else {
    out.erase(0, first);
  }
  return sign + out;
}

std::string format_percent(double fraction) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), fraction, std::chars_format::fixed);
  std::string s = shift_point(std::string(buf, res.ptr), 2);
  if (s.find('.') == std::string::npos) s += ".0";
  return s;
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

[[noreturn]] void fail_line(std::size_t line, const std::string& what) {
  throw MetricsError("line " + std::to_string(line) + ": " + what);
}

}  // namespace

double AccuracyMatrix::at(std::size_t t, std::size_t j) const {
  if (t == 0 || t > rows_.size() || j == 0 || j > t) {
    throw MetricsError("a[" + std::to_string(t) + "][" + std::to_string(j) + "] is not recorded");
  }
  return rows_[t - 1][j - 1];
}

const std::vector<double>& AccuracyMatrix::row(std::size_t t) const {
  if (t == 0 || t > rows_.size()) {
    throw MetricsError("stage " + std::to_string(t) + " is not recorded (have " +
                       std::to_string(rows_.size()) + ")");
  }
  return rows_[t - 1];
}

void AccuracyMatrix::record_eval(std::vector<double> accuracies) {
  const std::size_t t = rows_.size() + 1;
  if (accuracies.size() != t) {
    throw MetricsError("stage " + std::to_string(t) + " needs " + std::to_string(t) +
                       " accuracies, got " + std::to_string(accuracies.size()));
  }
  for (double a : accuracies) {
    if (!(a >= 0.0 && a <= 1.0)) {
      throw std::out_of_range("accuracy " + std::to_string(a) + " outside [0, 1]");
    }
  }
  rows_.push_back(std::move(accuracies));
}

double average_accuracy(const AccuracyMatrix& m, std::size_t t) {
  const auto& r = m.row(t);
  double s = 0.0;
  for (double a : r) s += a;
  return s / static_cast<double>(t);
}

double forgetting(const AccuracyMatrix& m, std::size_t t) {
  if (t < 2) throw MetricsError("forgetting is undefined before stage 2");
  const auto& last = m.row(t);
  double total = 0.0;
  for (std::size_t j = 1; j < t; ++j) {
    double best = m.at(j, j);
    for (std::size_t i = j + 1; i < t; ++i) best = std::max(best, m.at(i, j));
    total += best - last[j - 1];
  }
  return total / static_cast<double>(t - 1);
}

std::string to_csv(const AccuracyMatrix& m) {
  const std::size_t T = m.stages();
  std::string out = "task";
  for (std::size_t j = 1; j <= T; ++j) out += ",eval_" + std::to_string(j);
  out += "\n";
  for (std::size_t t = 1; t <= T; ++t) {
    out += std::to_string(t);
    for (std::size_t j = 1; j <= T; ++j) {
      out += ",";
      if (j <= t) out += format_percent(m.at(t, j));
    }
    out += "\n";
  }
  return out;
}

AccuracyMatrix parse_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;
  AccuracyMatrix m;
  bool have_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (!have_header) {
      if (fields.empty() || trim(fields[0]) != "task") fail_line(line_no, "header must start with 'task'");
      for (std::size_t j = 1; j < fields.size(); ++j) {
        if (trim(fields[j]) != "eval_" + std::to_string(j)) {
          fail_line(line_no, "expected column 'eval_" + std::to_string(j) + "'");
        }
      }
      width = fields.size() - 1;
      have_header = true;
      continue;
    }
    const std::size_t t = m.stages() + 1;
    if (fields.size() != width + 1) {
      fail_line(line_no, "expected " + std::to_string(width + 1) + " fields, got " +
                             std::to_string(fields.size()));
    }
    if (trim(fields[0]) != std::to_string(t)) {
      fail_line(line_no, "expected task index " + std::to_string(t));
    }
    std::vector<double> accs;
    for (std::size_t j = 1; j <= width; ++j) {
      const std::string f = trim(fields[j]);
      if (j > t) {
        if (!f.empty()) fail_line(line_no, "entry eval_" + std::to_string(j) + " must be blank");
        continue;
      }
      double pct = 0.0;
      const auto res = std::from_chars(f.data(), f.data() + f.size(), pct, std::chars_format::fixed);
      if (f.empty() || res.ec != std::errc() || res.ptr != f.data() + f.size()) {
        fail_line(line_no, "malformed value '" + f + "' in eval_" + std::to_string(j));
      }
      if (!(pct >= 0.0 && pct <= 100.0)) {
        fail_line(line_no, "value " + f + " outside [0, 100]");
      }
      const std::string fraction_text = shift_point(f, -2);
      double fraction = 0.0;
      std::from_chars(fraction_text.data(), fraction_text.data() + fraction_text.size(), fraction,
                      std::chars_format::fixed);
      accs.push_back(fraction);
    }
    m.record_eval(std::move(accs));
  }
  if (!have_header) throw MetricsError("line 1: missing header");
  if (m.stages() != width) {
    throw MetricsError("line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                       " task rows, got " + std::to_string(m.stages()));
  }
  return m;
}

AccuracyMatrix load_csv(const std::string& path) { return parse_csv(read_text(path)); }

}  // namespace pc
