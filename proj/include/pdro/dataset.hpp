#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "pdro/error.hpp"

namespace pdro {

/// Observational rows (x, a, y[, s]). Unlabeled covariate sets leave a and y empty;
/// source labels are 1-based.
struct Dataset {
  Eigen::MatrixXd X;
  std::vector<int> A;
  Eigen::VectorXd Y;
  std::vector<int> S;

  Eigen::Index rows() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }
  bool has_labels() const { return !A.empty(); }
  bool has_sources() const { return !S.empty(); }

  void validate() const {
    const auto n = static_cast<std::size_t>(X.rows());
    if (!A.empty() && (A.size() != n || static_cast<std::size_t>(Y.size()) != n)) {
      throw DimensionError("treatment/outcome lengths do not match covariate rows");
    }
    if (A.empty() && Y.size() != 0) throw DimensionError("outcomes present without treatments");
    if (!S.empty() && S.size() != n) throw DimensionError("source label length does not match rows");
    for (int a : A) {
      if (a != 0 && a != 1) throw InputError("treatment must be 0 or 1");
    }
    if (!X.allFinite() || (Y.size() > 0 && !Y.allFinite())) {
      throw InputError("dataset contains non-finite values");
    }
  }

  Dataset subset(const std::vector<Eigen::Index>& idx) const {
    Dataset out;
    out.X.resize(static_cast<Eigen::Index>(idx.size()), X.cols());
    if (has_labels()) out.Y.resize(static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) {
      const auto i = idx[k];
      out.X.row(static_cast<Eigen::Index>(k)) = X.row(i);
      if (has_labels()) {
        out.A.push_back(A[static_cast<std::size_t>(i)]);
        out.Y[static_cast<Eigen::Index>(k)] = Y[i];
      }
      if (has_sources()) out.S.push_back(S[static_cast<std::size_t>(i)]);
    }
    return out;
  }

  std::vector<Eigen::Index> indices_with_treatment(int a) const {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < A.size(); ++i) {
      if (A[i] == a) idx.push_back(static_cast<Eigen::Index>(i));
    }
    return idx;
  }

  std::vector<Eigen::Index> indices_with_source(int s) const {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < S.size(); ++i) {
      if (S[i] == s) idx.push_back(static_cast<Eigen::Index>(i));
    }
    return idx;
  }

  int num_sources() const {
    int k = 0;
    for (int s : S) k = std::max(k, s);
    return k;
  }
};

/// Row-stacks covariate matrices with equal column counts.
inline Eigen::MatrixXd stack_rows(const std::vector<const Eigen::MatrixXd*>& blocks) {
  Eigen::Index rows = 0;
  Eigen::Index cols = -1;
  for (const auto* b : blocks) {
    if (cols >= 0 && b->cols() != cols) throw DimensionError("cannot stack matrices of different widths");
    cols = b->cols();
    rows += b->rows();
  }
  Eigen::MatrixXd out(rows, std::max<Eigen::Index>(cols, 0));
  Eigen::Index at = 0;
  for (const auto* b : blocks) {
    out.middleRows(at, b->rows()) = *b;
    at += b->rows();
  }
  return out;
}

// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace csv {

struct Requirements {
  bool labels = false;   // a and y columns required
  bool sources = false;  // s column required
};

namespace detail {

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = line.find(',', start);
    auto field = line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r')) {
      field.remove_suffix(1);
    }
    out.push_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline double parse_number(std::string_view field, std::size_t line, std::string_view column) {
  double v = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  if (!field.empty() && field.front() == '+') ++first;
  auto res = std::from_chars(first, last, v);
  if (field.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(v)) {
    throw ParseError("column '" + std::string(column) + "': cannot parse '" + std::string(field) + "'", line);
  }
  return v;
}

inline int parse_int(std::string_view field, std::size_t line, std::string_view column) {
  const double v = parse_number(field, line, column);
  if (v != std::floor(v)) {
    throw ParseError("column '" + std::string(column) + "': expected an integer, got '" +
                         std::string(field) + "'",
                     line);
  }
  return static_cast<int>(v);
}

}  // namespace detail

/// Reads the `x1..xp,a,y[,s]` format. Columns may appear in any order; unknown
/// columns are rejected so typos surface early.
inline Dataset read(std::istream& in, Requirements req = {}) {
  std::string line;
  std::size_t line_no = 0;
  Dataset data;
  if (!std::getline(in, line)) {
    if (req.labels || req.sources) throw ParseError("missing header", 1);
    return data;
  }
  ++line_no;
  const auto header = detail::split(line);
  std::vector<int> x_col;  // x_col[j] = field index of x_{j+1}
  std::optional<std::size_t> a_col, y_col, s_col;
  std::vector<std::pair<int, std::size_t>> xs;
  for (std::size_t k = 0; k < header.size(); ++k) {
    const auto name = header[k];
    if (name == "a") {
      a_col = k;
    } else if (name == "y") {
      y_col = k;
    } else if (name == "s") {
      s_col = k;
    } else if (name.size() > 1 && name.front() == 'x') {
      int j = 0;
      auto res = std::from_chars(name.data() + 1, name.data() + name.size(), j);
      if (res.ec != std::errc() || res.ptr != name.data() + name.size() || j < 1) {
        throw ParseError("unrecognized column '" + std::string(name) + "'", line_no);
      }
      xs.emplace_back(j, k);
    } else {
      throw ParseError("unrecognized column '" + std::string(name) + "'", line_no);
    }
  }
  std::sort(xs.begin(), xs.end());
  for (std::size_t j = 0; j < xs.size(); ++j) {
    if (xs[j].first != static_cast<int>(j) + 1) {
      throw ParseError("covariate columns must be x1..xp without gaps", line_no);
    }
    x_col.push_back(static_cast<int>(xs[j].second));
  }
  if (x_col.empty()) throw ParseError("no covariate columns (x1..xp) in header", line_no);
  if (req.labels && !a_col) throw ParseError("missing required column 'a'", line_no);
  if (req.labels && !y_col) throw ParseError("missing required column 'y'", line_no);
  if (a_col.has_value() != y_col.has_value()) {
    throw ParseError("columns 'a' and 'y' must appear together", line_no);
  }
  if (req.sources && !s_col) throw ParseError("missing required column 's'", line_no);

  const auto p = static_cast<Eigen::Index>(x_col.size());
  std::vector<double> xbuf;
  std::vector<double> ybuf;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = detail::split(line);
    if (fields.size() != header.size()) {
      throw ParseError("expected " + std::to_string(header.size()) + " fields, found " +
                           std::to_string(fields.size()),
                       line_no);
    }
    for (Eigen::Index j = 0; j < p; ++j) {
      xbuf.push_back(detail::parse_number(fields[static_cast<std::size_t>(x_col[static_cast<std::size_t>(j)])],
                                          line_no, header[static_cast<std::size_t>(x_col[static_cast<std::size_t>(j)])]));
    }
    if (a_col) {
      const int a = detail::parse_int(fields[*a_col], line_no, "a");
      if (a != 0 && a != 1) throw ParseError("treatment 'a' must be 0 or 1", line_no);
      data.A.push_back(a);
      ybuf.push_back(detail::parse_number(fields[*y_col], line_no, "y"));
    }
    if (s_col) {
      const int s = detail::parse_int(fields[*s_col], line_no, "s");
      if (s < 1) throw ParseError("source label 's' must be >= 1", line_no);
      data.S.push_back(s);
    }
  }
  const auto n = static_cast<Eigen::Index>(xbuf.size() / static_cast<std::size_t>(p));
  data.X = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(xbuf.data(), n, p);
  if (a_col) data.Y = Eigen::Map<Eigen::VectorXd>(ybuf.data(), n);
  return data;
}

inline Dataset read_file(const std::string& path, Requirements req = {}) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open '" + path + "'");
  return read(in, req);
}

inline void write(std::ostream& out, const Dataset& data) {
  data.validate();
  for (Eigen::Index j = 0; j < data.dim(); ++j) out << (j ? "," : "") << 'x' << (j + 1);
  if (data.has_labels()) out << ",a,y";
  if (data.has_sources()) out << ",s";
  out << '\n';
  for (Eigen::Index i = 0; i < data.rows(); ++i) {
    for (Eigen::Index j = 0; j < data.dim(); ++j) out << (j ? "," : "") << format_double(data.X(i, j));
    if (data.has_labels()) {
      out << ',' << data.A[static_cast<std::size_t>(i)] << ',' << format_double(data.Y[i]);
    }
    if (data.has_sources()) out << ',' << data.S[static_cast<std::size_t>(i)];
    out << '\n';
  }
}

inline void write_file(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write '" + path + "'");
  write(out, data);
}

}  // namespace csv
}  // namespace pdro
