#include "combifd/matrix.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace combifd {

DenseMatrix::DenseMatrix(int rows, int cols, double fill)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, fill) {
  if (rows <= 0 || cols <= 0) {
    throw std::invalid_argument("DenseMatrix dimensions must be positive, got " +
                                std::to_string(rows) + "x" + std::to_string(cols));
  }
}

DenseMatrix::DenseMatrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = static_cast<int>(rows.size());
  cols_ = rows_ > 0 ? static_cast<int>(rows.begin()->size()) : 0;
  if (rows_ == 0 || cols_ == 0) throw std::invalid_argument("empty initializer for DenseMatrix");
  data_.reserve(static_cast<std::size_t>(rows_) * cols_);
  for (const auto& r : rows) {
    if (static_cast<int>(r.size()) != cols_) throw std::invalid_argument("ragged initializer for DenseMatrix");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

DenseMatrix DenseMatrix::transposed() const {
  DenseMatrix t(cols_, rows_);
  for (int i = 0; i < rows_; ++i)
    for (int j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

void DenseMatrix::check_finite(const char* context) const {
  for (double v : data_) {
    if (!std::isfinite(v)) throw std::domain_error(std::string(context) + ": non-finite entry");
  }
}

namespace {
std::string shape(const DenseMatrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}
}  // namespace

DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: dimension mismatch " + shape(a) + " * " + shape(b));
  }
  DenseMatrix out(a.rows(), b.cols());
  for (int i = 0; i < a.rows(); ++i) {
    for (int l = 0; l < a.cols(); ++l) {
      const double ail = a(i, l);
      if (ail == 0.0) continue;
      for (int j = 0; j < b.cols(); ++j) out(i, j) += ail * b(l, j);
    }
  }
  out.check_finite("matmul");
  return out;
}

double residual_norm(const DenseMatrix& a, const DenseMatrix& w, const DenseMatrix& h, int p) {
  if (w.rows() != a.rows() || w.cols() != h.rows() || h.cols() != a.cols()) {
    throw std::invalid_argument("residual_norm: shapes do not compose: A=" + shape(a) +
                                " W=" + shape(w) + " H=" + shape(h));
  }
  if (p != 1 && p != 2) throw std::invalid_argument("residual_norm: p must be 1 or 2");
  double acc = 0.0;
  for (int i = 0; i < a.rows(); ++i) {
    for (int j = 0; j < a.cols(); ++j) {
      double wh = 0.0;
      for (int l = 0; l < w.cols(); ++l) wh += w(i, l) * h(l, j);
      const double r = a(i, j) - wh;
      acc += (p == 2) ? r * r : std::abs(r);
    }
  }
  return (p == 2) ? std::sqrt(acc) : acc;
}

std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

DenseMatrix read_csv(std::istream& in, bool skip_header) {
  std::string line;
  std::vector<std::vector<double>> rows;
  bool first = true;
  while (std::getline(in, line)) {
    if (first && skip_header) {
      first = false;
      continue;
    }
    first = false;
    if (line.empty() || line == "\r") continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      std::size_t pos = 0;
      double v;
      try {
        v = std::stod(cell, &pos);
      } catch (const std::exception&) {
        throw std::invalid_argument("read_csv: cannot parse value '" + cell + "'");
      }
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw std::invalid_argument("read_csv: ragged row of width " + std::to_string(row.size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::invalid_argument("read_csv: no data rows");
  DenseMatrix m(static_cast<int>(rows.size()), static_cast<int>(rows.front().size()));
  for (int i = 0; i < m.rows(); ++i)
    for (int j = 0; j < m.cols(); ++j) m(i, j) = rows[i][j];
  m.check_finite("read_csv");
  return m;
}

DenseMatrix read_csv_file(const std::string& path, bool skip_header) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("read_csv: cannot open " + path);
  return read_csv(f, skip_header);
}

void write_csv(std::ostream& out, const DenseMatrix& m) {
  for (int i = 0; i < m.rows(); ++i) {
    for (int j = 0; j < m.cols(); ++j) {
      if (j) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
}

void write_csv_file(const std::string& path, const DenseMatrix& m) {
  std::ofstream f(path);
  if (!f) throw std::invalid_argument("write_csv: cannot open " + path);
  write_csv(f, m);
}

}  // namespace combifd
