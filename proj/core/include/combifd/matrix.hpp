#pragma once

#include <cstddef>
#include <initializer_list>
#include <iosfwd>
#include <string>
#include <vector>

namespace combifd {

/// Dense row-major real matrix. Values are immutable in spirit: all public
/// operations return new matrices and leave only finite entries behind.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(int rows, int cols, double fill = 0.0);
  DenseMatrix(std::initializer_list<std::initializer_list<double>> rows);

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(int i, int j) { return data_[static_cast<std::size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return data_[static_cast<std::size_t>(i) * cols_ + j]; }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  DenseMatrix transposed() const;

  /// Throws std::domain_error if any entry is NaN or infinite.
  void check_finite(const char* context = "DenseMatrix") const;

  bool operator==(const DenseMatrix& other) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

/// Standard product; throws std::invalid_argument naming both shapes on a
/// dimension mismatch.
DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b);

/// Entry-wise norm of A - WH. p=2 is the Frobenius norm, p=1 the absolute
/// entry sum.
double residual_norm(const DenseMatrix& a, const DenseMatrix& w, const DenseMatrix& h, int p);

/// CSV I/O: one matrix row per line, comma separated. A header row can be
/// skipped on read. Written values round-trip exactly.
DenseMatrix read_csv(std::istream& in, bool skip_header = false);
DenseMatrix read_csv_file(const std::string& path, bool skip_header = false);
void write_csv(std::ostream& out, const DenseMatrix& m);
void write_csv_file(const std::string& path, const DenseMatrix& m);

/// Shortest-width decimal form that parses back to the same double.
std::string format_double(double v);

}  // namespace combifd
