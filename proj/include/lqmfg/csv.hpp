#pragma once

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lqmfg/types.hpp"

namespace lqmfg::csv {

/// Decimal with 15 significant digits.
inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  return buf;
}

/// Comma-separated rows with LF line endings.
class Writer {
 public:
  explicit Writer(std::ostream& os) : os_(os) {}

  void header(const std::vector<std::string>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) os_ << (i ? "," : "") << names[i];
    os_ << '\n';
  }

  void row(const std::vector<double>& values) {
    for (std::size_t i = 0; i < values.size(); ++i) os_ << (i ? "," : "") << fmt(values[i]);
    os_ << '\n';
  }

 private:
  std::ostream& os_;
};

/// Column names "name_ij" (1-based) for a row-major flattening of a rows x cols matrix.
inline std::vector<std::string> matrix_columns(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j)
      out.push_back(cols == 1 ? name + "_" + std::to_string(i + 1)
                              : name + "_" + std::to_string(i + 1) + std::to_string(j + 1));
  return out;
}

inline void append_row_major(std::vector<double>& out, const Mat& M) {
  for (Eigen::Index i = 0; i < M.rows(); ++i)
    for (Eigen::Index j = 0; j < M.cols(); ++j) out.push_back(M(i, j));
}

inline std::ofstream open(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
  return f;
}

}  // namespace lqmfg::csv
