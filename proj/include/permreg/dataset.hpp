#pragma once

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "permreg/errors.hpp"
#include "permreg/numerics.hpp"

namespace permreg {

struct Dataset {
  Vector y;
  Matrix x;
  Matrix z;  // zero columns when no nuisance block was requested
  std::string response_name;
  std::vector<std::string> covariate_names;
  std::vector<std::string> nuisance_names;
  int dropped_rows = 0;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = 0;
  std::size_t b = s.size();
  while (a < b && (s[a] == ' ' || s[a] == '\t' || s[a] == '\r')) ++a;
  while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
  return s.substr(a, b - a);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(trim(field));
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

inline bool is_missing(const std::string& cell) {
  return cell.empty() || cell == "NA" || cell == "NaN";
}

inline double parse_number(const std::string& cell, int row) {
  char* end = nullptr;
  const double v = std::strtod(cell.c_str(), &end);
  if (end == cell.c_str() || *end != '\0')
    throw SchemaError("ingest_csv: unparseable numeric cell '" + cell + "' in data row " +
                      std::to_string(row));
  return v;
}

}  // namespace detail

// Reads a comma-separated file with a header row.  Dialect: UTF-8, comma
// separator, '.' decimal point, no quoting; cells equal to "", "NA" or
// "NaN" are treated as missing.  Rows with a missing cell in any requested
// column are dropped.  With standardize = true every requested variable is
// centered and scaled to unit population standard deviation; a column with
// standard deviation below 1e-12 raises DegenerateColumn.
inline Dataset ingest_csv(const std::string& path, const std::string& response,
                          const std::vector<std::string>& covariates,
                          const std::vector<std::string>& nuisance, bool standardize) {
  if (covariates.empty()) throw SchemaError("ingest_csv: no covariates requested");
  std::ifstream in(path);
  if (!in) throw FileError("ingest_csv: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line)) throw SchemaError("ingest_csv: empty file");
  const std::vector<std::string> header = detail::split_csv_line(line);

  std::vector<std::string> wanted;
  wanted.push_back(response);
  wanted.insert(wanted.end(), covariates.begin(), covariates.end());
  wanted.insert(wanted.end(), nuisance.begin(), nuisance.end());
  std::vector<int> cols;
  for (const auto& name : wanted) {
    int found = -1;
    for (int c = 0; c < static_cast<int>(header.size()); ++c)
      if (header[c] == name) {
        found = c;
        break;
      }
    if (found < 0) throw SchemaError("ingest_csv: column '" + name + "' not found");
    cols.push_back(found);
  }

  std::vector<std::vector<double>> rows;
  int dropped = 0;
  int row_no = 0;
  while (std::getline(in, line)) {
    ++row_no;
    if (detail::trim(line).empty()) continue;
    const std::vector<std::string> cells = detail::split_csv_line(line);
    if (cells.size() != header.size())
      throw SchemaError("ingest_csv: data row " + std::to_string(row_no) + " has " +
                        std::to_string(cells.size()) + " cells, header has " +
                        std::to_string(header.size()));
    bool missing = false;
    for (int c : cols)
      if (detail::is_missing(cells[c])) {
        missing = true;
        break;
      }
    if (missing) {
      ++dropped;
      continue;
    }
    std::vector<double> parsed;
    parsed.reserve(cols.size());
    for (int c : cols) parsed.push_back(detail::parse_number(cells[c], row_no));
    rows.push_back(std::move(parsed));
  }

  const int n = static_cast<int>(rows.size());
  const int p1 = static_cast<int>(covariates.size());
  const int p2 = static_cast<int>(nuisance.size());
  if (n < p1 + p2 + 2)
    throw SchemaError("ingest_csv: only " + std::to_string(n) +
                      " complete rows; need at least p + 2 = " + std::to_string(p1 + p2 + 2));

  Matrix all(n, 1 + p1 + p2);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 1 + p1 + p2; ++c) all(i, c) = rows[i][c];

  if (standardize) {
    for (int c = 0; c < all.cols(); ++c) {
      const double mean = all.col(c).mean();
      const double var = (all.col(c).array() - mean).square().mean();
      const double sd = std::sqrt(var);
      if (!(sd >= 1e-12))
        throw DegenerateColumn("ingest_csv: column '" + wanted[c] +
                               "' has near-zero standard deviation");
      all.col(c) = (all.col(c).array() - mean) / sd;
    }
  }

  Dataset ds;
  ds.y = all.col(0);
  ds.x = all.middleCols(1, p1);
  ds.z = all.rightCols(p2);
  ds.response_name = response;
  ds.covariate_names = covariates;
  ds.nuisance_names = nuisance;
  ds.dropped_rows = dropped;
  return ds;
}

}  // namespace permreg
