#pragma once

// Helpers shared by the config, bundle, and artifact formats.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "safemon/errors.hpp"

namespace safemon::io {

using json = nlohmann::json;

template <typename Derived>
json matrix_to_json(const Eigen::MatrixBase<Derived>& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

template <typename Derived>
json vector_to_json(const Eigen::MatrixBase<Derived>& v) {
  json arr = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

inline double number(const json& j, const std::string& what) {
  if (!j.is_number()) throw DataError(what + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw DataError(what + ": non-finite value");
  return v;
}

/// Reads a nested array into a matrix; rows/cols of -1 accept any extent.
inline Eigen::MatrixXd matrix_from_json(const json& j, const std::string& what, Eigen::Index rows = -1,
                                        Eigen::Index cols = -1) {
  if (!j.is_array()) throw DataError(what + ": expected nested array");
  const auto r = static_cast<Eigen::Index>(j.size());
  if (rows >= 0 && r != rows) throw DataError(what + ": expected " + std::to_string(rows) + " rows");
  Eigen::Index c = cols;
  if (r > 0) {
    if (!j[0].is_array()) throw DataError(what + ": expected nested array");
    c = static_cast<Eigen::Index>(j[0].size());
  }
  if (cols >= 0 && c != cols) throw DataError(what + ": expected " + std::to_string(cols) + " columns");
  Eigen::MatrixXd m(r, std::max<Eigen::Index>(c, 0));
  for (Eigen::Index i = 0; i < r; ++i) {
    const auto& row = j[static_cast<std::size_t>(i)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != c) throw DataError(what + ": ragged rows");
    for (Eigen::Index k = 0; k < c; ++k) m(i, k) = number(row[static_cast<std::size_t>(k)], what);
  }
  return m;
}

inline Eigen::VectorXd vector_from_json(const json& j, const std::string& what, Eigen::Index size = -1) {
  if (!j.is_array()) throw DataError(what + ": expected array");
  const auto n = static_cast<Eigen::Index>(j.size());
  if (size >= 0 && n != size) throw DataError(what + ": expected " + std::to_string(size) + " entries");
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = number(j[static_cast<std::size_t>(i)], what);
  return v;
}

/// Doubles that may be infinite are stored as the strings "inf" / "-inf".
inline json extended_to_json(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double extended_from_json(const json& j, const std::string& what) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw DataError(what + ": unrecognised value '" + s + "'");
  }
  if (!j.is_number()) throw DataError(what + ": expected a number");
  return j.get<double>();
}

inline const json& require(const json& j, const char* key, const std::string& what) {
  if (!j.is_object() || !j.contains(key)) throw DataError(what + ": missing field '" + key + "'");
  return j.at(key);
}

/// Compact serialization keeps large point sets manageable; keys are sorted,
/// so identical content always produces identical bytes.
inline std::string dump(const json& j) { return j.dump() + "\n"; }

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw DataError("failed writing " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

inline json parse(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw DataError(what + ": " + e.what());
  }
}

}  // namespace safemon::io
