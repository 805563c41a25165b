#pragma once

#include <string>

#include "attnverify/errors.hpp"
#include "attnverify/model.hpp"
#include "json.hpp"

// Internal JSON <-> tensor conversions shared by the file loaders.
namespace attnverify::detail {

inline double number_at(const nlohmann::json& v, const std::string& name) {
  if (!v.is_number()) throw ValueError(name + ": non-numeric entry");
  return v.get<double>();
}

inline Matrix matrix_from(const nlohmann::json& j, const std::string& name) {
  if (!j.is_array() || j.empty() || !j[0].is_array())
    throw ParseError(name + ": expected a nested array");
  const std::size_t rows = j.size();
  const std::size_t cols = j[0].size();
  Matrix out(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows; ++r) {
    if (!j[r].is_array() || j[r].size() != cols)
      throw ShapeError(name + ": ragged rows");
    for (std::size_t c = 0; c < cols; ++c)
      out(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          number_at(j[r][c], name);
  }
  return out;
}

inline Vector vector_from(const nlohmann::json& j, const std::string& name) {
  if (!j.is_array()) throw ParseError(name + ": expected an array");
  Vector out(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i)
    out(static_cast<Eigen::Index>(i)) = number_at(j[i], name);
  return out;
}

inline nlohmann::json matrix_to(const Matrix& t) {
  nlohmann::json rows = nlohmann::json::array();
  for (Eigen::Index r = 0; r < t.rows(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < t.cols(); ++c) row.push_back(t(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

inline nlohmann::json vector_to(const Vector& t) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < t.size(); ++i) a.push_back(t(i));
  return a;
}

inline const nlohmann::json& field(const nlohmann::json& j, const std::string& key,
                                   const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(where + ": missing field '" + key + "'");
  return *it;
}

}  // namespace attnverify::detail
