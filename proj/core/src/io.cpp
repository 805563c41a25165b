#include "attnverify/io.hpp"

#include <charconv>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "json_io.hpp"

namespace attnverify {

LabeledInput load_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open input file '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("input file '" + path + "': " + e.what());
  }
  if (!j.is_object()) throw ParseError("input file: expected a JSON object");

  LabeledInput out;
  out.X = detail::matrix_from(detail::field(j, "X", "input"), "X");
  if (!out.X.allFinite()) throw ValueError("X: non-finite entry");
  if (auto it = j.find("label"); it != j.end() && !it->is_null()) {
    if (!it->is_number_integer()) throw ValueError("label: expected an integer");
    out.label = it->get<int>();
  }
  return out;
}

void save_input(const std::string& path, const Matrix& X, std::optional<int> label) {
  nlohmann::json j = nlohmann::json::object();
  j["X"] = detail::matrix_to(X);
  if (label) j["label"] = *label;
  std::ofstream outf(path);
  if (!outf) throw ParseError("cannot open '" + path + "' for writing");
  outf << j.dump(2) << '\n';
}

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace attnverify
