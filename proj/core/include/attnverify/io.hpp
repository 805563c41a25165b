#pragma once

#include <optional>
#include <string>

#include "attnverify/model.hpp"

namespace attnverify {

struct LabeledInput {
  Matrix X;
  std::optional<int> label;
};

// Reads {"X": [[...]], "label": int?} from a JSON file.
LabeledInput load_input(const std::string& path);

// Writes the same layout; omits "label" when absent.
void save_input(const std::string& path, const Matrix& X,
                std::optional<int> label = std::nullopt);

// Shortest decimal string that parses back to the same double.
std::string format_double(double v);

}  // namespace attnverify
