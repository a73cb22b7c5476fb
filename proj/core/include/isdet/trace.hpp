#pragma once

#include <string>
#include <utility>
#include <vector>

#include "isdet/tensor.hpp"

namespace isdet {

/// Collects named intermediate shapes of a forward pass. Passed as a nullable
/// pointer so tracing costs nothing when unused.
struct ShapeTrace {
  std::vector<std::pair<std::string, Shape>> stages;
  void add(std::string name, const Shape& shape) { stages.emplace_back(std::move(name), shape); }
};

}  // namespace isdet
