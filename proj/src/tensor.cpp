#include "dualad/tensor.hpp"

namespace dualad {

std::string FeatureMap::shape_string() const {
  return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

}  // namespace dualad
