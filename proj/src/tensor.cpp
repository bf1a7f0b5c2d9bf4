#include "muserec/tensor.hpp"

#include <cmath>

namespace muserec {

bool all_finite(const Tensor& t) {
  for (double v : t.data)
    if (!std::isfinite(v)) return false;
  return true;
}

void require_finite(const Tensor& t, const char* where) {
  if (!all_finite(t))
    throw Error(std::string(where) + ": non-finite value");
}

}  // namespace muserec
