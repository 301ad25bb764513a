#pragma once

#include <cmath>
#include <cstddef>

#include "saferl/core/tensor.hpp"

namespace saferl::enc {

// Sinusoidal relative position code: component 2i = sin(offset / 10000^{2i/d}),
// component 2i+1 = cos of the same argument. Not learned.
inline nn::Tensor relative_positional_encoding(std::size_t offset, std::size_t d) {
  nn::Tensor p = nn::Tensor::zeros({d});
  for (std::size_t i = 0; 2 * i < d; ++i) {
    double angle =
        static_cast<double>(offset) / std::pow(10000.0, (2.0 * i) / static_cast<double>(d));
    p.data[2 * i] = std::sin(angle);
    if (2 * i + 1 < d) p.data[2 * i + 1] = std::cos(angle);
  }
  return p;
}

}  // namespace saferl::enc
