#pragma once

#include <cmath>

#include "pkfr/num/array.hpp"

namespace pkfr::nn {

/// Sinusoidal position table [count x width]: entry (p, 2i) is
/// sin(p / 10000^(2i/width)) and (p, 2i+1) the matching cosine.
template <std::floating_point T>
num::Array<T> sinusoidal_positions(std::size_t count, std::size_t width) {
  if (count == 0 || width == 0 || width % 2 != 0) {
    throw ContractError("sinusoidal_positions: width must be positive and even, got " +
                        std::to_string(width));
  }
  num::Array<T> pe({count, width});
  for (std::size_t p = 0; p < count; ++p) {
    for (std::size_t i = 0; i < width / 2; ++i) {
      const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(width));
      const double angle = static_cast<double>(p) * freq;
      pe.at(p, 2 * i) = static_cast<T>(std::sin(angle));
      pe.at(p, 2 * i + 1) = static_cast<T>(std::cos(angle));
    }
  }
  return pe;
}

}  // namespace pkfr::nn
