#pragma once

#include <cstdint>
#include <random>

#include "pkfr/num/array.hpp"
#include "pkfr/num/graph.hpp"

namespace pkfr::testing {

inline num::Array<double> random_array(num::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                       double hi = 1.0) {
  num::Array<double> a(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : a.storage()) v = u(rng);
  return a;
}

inline num::Var<double> random_param(num::Shape shape, std::mt19937_64& rng, double lo = -1.0,
                                     double hi = 1.0) {
  return num::parameter(random_array(std::move(shape), rng, lo, hi));
}

}  // namespace pkfr::testing
