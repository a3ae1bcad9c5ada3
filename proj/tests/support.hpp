#pragma once

#include <vector>

#include "dtkd/autodiff.hpp"
#include "dtkd/gradcheck.hpp"
#include "dtkd/rng.hpp"
#include "dtkd/tensor.hpp"

namespace dtkd::testing {

inline Tensor random_tensor(Shape shape, SplitMix64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

using dtkd::gradient_check_error;
using dtkd::LossBuilder;

}  // namespace dtkd::testing
