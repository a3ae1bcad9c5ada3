#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dtkd/autodiff.hpp"

namespace dtkd {

/// Builds a scalar loss from leaf variables on a fresh tape.
using LossBuilder = std::function<Var(std::vector<Var>&)>;

/// Largest relative error between backward() and central differences over
/// every input tensor.
double gradient_check_error(const std::vector<Tensor>& inputs, const LossBuilder& build, double eps = 1e-5);

struct GradcheckCase {
  std::string name;
  std::size_t configs = 0;
  double max_error = 0.0;
};

struct GradcheckReport {
  std::vector<GradcheckCase> cases;
  double tolerance = 1e-4;

  double worst() const;
  bool passed() const { return worst() < tolerance; }
};

/// Random-shape finite-difference checks of every primitive, layer kind and
/// loss. The end-to-end model case runs on a twentieth of the configurations.
GradcheckReport run_gradcheck_suite(std::size_t configs_per_case = 100, std::uint64_t seed = 0);

std::string gradcheck_json(const GradcheckReport& report);

}  // namespace dtkd
