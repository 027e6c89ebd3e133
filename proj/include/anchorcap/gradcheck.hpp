#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "anchorcap/model.hpp"

namespace anchorcap {

struct GradcheckEntry {
  std::string param;
  Eigen::Index index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_error = 0.0;  // |analytic - numeric| / max(1, |numeric|)
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double max_rel_error = 0.0;
  std::map<std::string, int> group_counts;  // coordinates per parameter group

  bool passed(double tolerance = 1e-3) const { return !entries.empty() && max_rel_error <= tolerance; }
};

// Parameter group of a path: the first two dotted components
// ("ancm.visual", "anpm.graph", "fusion.f1", ...).
std::string parameter_group(const std::string& path);

// Central differences of `loss` against the gradients already stored in
// `params`, on `coordinates` coordinates dealt round-robin over every tensor.
GradcheckReport check_gradients(nn::ParameterStore& params, const std::function<double()>& loss, int coordinates,
                                std::uint64_t seed, double step = 1e-5);

// Tiny model (d=8, one head, one layer per stack, N=M=3, C=5) on a synthetic
// scene; checks the full training loss.
GradcheckReport gradcheck_tiny(std::uint64_t seed, int coordinates = 200,
                               GraphStrategy strategy = GraphStrategy::sequence);

}  // namespace anchorcap
