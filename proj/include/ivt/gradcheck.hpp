// Copyright 2026 The IVT Authors
// SPDX-License-Identifier: Apache-2.0

// Finite-difference checks of every differentiable unit on small seeded
// random instances. Each check reduces the unit's output to a scalar with
// fixed random weights and compares backward() against central differences
// for the unit's inputs and a representative parameter.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace ivt::gradcheck {

struct UnitResult {
  std::string unit;
  double max_relative_error = 0.0;
  std::size_t probes = 0;
};

/// Individual units in a fixed order.
const std::vector<std::string>& unit_names();

/// Expands a selector (a unit, "nn-blocks" or "all") into unit names. Throws
/// ConfigError for unknown selectors.
std::vector<std::string> expand_selector(const std::string& selector);

/// One random instance of `unit`. max_probes bounds the components probed per
/// checked tensor (0 = all).
UnitResult check_unit(const std::string& unit, std::uint64_t seed, double eps,
                      std::size_t max_probes = 24);

}  // namespace ivt::gradcheck
