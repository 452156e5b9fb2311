// Copyright 2026 The idamoe Authors
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference checks of every closed-form gradient on seeded random
// instances.

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace idamoe {

enum class GradFamily { gmm_nll, gmm_react, projector, experts, routers, decomposition };

inline constexpr GradFamily kAllGradFamilies[] = {
    GradFamily::gmm_nll,  GradFamily::gmm_react, GradFamily::projector,
    GradFamily::experts,  GradFamily::routers,   GradFamily::decomposition};

std::string_view to_string(GradFamily family);
GradFamily grad_family_from_string(std::string_view name);

struct GradCheckOptions {
  std::uint64_t seed = 1;
  std::size_t instances = 100;
  double eps = 1e-5;
  double tolerance = 1e-4;
  /// Scales the largest analytic entry of this family by 1.01 before comparing.
  std::optional<GradFamily> corrupt;
};

struct FamilyReport {
  GradFamily family;
  std::size_t instances = 0;
  std::size_t redraws = 0;  // router instances rejected because a perturbation flipped a selection
  double max_rel_error = 0.0;
  bool passed = false;
};

FamilyReport check_family(GradFamily family, const GradCheckOptions& opts);
std::vector<FamilyReport> run_grad_check(const GradCheckOptions& opts);

/// One line per family plus an overall verdict; contains no timing information.
std::string format_report(const std::vector<FamilyReport>& reports);

}  // namespace idamoe
