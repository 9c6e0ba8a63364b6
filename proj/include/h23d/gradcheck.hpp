#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace h23d {

struct GradGroup {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t probes = 0;
  std::size_t kinks = 0;  // probes straddling a non-differentiable point
};

struct GradcheckReport {
  std::string op;
  std::uint64_t seed = 0;
  double step = 0.0;
  double tolerance = 0.0;
  double max_rel_err = 0.0;
  std::size_t probes = 0;
  std::size_t kinks = 0;
  bool passed = false;
  double seconds = 0.0;
  std::vector<GradGroup> groups;
};

struct GradcheckOptions {
  std::size_t probes_per_group = 16;
  double step = 1e-5;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
};

// Registered op and stage ids, "end_to_end" last.
const std::vector<std::string>& gradcheck_ops();

// Central differences at 64-bit on seeded random coordinates of every
// parameter group. A probe whose central difference fails but whose analytic
// value matches one one-sided difference sits on a kink (ReLU, max) and is
// counted separately, as is one that only agrees at a tenth or hundredth of the
// step; more than a quarter of kinks fails the check.
GradcheckReport gradcheck(const std::string& op, std::uint64_t seed,
                          const GradcheckOptions& opts = {});

std::string reports_to_json(const std::vector<GradcheckReport>& reports);
std::vector<GradcheckReport> reports_from_json(const std::string& text);

}  // namespace h23d
