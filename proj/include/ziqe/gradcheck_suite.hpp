#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ziqe {

struct GradCheckRow {
  std::string name;
  double max_relative_error = 0.0;
  double threshold = 0.0;
  std::size_t coordinates = 0;
  std::string worst;  // "<parameter or input>[index]"
  bool pass = false;
};

inline constexpr double kGradCheckThreshold = 1e-5;
inline constexpr double kGradCheckEpsilon = 1e-5;

/// Central-difference checks (double precision) of every differentiable
/// layer, the speech-BERT losses, and the QE heads on randomized shapes
/// drawn from `seed`.
std::vector<GradCheckRow> run_gradcheck_suite(std::uint64_t seed = 7,
                                              double threshold = kGradCheckThreshold);

/// "name  max_rel_err  threshold  pass|FAIL" table, one row per line.
std::string format_gradcheck_table(const std::vector<GradCheckRow>& rows);

}  // namespace ziqe
