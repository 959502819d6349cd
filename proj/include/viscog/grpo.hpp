#pragma once

#include <span>
#include <vector>

namespace viscog {

inline constexpr double kStdGuard = 1e-8;

/// Group-relative advantages: (R_i - mean) / (population std + 1e-8).
/// A group with zero spread yields exact zeros.
std::vector<double> advantages(std::span<const double> rewards);

}  // namespace viscog
