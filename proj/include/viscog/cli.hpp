#pragma once

#include <iosfwd>

namespace viscog {

inline constexpr int kExitOk = 0;
inline constexpr int kExitOther = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumeric = 4;
inline constexpr int kExitIo = 5;

/// Entry point of the `viscoglab` binary. Subcommands: gen-suite,
/// pretrain-teacher, train, eval, ablate, render.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace viscog
