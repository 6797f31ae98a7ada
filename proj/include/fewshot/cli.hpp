#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace fewshot::cli {

// Exit codes.
inline constexpr int kOk = 0;
inline constexpr int kUsage = 1;
inline constexpr int kDataError = 2;  // also checkpoint errors
inline constexpr int kNumeric = 3;

// args excludes the program name. Results go to out, progress and errors to
// err.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, const char* const* argv);

}  // namespace fewshot::cli
