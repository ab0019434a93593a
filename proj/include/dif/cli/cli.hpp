#pragma once

#include <json.hpp>

#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace dif::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitFailure = 2;

/// Bad input detected after parsing (unknown shape id, malformed point, ...).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Runs `dif <args...>`. args excludes the program name.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int run(int argc, char** argv);

/// "x,y,z" -> three doubles.
std::vector<double> parse_point(const std::string& s);
/// Comma- or space-separated list, empty items dropped.
std::vector<std::string> split_list(const std::string& s);

}  // namespace dif::cli
