// Copyright 2026 The CocktailSER Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>

namespace cocktailser {

/// Every failure surfaced by the library is an Error. The message is a single
/// line so the CLI can print it verbatim as a machine-parsable diagnostic.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {

template <typename... Args>
[[noreturn]] inline void fail(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  throw Error(os.str());
}

}  // namespace detail

#define CSER_CHECK(cond, ...)                      \
  do {                                             \
    if (!(cond)) ::cocktailser::detail::fail(__VA_ARGS__); \
  } while (0)

}  // namespace cocktailser
