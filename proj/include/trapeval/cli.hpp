#pragma once

#include <optional>
#include <ostream>
#include <string_view>

namespace trapeval::cli {

/// Exit codes: 0 success, 1 a defined error (diagnostic on `err`),
/// 2 bad usage.  Data goes to `out` only.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

/// Worker count from TRAPEVAL_THREADS (unset or "0" means auto, returned as
/// 0).  Throws ConfigError for anything but a non-negative integer.
[[nodiscard]] unsigned threads_from_env(std::optional<std::string_view> value);

}  // namespace trapeval::cli
