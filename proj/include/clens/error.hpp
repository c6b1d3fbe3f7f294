#pragma once

#include <stdexcept>
#include <string>

namespace clens {

/// Error raised by every toolkit operation. `code()` is a short stable tag
/// ("non-finite", "bad magic", "dim mismatch", ...) that the CLI copies into
/// its machine-readable error record; `what()` always starts with it.
class Error : public std::runtime_error {
 public:
  Error(std::string code, const std::string& detail)
      : std::runtime_error(detail.empty() ? code : code + ": " + detail),
        code_(std::move(code)),
        detail_(detail) {}

  const std::string& code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  std::string code_;
  std::string detail_;
};

namespace errc {
inline constexpr const char* kNonFinite = "non-finite";
inline constexpr const char* kBadMagic = "bad magic";
inline constexpr const char* kUnsupported = "unsupported";
inline constexpr const char* kTruncated = "truncated";
inline constexpr const char* kSizeMismatch = "size mismatch";
inline constexpr const char* kIo = "io";
inline constexpr const char* kDimMismatch = "dim mismatch";
inline constexpr const char* kInvalidArgument = "invalid argument";
inline constexpr const char* kInvalidManifest = "invalid manifest";
inline constexpr const char* kInsufficientDiversity = "insufficient diversity";
inline constexpr const char* kSampleMismatch = "sample-id mismatch";
inline constexpr const char* kEmpty = "empty";
inline constexpr const char* kDegenerate = "degenerate";
}  // namespace errc

[[noreturn]] inline void fail(const char* code, const std::string& detail = {}) {
  throw Error(code, detail);
}

inline void require(bool ok, const char* code, const std::string& detail = {}) {
  if (!ok) fail(code, detail);
}

}  // namespace clens
