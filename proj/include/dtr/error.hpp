#ifndef DTR_ERROR_HPP
#define DTR_ERROR_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace dtr {

/// Reason codes carried by every library error. The CLI maps them onto exit
/// codes and the `code` field of its JSON error objects.
enum class ErrorCode {
  kInvalidArgument,
  kData,
  kNoAdherers,
  kSeparation,
  kDisqualifiedWindow,
  kNumerical,
};

std::string_view to_string(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message) : std::runtime_error(message), code_(code) {}

  [[nodiscard]] ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) { throw Error(code, message); }

inline void require(bool condition, const std::string& message) {
  if (!condition) {
    fail(ErrorCode::kInvalidArgument, message);
  }
}

}  // namespace dtr

#endif  // DTR_ERROR_HPP
