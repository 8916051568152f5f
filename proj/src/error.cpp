#include "dtr/error.hpp"

namespace dtr {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::kInvalidArgument:
      return "InvalidArgument";
    case ErrorCode::kData:
      return "DataError";
    case ErrorCode::kNoAdherers:
      return "NoAdherers";
    case ErrorCode::kSeparation:
      return "Separation";
    case ErrorCode::kDisqualifiedWindow:
      return "DisqualifiedWindow";
    case ErrorCode::kNumerical:
      return "Numerical";
  }
  return "Unknown";
}

}  // namespace dtr
