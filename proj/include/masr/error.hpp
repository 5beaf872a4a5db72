#pragma once

#include <stdexcept>
#include <string>

namespace masr {

enum class Errc {
  invalid_argument,
  constant_volume,
  geometry_mismatch,
  channel_mismatch,
  degenerate_variance,
  grid_too_small,
  empty_atlas_set,
  empty_surface,
  config_invalid,
  index_out_of_range,
  bad_magic,
  header_parse,
  payload_length_mismatch,
  kind_dtype_mismatch,
  io_failure,
};

inline const char* to_string(Errc code) {
  switch (code) {
    case Errc::invalid_argument: return "InvalidArgument";
    case Errc::constant_volume: return "ConstantVolume";
    case Errc::geometry_mismatch: return "GeometryMismatch";
    case Errc::channel_mismatch: return "ChannelMismatch";
    case Errc::degenerate_variance: return "DegenerateVariance";
    case Errc::grid_too_small: return "GridTooSmall";
    case Errc::empty_atlas_set: return "EmptyAtlasSet";
    case Errc::empty_surface: return "EmptySurface";
    case Errc::config_invalid: return "ConfigInvalid";
    case Errc::index_out_of_range: return "IndexOutOfRange";
    case Errc::bad_magic: return "BadMagic";
    case Errc::header_parse: return "HeaderParse";
    case Errc::payload_length_mismatch: return "PayloadLengthMismatch";
    case Errc::kind_dtype_mismatch: return "KindDtypeMismatch";
    case Errc::io_failure: return "IoFailure";
  }
  return "Unknown";
}

/// Every failure raised by the library carries one of the codes above.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& detail)
      : std::runtime_error(std::string(to_string(code)) + ": " + detail), code_(code), detail_(detail) {}

  Errc code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

  /// Same error with "prefix: " in front of the detail.
  Error with_context(const std::string& prefix) const { return Error(code_, prefix + ": " + detail_); }

 private:
  Errc code_;
  std::string detail_;
};

}  // namespace masr
