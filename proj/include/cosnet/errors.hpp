#pragma once

#include <stdexcept>
#include <string>

namespace cosnet {

/// Base class of every error thrown by the library.
class error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class invalid_shape : public error {
 public:
  using error::error;
};

class invalid_geometry : public error {
 public:
  using error::error;
};

class invalid_config : public error {
 public:
  using error::error;
};

class invalid_label : public error {
 public:
  using error::error;
};

/// Shape propagation or wiring failure; the message names the offending node.
class graph_invalid : public error {
 public:
  using error::error;
};

class missing_tape : public error {
 public:
  using error::error;
};

class too_large : public error {
 public:
  using error::error;
};

class lookup_error : public error {
 public:
  using error::error;
};

class plan_error : public error {
 public:
  using error::error;
};

class divergence_error : public error {
 public:
  divergence_error(const std::string& what, int epoch)
      : error(what), epoch_(epoch) {}
  int epoch() const noexcept { return epoch_; }

 private:
  int epoch_;
};

/// Error codes for the on-disk dataset and checkpoint formats.
enum class format_errc {
  io,
  magic_mismatch,
  version_mismatch,
  truncated,
  label_out_of_range,
  empty_dataset,
  checksum_mismatch,
  shape_mismatch,
};

inline const char* to_string(format_errc code) {
  switch (code) {
    case format_errc::io: return "io";
    case format_errc::magic_mismatch: return "magic-mismatch";
    case format_errc::version_mismatch: return "version-mismatch";
    case format_errc::truncated: return "truncated";
    case format_errc::label_out_of_range: return "label-out-of-range";
    case format_errc::empty_dataset: return "empty-dataset";
    case format_errc::checksum_mismatch: return "checksum-mismatch";
    case format_errc::shape_mismatch: return "shape-mismatch";
  }
  return "unknown";
}

class format_error : public error {
 public:
  format_error(format_errc code, const std::string& what)
      : error(std::string(to_string(code)) + ": " + what), code_(code) {}
  format_errc code() const noexcept { return code_; }

 private:
  format_errc code_;
};

}  // namespace cosnet
