#pragma once

#include <stdexcept>
#include <string>

namespace omct {

/// I/O failures and malformed input files. Carries a human-readable
/// description naming the offending file (and line, for text formats).
class io_error : public std::runtime_error {
 public:
  explicit io_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Structural problems in an otherwise readable file (bad header, bad
/// field, size mismatch). Subclass of io_error so callers can treat all
/// input problems uniformly.
class parse_error : public io_error {
 public:
  explicit parse_error(const std::string& msg) : io_error(msg) {}
};

/// A landmark class has no qualifying detection.
class landmark_missing_error : public std::runtime_error {
 public:
  explicit landmark_missing_error(const std::string& class_name)
      : std::runtime_error("no qualifying detection for landmark class '" +
                           class_name + "'"),
        class_name_(class_name) {}
  const std::string& class_name() const { return class_name_; }

 private:
  std::string class_name_;
};

/// Landmark geometry too degenerate to define an angle.
class degenerate_landmarks_error : public std::runtime_error {
 public:
  explicit degenerate_landmarks_error(const std::string& msg)
      : std::runtime_error(msg) {}
};

/// Left/right points of a landmark pair coincide.
class implausible_geometry_error : public std::runtime_error {
 public:
  explicit implausible_geometry_error(const std::string& msg)
      : std::runtime_error(msg) {}
};

/// No grid cell straddles the requested iso threshold.
class empty_surface_error : public std::runtime_error {
 public:
  explicit empty_surface_error(const std::string& msg)
      : std::runtime_error(msg) {}
};

/// Every paired difference is zero; the signed-rank test is undefined.
class all_zero_differences_error : public std::runtime_error {
 public:
  all_zero_differences_error()
      : std::runtime_error("all paired differences are zero") {}
};

}  // namespace omct
