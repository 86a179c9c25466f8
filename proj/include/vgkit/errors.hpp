#pragma once

#include <stdexcept>
#include <string>

namespace vgkit {

// Base of every error the toolkit raises. Carries optional sample / file
// context that callers attach while the exception unwinds.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}

  virtual const char* kind() const noexcept { return "Error"; }

  const std::string& sample_id() const noexcept { return sample_id_; }
  const std::string& path() const noexcept { return path_; }

  // Innermost context wins: once set, later (outer) calls are ignored.
  void attach_sample(const std::string& id) {
    if (sample_id_.empty()) sample_id_ = id;
  }
  void attach_path(const std::string& p) {
    if (path_.empty()) path_ = p;
  }

  // One line, key=value, suitable for grepping out of stderr.
  std::string describe() const;

 private:
  std::string sample_id_;
  std::string path_;
};

#define VGKIT_ERROR_TYPE(Name, Base)                              \
  class Name : public Base {                                      \
   public:                                                        \
    using Base::Base;                                             \
    const char* kind() const noexcept override { return #Name; }  \
  }

// tensor_io
VGKIT_ERROR_TYPE(IoError, Error);
VGKIT_ERROR_TYPE(FormatError, Error);
VGKIT_ERROR_TYPE(TruncationError, Error);
VGKIT_ERROR_TYPE(InvariantError, Error);
VGKIT_ERROR_TYPE(MetaError, Error);
VGKIT_ERROR_TYPE(MissingFieldError, MetaError);
VGKIT_ERROR_TYPE(BboxError, MetaError);
VGKIT_ERROR_TYPE(GridMismatchError, MetaError);

// metrics / analysis / triage
VGKIT_ERROR_TYPE(DegenerateInput, Error);
VGKIT_ERROR_TYPE(DegenerateMask, Error);
VGKIT_ERROR_TYPE(ShapeError, Error);
VGKIT_ERROR_TYPE(RangeError, Error);
VGKIT_ERROR_TYPE(AllSuppressedError, Error);

// configuration and command-line misuse
VGKIT_ERROR_TYPE(ConfigError, Error);

#undef VGKIT_ERROR_TYPE

}  // namespace vgkit
