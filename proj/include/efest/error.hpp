#pragma once

#include <stdexcept>
#include <string>

namespace efest {

enum class Errc {
  InputShape,
  NumericOverflow,
  Domain,
  Layout,
  EmptyInput,
  Configuration,
  Divergence,
  EmptyClass,
  CacheConsistency,
  InsufficientData,
  DegenerateRegressor,
  Format,
  Consistency,
  Length,
  Io,
  SplitIntegrity,
  ManifestIntegrity,
  Lock,
};

const char* to_string(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (the CLI in particular) can map error families to exit codes.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

}  // namespace efest
