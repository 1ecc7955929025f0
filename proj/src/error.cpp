#include "efest/error.hpp"

namespace efest {

const char* to_string(Errc code) noexcept {
  switch (code) {
    case Errc::InputShape: return "input-shape";
    case Errc::NumericOverflow: return "numeric-overflow";
    case Errc::Domain: return "domain";
    case Errc::Layout: return "layout";
    case Errc::EmptyInput: return "empty-input";
    case Errc::Configuration: return "configuration";
    case Errc::Divergence: return "divergence";
    case Errc::EmptyClass: return "empty-class";
    case Errc::CacheConsistency: return "cache-consistency";
    case Errc::InsufficientData: return "insufficient-data";
    case Errc::DegenerateRegressor: return "degenerate-regressor";
    case Errc::Format: return "format";
    case Errc::Consistency: return "consistency";
    case Errc::Length: return "length";
    case Errc::Io: return "io";
    case Errc::SplitIntegrity: return "split-integrity";
    case Errc::ManifestIntegrity: return "manifest-integrity";
    case Errc::Lock: return "lock";
  }
  return "unknown";
}

}  // namespace efest
