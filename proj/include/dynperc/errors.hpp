#pragma once

#include <stdexcept>
#include <string>

namespace dynperc {

/// A caller broke a documented precondition that the library can detect
/// (e.g. a non-monotone query time on a lazily realized unit).
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// The requested lattice/operation combination is not implemented.
class Unsupported : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace dynperc
