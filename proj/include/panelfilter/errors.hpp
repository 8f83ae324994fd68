#pragma once

#include <stdexcept>
#include <string>

namespace panelfilter {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Parameter vector does not match its layout.
class LayoutError : public Error {
 public:
  using Error::Error;
};

// A value lies outside the domain of a transform or density.
class DomainError : public Error {
 public:
  using Error::Error;
};

// Covariate lookup outside the table's grid.
class LookupError : public Error {
 public:
  using Error::Error;
};

// Invalid configuration or missing diagnostics.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Requested computation exceeds a documented capability cap.
class CapabilityError : public Error {
 public:
  using Error::Error;
};

// Iterated filtering aborted because too many steps failed.
class FilterError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace panelfilter
