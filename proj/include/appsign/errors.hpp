#pragma once

#include <stdexcept>
#include <string>

namespace appsign {

// Base for all errors raised by this library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// A kernel received a non-finite or otherwise unusable operand.
struct InvalidOperand : Error {
  using Error::Error;
};

// A construction-time or call-time parameter is out of its legal range.
struct InvalidParam : Error {
  using Error::Error;
};

// An operand does not fit the fixed-point format of the kernel.
struct OverflowError : Error {
  using Error::Error;
};

// Tensor shapes do not chain or do not match a layer's expectation.
struct ShapeError : Error {
  using Error::Error;
};

// A persisted file (model manifest, blob, image) is malformed.
struct FormatError : Error {
  using Error::Error;
};

// The file is well-formed but uses a feature this build does not decode.
struct UnsupportedFormat : Error {
  using Error::Error;
};

// A dataset manifest entry could not be ingested.
struct IngestError : Error {
  using Error::Error;
};

struct EmptyDataset : Error {
  using Error::Error;
};

// Weighted operation total of zero; AoC is undefined.
struct DivisionByZero : Error {
  using Error::Error;
};

}  // namespace appsign
