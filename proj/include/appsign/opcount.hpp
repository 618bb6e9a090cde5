#pragma once

#include <cstdint>
#include <string>

namespace appsign {

// Per-primitive weights used when collapsing an OpCount to a single total.
// All ones by default: every primitive is priced equally.
struct OpWeights {
  double mul = 1.0;
  double add = 1.0;
  double shift = 1.0;
  double xr = 1.0;
  double log2 = 1.0;
};

// Counters for the primitive operations a kernel or a forward pass incurs.
// Merging is plain component-wise addition: commutative, associative,
// identity all-zeros, so partial counts from any number of workers can be
// combined in any order.
struct OpCount {
  std::uint64_t mul = 0;
  std::uint64_t add = 0;
  std::uint64_t shift = 0;
  std::uint64_t xr = 0;
  std::uint64_t log2 = 0;

  OpCount& merge(const OpCount& o) {
    mul += o.mul;
    add += o.add;
    shift += o.shift;
    xr += o.xr;
    log2 += o.log2;
    return *this;
  }

  friend OpCount merged(OpCount a, const OpCount& b) { return a.merge(b); }

  std::uint64_t raw_total() const { return mul + add + shift + xr + log2; }

  double total(const OpWeights& w = {}) const {
    return static_cast<double>(mul) * w.mul + static_cast<double>(add) * w.add +
           static_cast<double>(shift) * w.shift + static_cast<double>(xr) * w.xr +
           static_cast<double>(log2) * w.log2;
  }

  bool operator==(const OpCount& o) const = default;
};

inline std::string to_string(const OpCount& c) {
  return "{mul:" + std::to_string(c.mul) + ", add:" + std::to_string(c.add) +
         ", shift:" + std::to_string(c.shift) + ", xor:" + std::to_string(c.xr) +
         ", log2:" + std::to_string(c.log2) + "}";
}

}  // namespace appsign
