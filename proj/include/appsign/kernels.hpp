#pragma once

#include <optional>
#include <string>
#include <vector>

#include "appsign/errors.hpp"
#include "appsign/opcount.hpp"

namespace appsign {

enum class KernelId {
  Exact,
  TIRuD,
  RoundedPow2,
  LnsMitchell,
  Quantize,
  FixedPointFAMM,
  ShiftAdd,
  ShiftXor,
  SSM,
  DSM,
};

enum class SegmentMode { Static, Dynamic };

// An identified approximate-multiplication strategy. The id selects both
// the multiply procedure and the cost-report procedure; params are only
// meaningful for the ids that use them and are validated at construction.
//
// Calling convention throughout the engine: multiply(weight, activation).
// The second operand is the "multiplier" for the shift-family kernels.
class MulKernel {
 public:
  MulKernel() = default;
  explicit MulKernel(KernelId id) : MulKernel(id, default_param(id)) {}
  MulKernel(KernelId id, int param);

  // Canonical ids used by config files and CLI flags:
  //   exact, tirud, rounded, lns, quantize, famm, shift_add, shift_xor,
  //   ssm4, ssm8, dsm4, dsm8
  static MulKernel parse(const std::string& name);
  static const std::vector<std::string>& canonical_ids();
  std::string name() const;

  KernelId id() const { return id_; }
  int bits() const { return bits_; }            // Quantize
  int frac_bits() const { return frac_bits_; }  // FixedPointFAMM
  int segment_bits() const { return m_; }       // SSM / DSM

  // Quantize operates with per-tensor scales; the engine binds them per
  // layer from max|weight| and max|activation|. Other ids ignore this.
  MulKernel with_scales(double scale_a, double scale_b) const;
  double scale_a() const { return scale_a_; }
  double scale_b() const { return scale_b_; }

  // Approximate product of (a, b), accumulating the primitive-op cost of
  // this invocation into `ops`.
  double multiply(double a, double b, OpCount& ops) const;

  double multiply(double a, double b) const {
    OpCount scratch;
    return multiply(a, b, scratch);
  }

  // Primitive-op cost the multiply would incur on (a, b). Deterministic,
  // side-effect free, data-dependent for TIRuD and the shift kernels.
  OpCount cost(double a, double b) const {
    OpCount c;
    (void)multiply(a, b, c);
    return c;
  }

  bool operator==(const MulKernel& o) const {
    return id_ == o.id_ && bits_ == o.bits_ && frac_bits_ == o.frac_bits_ &&
           m_ == o.m_ && mode_ == o.mode_;
  }

 private:
  static int default_param(KernelId id);

  KernelId id_ = KernelId::Exact;
  int bits_ = 8;
  int frac_bits_ = 16;
  int m_ = 8;
  SegmentMode mode_ = SegmentMode::Dynamic;
  double scale_a_ = 1.0;
  double scale_b_ = 1.0;
};

// The scalar kernels. All compute on magnitudes and apply the product
// sign at the end; any zero operand yields zero.
double mul_exact(double a, double b, OpCount& ops);
double mul_tirud(double a, double b, OpCount& ops);
double mul_rounded_pow2(double a, double b, OpCount& ops);
double mul_lns_mitchell(double a, double b, OpCount& ops);
double mul_quantized(double a, double b, double scale_a, double scale_b,
                     int bits, OpCount& ops);
double mul_fixed_point(double a, double b, int frac_bits, OpCount& ops);
double mul_shift_add(double a, double b, OpCount& ops);
double mul_shift_xor(double a, double b, OpCount& ops);
double mul_segment(double a, double b, int m, SegmentMode mode, OpCount& ops);

inline OpCount kernel_cost(const MulKernel& kernel, double a, double b) {
  return kernel.cost(a, b);
}

// The two halves of the TIRuD result before the sign is applied:
// the truncated integer term and the power-of-two fractional term.
struct TirudParts {
  double integer_term = 0.0;
  double fraction_term = 0.0;
};
TirudParts tirud_parts(double a, double b);

// Smallest n with 2^n >= d, for d in (0, 1]. Exponent-extraction based;
// no libm logarithm involved.
int ceil_log2_fraction(double d);

// Power of two nearest to v > 0 in linear distance, ties to the larger
// power. Returned as the exponent e with 2^e the chosen power.
int nearest_pow2_exponent(double v);

}  // namespace appsign
