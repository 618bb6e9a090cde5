#include "appsign/kernels.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>

namespace appsign {

namespace {

void require_finite(double a, double b) {
  if (!std::isfinite(a) || !std::isfinite(b)) {
    throw InvalidOperand("non-finite operand");
  }
}

// +1/-1 from the operand signs; callers rely on zero operands collapsing
// the magnitude result to zero on their own.
double sign_factor(double a, double b) {
  return (std::signbit(a) != std::signbit(b)) ? -1.0 : 1.0;
}

int decimal_digit_count(std::uint64_t v) {
  int n = 1;
  while (v >= 10) {
    v /= 10;
    ++n;
  }
  return n;
}

std::uint64_t most_significant_digit(std::uint64_t v) {
  while (v >= 10) v /= 10;
  return v;
}

// 10^k as an exactly-representable double (k small in practice).
double pow10_exact(int k) {
  double p = 1.0;
  for (int i = 0; i < k; ++i) p *= 10.0;
  return p;
}

// Q8.8 encode of a magnitude; limit is the first integer the format
// cannot hold.
std::uint64_t q88_encode(double mag, std::uint64_t limit, const char* who) {
  double scaled = std::floor(mag * 256.0);
  if (scaled >= static_cast<double>(limit)) {
    throw OverflowError(std::string(who) + ": operand exceeds Q8.8 range");
  }
  return static_cast<std::uint64_t>(scaled);
}

}  // namespace

int ceil_log2_fraction(double d) {
  // d = m * 2^e with m in [0.5, 1): ceil(log2 d) is e, except exactly e-1
  // when d is itself a power of two.
  int e = 0;
  double m = std::frexp(d, &e);
  return (m == 0.5) ? e - 1 : e;
}

int nearest_pow2_exponent(double v) {
  int e = std::ilogb(v);
  // Round up from the linear midpoint 1.5*2^e; the tie goes to the larger
  // power.
  return (v >= std::ldexp(1.5, e)) ? e + 1 : e;
}

double mul_exact(double a, double b, OpCount& ops) {
  require_finite(a, b);
  ops.mul += 1;
  return a * b;
}

TirudParts tirud_parts(double a, double b) {
  double x = std::fabs(a);
  double y = std::fabs(b);
  if (x < y) std::swap(x, y);  // x: multiplicand, y: multiplier

  if (x >= 0x1p63) {
    throw InvalidOperand("tirud: operand magnitude exceeds decimal digit range");
  }

  double ix_d = std::floor(x);
  double dx = x - ix_d;
  double iy_d = std::floor(y);
  double dy = y - iy_d;

  TirudParts parts;
  if (dx != 0.0 && dy != 0.0) {
    parts.fraction_term =
        std::ldexp(1.0, ceil_log2_fraction(dx) + ceil_log2_fraction(dy));
  }

  auto ix = static_cast<std::uint64_t>(ix_d);
  auto iy = static_cast<std::uint64_t>(iy_d);
  if (ix != 0) {
    int msd_place = decimal_digit_count(ix) - 1;  // floor(log10 ix)
    double msd = static_cast<double>(most_significant_digit(ix));
    std::uint64_t rest = iy;
    int digits = decimal_digit_count(iy);
    double acc = 0.0;
    for (int j = 0; j < digits; ++j) {
      double digit = static_cast<double>(rest % 10);
      rest /= 10;
      acc += msd * digit * pow10_exact(msd_place + j);
    }
    parts.integer_term = acc;
  }
  return parts;
}

double mul_tirud(double a, double b, OpCount& ops) {
  require_finite(a, b);

  double x = std::fabs(a);
  double y = std::fabs(b);
  if (x < y) std::swap(x, y);
  double dx = x - std::floor(x);
  double dy = y - std::floor(y);
  bool has_integer = std::floor(x) != 0.0;

  TirudParts parts = tirud_parts(a, b);

  // One multiply and one accumulation add per multiplier digit, one final
  // add joining the two terms, one log2 per nonzero fraction, one shift
  // decoding the power-of-two fractional term.
  std::uint64_t digit_muls =
      has_integer
          ? static_cast<std::uint64_t>(
                decimal_digit_count(static_cast<std::uint64_t>(std::floor(y))))
          : 0;
  ops.mul += digit_muls;
  ops.add += digit_muls + 1;
  ops.log2 += (dx != 0.0 ? 1 : 0) + (dy != 0.0 ? 1 : 0);
  ops.shift += (dx != 0.0 && dy != 0.0) ? 1 : 0;

  if (a == 0.0 || b == 0.0) return 0.0;
  return sign_factor(a, b) * (parts.integer_term + parts.fraction_term);
}

double mul_rounded_pow2(double a, double b, OpCount& ops) {
  require_finite(a, b);
  ops.log2 += 2;
  ops.add += 1;
  ops.shift += 1;
  if (a == 0.0 || b == 0.0) return 0.0;
  int ea = nearest_pow2_exponent(std::fabs(a));
  int eb = nearest_pow2_exponent(std::fabs(b));
  return sign_factor(a, b) * std::ldexp(1.0, ea + eb);
}

double mul_lns_mitchell(double a, double b, OpCount& ops) {
  require_finite(a, b);
  ops.log2 += 2;
  ops.add += 2;
  ops.shift += 1;
  if (a == 0.0 || b == 0.0) return 0.0;

  double x = std::fabs(a);
  double y = std::fabs(b);
  int kx = std::ilogb(x);
  int ky = std::ilogb(y);
  double fx = std::ldexp(x, -kx) - 1.0;  // in [0, 1)
  double fy = std::ldexp(y, -ky) - 1.0;

  double log_sum = (static_cast<double>(kx) + fx) + (static_cast<double>(ky) + fy);
  double n = std::floor(log_sum);
  double g = log_sum - n;
  return sign_factor(a, b) * std::ldexp(1.0 + g, static_cast<int>(n));
}

double mul_quantized(double a, double b, double scale_a, double scale_b,
                     int bits, OpCount& ops) {
  if (bits < 2 || bits > 16) {
    throw InvalidParam("quantize: bits must be in [2,16]");
  }
  if (!(scale_a > 0.0) || !(scale_b > 0.0)) {
    throw InvalidParam("quantize: scales must be positive");
  }
  require_finite(a, b);
  ops.mul += 1;  // integer product; per-tensor scale folding is amortized

  double qmax = static_cast<double>((1 << (bits - 1)) - 1);
  auto quantize = [qmax](double v, double s) {
    return std::clamp(std::round(v / s), -qmax, qmax);
  };
  return quantize(a, scale_a) * quantize(b, scale_b) * scale_a * scale_b;
}

double mul_fixed_point(double a, double b, int frac_bits, OpCount& ops) {
  if (frac_bits < 4 || frac_bits > 24) {
    throw InvalidParam("famm: frac_bits must be in [4,24]");
  }
  require_finite(a, b);
  ops.mul += 1;
  ops.shift += 4;  // two encodes, product realignment, decode

  auto encode = [frac_bits](double v) -> std::uint64_t {
    double scaled = std::floor(std::fabs(v) * std::ldexp(1.0, frac_bits));
    if (scaled >= 0x1p32) {
      throw OverflowError("famm: operand exceeds fixed-point integer range");
    }
    return static_cast<std::uint64_t>(scaled);
  };
  std::uint64_t product = encode(a) * encode(b);
  double magnitude = std::ldexp(static_cast<double>(product >> frac_bits),
                                -frac_bits);
  return sign_factor(a, b) * magnitude;
}

double mul_shift_add(double a, double b, OpCount& ops) {
  require_finite(a, b);
  if (std::fabs(b) >= 128.0) {
    throw OverflowError("shift_add: multiplier out of Q8.8 range");
  }
  std::uint64_t y = q88_encode(std::fabs(b), 1u << 15, "shift_add");
  double mag_a = std::fabs(a);
  double acc = 0.0;
  for (std::uint64_t rest = y; rest != 0; rest &= rest - 1) {
    int i = std::countr_zero(rest);
    acc += std::ldexp(mag_a, i - 8);
    ops.shift += 1;
    ops.add += 1;
  }
  return sign_factor(a, b) * acc;
}

double mul_shift_xor(double a, double b, OpCount& ops) {
  require_finite(a, b);
  if (std::fabs(a) >= 128.0 || std::fabs(b) >= 128.0) {
    throw OverflowError("shift_xor: operand out of Q8.8 range");
  }
  std::uint64_t x = q88_encode(std::fabs(a), 1u << 15, "shift_xor");
  std::uint64_t y = q88_encode(std::fabs(b), 1u << 15, "shift_xor");
  std::uint64_t acc = 0;
  for (std::uint64_t rest = y; rest != 0; rest &= rest - 1) {
    int i = std::countr_zero(rest);
    acc ^= x << i;  // partial products combined without carries
    ops.shift += 1;
    ops.xr += 1;
  }
  return sign_factor(a, b) * std::ldexp(static_cast<double>(acc), -16);
}

double mul_segment(double a, double b, int m, SegmentMode mode, OpCount& ops) {
  if (m != 4 && m != 8) {
    throw InvalidParam("segment: m must be 4 or 8");
  }
  require_finite(a, b);
  std::uint64_t va = q88_encode(std::fabs(a), 1u << 16, "segment");
  std::uint64_t vb = q88_encode(std::fabs(b), 1u << 16, "segment");

  ops.mul += 1;
  ops.shift += 3;
  if (mode == SegmentMode::Dynamic) ops.log2 += 2;  // leading-one detection

  auto split = [m, mode](std::uint64_t v) {
    struct Seg {
      std::uint64_t value;
      int dropped;
    };
    if (mode == SegmentMode::Static) {
      return Seg{v >> (16 - m), 16 - m};
    }
    if (v == 0) return Seg{0, 0};
    int leading = std::bit_width(v) - 1;
    int dropped = std::max(0, leading - (m - 1));
    return Seg{v >> dropped, dropped};
  };

  auto sa = split(va);
  auto sb = split(vb);
  double magnitude = std::ldexp(static_cast<double>(sa.value * sb.value),
                                sa.dropped + sb.dropped - 16);
  return sign_factor(a, b) * magnitude;
}

int MulKernel::default_param(KernelId id) {
  switch (id) {
    case KernelId::Quantize:
      return 8;
    case KernelId::FixedPointFAMM:
      return 16;
    case KernelId::SSM:
    case KernelId::DSM:
      return 8;
    default:
      return 0;
  }
}

MulKernel::MulKernel(KernelId id, int param) : id_(id) {
  switch (id) {
    case KernelId::Quantize:
      if (param < 2 || param > 16) {
        throw InvalidParam("quantize: bits must be in [2,16]");
      }
      bits_ = param;
      break;
    case KernelId::FixedPointFAMM:
      if (param < 4 || param > 24) {
        throw InvalidParam("famm: frac_bits must be in [4,24]");
      }
      frac_bits_ = param;
      break;
    case KernelId::SSM:
    case KernelId::DSM:
      if (param != 4 && param != 8) {
        throw InvalidParam("segment: m must be 4 or 8");
      }
      m_ = param;
      mode_ = (id == KernelId::SSM) ? SegmentMode::Static : SegmentMode::Dynamic;
      break;
    default:
      break;
  }
}

MulKernel MulKernel::with_scales(double scale_a, double scale_b) const {
  if (!(scale_a > 0.0) || !(scale_b > 0.0)) {
    throw InvalidParam("quantize: scales must be positive");
  }
  MulKernel k = *this;
  k.scale_a_ = scale_a;
  k.scale_b_ = scale_b;
  return k;
}

const std::vector<std::string>& MulKernel::canonical_ids() {
  static const std::vector<std::string> ids = {
      "exact",     "tirud", "rounded",   "lns",  "quantize", "famm",
      "shift_add", "shift_xor", "ssm4", "ssm8", "dsm4",     "dsm8"};
  return ids;
}

MulKernel MulKernel::parse(const std::string& name) {
  if (name == "exact") return MulKernel(KernelId::Exact);
  if (name == "tirud") return MulKernel(KernelId::TIRuD);
  if (name == "rounded") return MulKernel(KernelId::RoundedPow2);
  if (name == "lns") return MulKernel(KernelId::LnsMitchell);
  if (name == "quantize") return MulKernel(KernelId::Quantize);
  if (name == "famm") return MulKernel(KernelId::FixedPointFAMM);
  if (name == "shift_add") return MulKernel(KernelId::ShiftAdd);
  if (name == "shift_xor") return MulKernel(KernelId::ShiftXor);
  if (name == "ssm4") return MulKernel(KernelId::SSM, 4);
  if (name == "ssm8") return MulKernel(KernelId::SSM, 8);
  if (name == "dsm4") return MulKernel(KernelId::DSM, 4);
  if (name == "dsm8") return MulKernel(KernelId::DSM, 8);
  throw InvalidParam("unknown kernel id: " + name);
}

std::string MulKernel::name() const {
  switch (id_) {
    case KernelId::Exact:
      return "exact";
    case KernelId::TIRuD:
      return "tirud";
    case KernelId::RoundedPow2:
      return "rounded";
    case KernelId::LnsMitchell:
      return "lns";
    case KernelId::Quantize:
      return "quantize";
    case KernelId::FixedPointFAMM:
      return "famm";
    case KernelId::ShiftAdd:
      return "shift_add";
    case KernelId::ShiftXor:
      return "shift_xor";
    case KernelId::SSM:
      return m_ == 4 ? "ssm4" : "ssm8";
    case KernelId::DSM:
      return m_ == 4 ? "dsm4" : "dsm8";
  }
  return "exact";
}

double MulKernel::multiply(double a, double b, OpCount& ops) const {
  switch (id_) {
    case KernelId::Exact:
      return mul_exact(a, b, ops);
    case KernelId::TIRuD:
      return mul_tirud(a, b, ops);
    case KernelId::RoundedPow2:
      return mul_rounded_pow2(a, b, ops);
    case KernelId::LnsMitchell:
      return mul_lns_mitchell(a, b, ops);
    case KernelId::Quantize:
      return mul_quantized(a, b, scale_a_, scale_b_, bits_, ops);
    case KernelId::FixedPointFAMM:
      return mul_fixed_point(a, b, frac_bits_, ops);
    case KernelId::ShiftAdd:
      return mul_shift_add(a, b, ops);
    case KernelId::ShiftXor:
      return mul_shift_xor(a, b, ops);
    case KernelId::SSM:
    case KernelId::DSM:
      return mul_segment(a, b, m_, mode_, ops);
  }
  throw InvalidParam("unknown kernel id");
}

}  // namespace appsign
