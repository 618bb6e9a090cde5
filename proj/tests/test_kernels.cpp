#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "appsign/kernels.hpp"
#include "appsign/rng.hpp"
#include "support/oracles.hpp"

using namespace appsign;

namespace {

OpCount count_of(std::uint64_t mul, std::uint64_t add, std::uint64_t shift,
                 std::uint64_t xr, std::uint64_t log2) {
  OpCount c;
  c.mul = mul;
  c.add = add;
  c.shift = shift;
  c.xr = xr;
  c.log2 = log2;
  return c;
}

double run(double (*f)(double, double, OpCount&), double a, double b) {
  OpCount scratch;
  return f(a, b, scratch);
}

}  // namespace

TEST_SUITE("opcount") {
  TEST_CASE("merge identity, commutativity, associativity on a small set") {
    std::vector<OpCount> values;
    for (std::uint64_t m : {0u, 1u, 3u}) {
      for (std::uint64_t a : {0u, 2u}) {
        for (std::uint64_t s : {0u, 5u}) {
          values.push_back(count_of(m, a, s, m + a, s + 1));
        }
      }
    }
    OpCount zero;
    for (const auto& v : values) {
      CHECK(merged(v, zero) == v);
      CHECK(merged(zero, v) == v);
    }
    for (const auto& a : values) {
      for (const auto& b : values) {
        CHECK(merged(a, b) == merged(b, a));
        for (const auto& c : values) {
          CHECK(merged(merged(a, b), c) == merged(a, merged(b, c)));
        }
      }
    }
  }

  TEST_CASE("weighted total") {
    OpCount c = count_of(2, 3, 4, 5, 6);
    CHECK(c.total() == doctest::Approx(20.0));
    OpWeights w;
    w.mul = 2.0;
    w.log2 = 0.5;
    CHECK(c.total(w) == doctest::Approx(4 + 3 + 4 + 5 + 3));
    CHECK(c.raw_total() == 20);
  }
}

TEST_SUITE("mul_exact") {
  TEST_CASE("examples") {
    CHECK(run(mul_exact, 3.0, 4.0) == 12.0);
    CHECK(run(mul_exact, 0.0, 7.5) == 0.0);
    CHECK(run(mul_exact, -2.0, 2.5) == -5.0);
  }
  TEST_CASE("cost") {
    CHECK(MulKernel(KernelId::Exact).cost(1.1, 2.2) == count_of(1, 0, 0, 0, 0));
  }
  TEST_CASE("non-finite rejected") {
    OpCount c;
    CHECK_THROWS_AS(mul_exact(std::nan(""), 1.0, c), InvalidOperand);
    CHECK_THROWS_AS(mul_exact(1.0, INFINITY, c), InvalidOperand);
  }
}

TEST_SUITE("mul_tirud") {
  TEST_CASE("hand-traced fixtures") {
    CHECK(run(mul_tirud, 23.3, 4.2) == 80.125);
    CHECK(run(mul_tirud, 9.0, 7.0) == 63.0);
    CHECK(run(mul_tirud, 0.0, 5.7) == 0.0);
    CHECK(run(mul_tirud, 46.0, 23.0) == 920.0);
    CHECK(run(mul_tirud, -23.3, 4.2) == -80.125);
  }

  TEST_CASE("cost report for the traced fixture") {
    CHECK(MulKernel(KernelId::TIRuD).cost(23.3, 4.2) ==
          count_of(1, 2, 1, 0, 2));
  }

  TEST_CASE("matches the digit-level oracle on seeded pairs") {
    Rng rng(20240917);
    for (int i = 0; i < 20000; ++i) {
      double a = rng.uniform(-100.0, 100.0);
      double b = rng.uniform(-100.0, 100.0);
      double got = run(mul_tirud, a, b);
      double want = test::tirud_oracle(a, b);
      REQUIRE_MESSAGE(got == want, "a=", a, " b=", b);
    }
  }

  TEST_CASE("commutative in magnitude") {
    Rng rng(7);
    for (int i = 0; i < 5000; ++i) {
      double a = rng.uniform(-50.0, 50.0);
      double b = rng.uniform(-50.0, 50.0);
      CHECK(run(mul_tirud, a, b) == run(mul_tirud, b, a));
    }
  }

  TEST_CASE("integer term never exceeds the exact integer product") {
    Rng rng(11);
    for (int i = 0; i < 20000; ++i) {
      double a = rng.uniform(0.0, 500.0);
      double b = rng.uniform(0.0, 500.0);
      double ix = std::floor(std::max(a, b));
      double iy = std::floor(std::min(a, b));
      CHECK(tirud_parts(a, b).integer_term <= ix * iy);
    }
  }

  TEST_CASE("exactness island: single-digit integers, zero fractions") {
    for (int i = 1; i <= 9; ++i) {
      for (int j = 1; j <= 9; ++j) {
        CHECK(run(mul_tirud, i, j) == static_cast<double>(i * j));
      }
    }
  }

  TEST_CASE("sub-unit operands keep only the fractional term") {
    // both < 1: integer term is 0 and the result is a power of two
    double r = run(mul_tirud, 0.3, 0.2);
    CHECK(r == 0.125);
    CHECK(tirud_parts(0.3, 0.2).integer_term == 0.0);
  }

  TEST_CASE("zero-fraction operand drops the fractional term") {
    CHECK(run(mul_tirud, 23.0, 4.2) == 80.0);
    CHECK(tirud_parts(23.0, 4.2).fraction_term == 0.0);
  }

  TEST_CASE("errors") {
    OpCount c;
    CHECK_THROWS_AS(mul_tirud(std::nan(""), 2.0, c), InvalidOperand);
    CHECK_THROWS_AS(mul_tirud(0x1p63, 2.0, c), InvalidOperand);
  }
}

TEST_SUITE("mul_rounded_pow2") {
  TEST_CASE("examples") {
    CHECK(run(mul_rounded_pow2, 23.3, 4.2) == 64.0);
    CHECK(run(mul_rounded_pow2, 1.0, 1.0) == 1.0);
    CHECK(run(mul_rounded_pow2, 0.0, 9.9) == 0.0);
  }

  TEST_CASE("cost is fixed") {
    CHECK(MulKernel(KernelId::RoundedPow2).cost(23.3, 4.2) ==
          count_of(0, 1, 1, 0, 2));
  }

  TEST_CASE("ties round to the larger power") {
    CHECK(nearest_pow2_exponent(1.5) == 1);
    CHECK(nearest_pow2_exponent(3.0) == 2);
    CHECK(nearest_pow2_exponent(24.0) == 5);  // midpoint of [16, 32]
    CHECK(nearest_pow2_exponent(23.99) == 4);
  }

  TEST_CASE("per-operand replacement stays within a factor of two") {
    Rng rng(13);
    for (int i = 0; i < 50000; ++i) {
      double v = rng.uniform(1e-3, 300.0);
      double ratio = std::ldexp(1.0, nearest_pow2_exponent(v)) / v;
      CHECK(ratio >= 0.5);
      CHECK(ratio <= 2.0);
      // sharper true bound for linear-distance rounding
      CHECK(ratio > 2.0 / 3.0 - 1e-12);
      CHECK(ratio <= 4.0 / 3.0 + 1e-12);
    }
  }

  TEST_CASE("product ratio lies in (4/9, 16/9]") {
    Rng rng(17);
    double lo = 1e300, hi = 0.0;
    for (int i = 0; i < 50000; ++i) {
      double a = rng.uniform(0.01, 100.0);
      double b = rng.uniform(0.01, 100.0);
      double ratio = run(mul_rounded_pow2, a, b) / (a * b);
      CHECK(ratio > 4.0 / 9.0 - 1e-12);
      CHECK(ratio <= 16.0 / 9.0 + 1e-12);
      lo = std::min(lo, ratio);
      hi = std::max(hi, ratio);
    }
    // the sampled extremes approach the true bounds, so products do fall
    // below 1/2: the factor-of-two guarantee is per operand, not per product
    CHECK(lo < 0.5);
    CHECK(hi > 1.5);
  }
}

TEST_SUITE("mul_lns_mitchell") {
  TEST_CASE("examples") {
    CHECK(run(mul_lns_mitchell, 23.3, 4.2) ==
          doctest::Approx(96.4).epsilon(1e-12));
    CHECK(run(mul_lns_mitchell, 2.0, 2.0) == 4.0);
    CHECK(run(mul_lns_mitchell, 0.0, 3.3) == 0.0);
  }

  TEST_CASE("powers of two are exact") {
    for (int i = -6; i <= 6; ++i) {
      for (int j = -6; j <= 6; ++j) {
        CHECK(run(mul_lns_mitchell, std::ldexp(1.0, i), std::ldexp(1.0, j)) ==
              std::ldexp(1.0, i + j));
      }
    }
  }

  TEST_CASE("underestimates with bounded relative error") {
    Rng rng(23);
    double worst = 0.0;
    for (int i = 0; i < 100000; ++i) {
      // half the pairs linear-uniform, half log-uniform across [2^-8, 2^8]
      double a, b;
      if (i % 2 == 0) {
        a = rng.uniform(0x1p-8, 0x1p8);
        b = rng.uniform(0x1p-8, 0x1p8);
      } else {
        a = std::exp2(rng.uniform(-8.0, 8.0));
        b = std::exp2(rng.uniform(-8.0, 8.0));
      }
      double exact = a * b;
      double approx = run(mul_lns_mitchell, a, b);
      double rel = (exact - approx) / exact;
      CHECK(rel >= -1e-12);
      CHECK(rel <= 0.1112);
      worst = std::max(worst, rel);
    }
    CHECK(worst > 0.10);  // the 1/9 worst case is actually approached
  }
}

TEST_SUITE("mul_quantized") {
  TEST_CASE("examples") {
    OpCount c;
    CHECK(mul_quantized(3.0, 4.0, 1.0, 1.0, 8, c) == 12.0);
    CHECK(mul_quantized(0.5, 0.5, 0.25, 0.25, 8, c) == 0.25);
    CHECK(mul_quantized(200.0, 1.0, 1.0, 1.0, 8, c) == 127.0);
  }
  TEST_CASE("cost") {
    OpCount c;
    (void)mul_quantized(1.5, 2.5, 0.1, 0.1, 8, c);
    CHECK(c == count_of(1, 0, 0, 0, 0));
  }
  TEST_CASE("saturation is symmetric") {
    OpCount c;
    CHECK(mul_quantized(-200.0, 1.0, 1.0, 1.0, 8, c) == -127.0);
  }
  TEST_CASE("errors") {
    OpCount c;
    CHECK_THROWS_AS(mul_quantized(1.0, 1.0, 0.0, 1.0, 8, c), InvalidParam);
    CHECK_THROWS_AS(mul_quantized(1.0, 1.0, -0.5, 1.0, 8, c), InvalidParam);
    CHECK_THROWS_AS(mul_quantized(1.0, 1.0, 1.0, 1.0, 1, c), InvalidParam);
    CHECK_THROWS_AS(mul_quantized(1.0, 1.0, 1.0, 1.0, 17, c), InvalidParam);
  }
}

TEST_SUITE("mul_fixed_point") {
  TEST_CASE("examples") {
    OpCount c;
    CHECK(mul_fixed_point(1.5, 2.0, 16, c) == 3.0);
    CHECK(mul_fixed_point(0.0, 8.8, 16, c) == 0.0);
    CHECK(mul_fixed_point(0x1p-20, 0x1p-20, 16, c) == 0.0);
  }
  TEST_CASE("truncation biases toward zero in magnitude") {
    Rng rng(29);
    for (int i = 0; i < 20000; ++i) {
      double a = rng.uniform(-30.0, 30.0);
      double b = rng.uniform(-30.0, 30.0);
      OpCount c;
      CHECK(std::fabs(mul_fixed_point(a, b, 16, c)) <=
            std::fabs(a * b) + 1e-12);
    }
  }
  TEST_CASE("errors") {
    OpCount c;
    CHECK_THROWS_AS(mul_fixed_point(1.0, 1.0, 3, c), InvalidParam);
    CHECK_THROWS_AS(mul_fixed_point(1.0, 1.0, 25, c), InvalidParam);
    CHECK_THROWS_AS(mul_fixed_point(0x1p17, 1.0, 16, c), OverflowError);
  }
}

TEST_SUITE("mul_shift_add") {
  TEST_CASE("examples") {
    CHECK(run(mul_shift_add, 3.0, 2.0) == 6.0);
    CHECK(run(mul_shift_add, 1.0, 0.5) == 0.5);
    CHECK(run(mul_shift_add, 4.4, 0.0) == 0.0);
  }
  TEST_CASE("cost per set bit") {
    CHECK(MulKernel(KernelId::ShiftAdd).cost(3.0, 3.0) ==
          count_of(0, 2, 2, 0, 0));
    CHECK(MulKernel(KernelId::ShiftAdd).cost(3.0, 2.0) ==
          count_of(0, 1, 1, 0, 0));
  }
  TEST_CASE("multiplier range") {
    OpCount c;
    CHECK_THROWS_AS(mul_shift_add(1.0, 128.0, c), OverflowError);
    CHECK_NOTHROW(mul_shift_add(1e6, 1.0, c));  // multiplicand unconstrained
  }
}

TEST_SUITE("mul_shift_xor") {
  TEST_CASE("examples") {
    CHECK(run(mul_shift_xor, 3.0, 2.0) == 6.0);
    CHECK(run(mul_shift_xor, 3.0, 3.0) == 5.0);  // carries are dropped
    CHECK(run(mul_shift_xor, 0.0, 1.0) == 0.0);
  }
  TEST_CASE("range") {
    OpCount c;
    CHECK_THROWS_AS(mul_shift_xor(128.0, 1.0, c), OverflowError);
    CHECK_THROWS_AS(mul_shift_xor(1.0, 128.0, c), OverflowError);
  }
  TEST_CASE("equals shift-add when the multiplier has one set bit") {
    Rng rng(31);
    for (int i = 0; i < 5000; ++i) {
      // multiplicand restricted to exact Q8.8 values so both kernels see
      // the same quantized operand
      double a = static_cast<double>(rng.index(32768)) / 256.0;
      double b = std::ldexp(1.0, static_cast<int>(rng.index(15)) - 8);
      CHECK(run(mul_shift_xor, a, b) == run(mul_shift_add, a, b));
    }
  }
}

TEST_SUITE("mul_segment") {
  TEST_CASE("examples") {
    OpCount c;
    CHECK(mul_segment(3.0, 2.0, 8, SegmentMode::Dynamic, c) == 6.0);
    CHECK(mul_segment(3.0, 2.0, 4, SegmentMode::Static, c) == 0.0);
    CHECK(mul_segment(0.0, 5.0, 8, SegmentMode::Dynamic, c) == 0.0);
  }
  TEST_CASE("static keeps only the top bits") {
    OpCount c;
    // 80.0 -> 0x5000; top 4 bits = 5 -> 5*2^12 back = 0x5000 exact
    CHECK(mul_segment(80.0, 80.0, 4, SegmentMode::Static, c) == 6400.0);
    // 17.0 -> 0x1100; top 4 bits = 1 -> drops the 0x0100 bit
    CHECK(mul_segment(17.0, 16.0, 4, SegmentMode::Static, c) == 256.0);
  }
  TEST_CASE("dynamic is exact when significands fit the segment") {
    Rng rng(37);
    for (int i = 0; i < 5000; ++i) {
      int m = (i % 2) ? 8 : 4;
      std::uint64_t va = (rng.index(1u << (m - 1)) | (1u << (m - 1)))
                         << rng.index(16 - static_cast<std::uint64_t>(m) + 1);
      std::uint64_t vb = (rng.index(1u << (m - 1)) | (1u << (m - 1)))
                         << rng.index(16 - static_cast<std::uint64_t>(m) + 1);
      double a = static_cast<double>(va) / 256.0;
      double b = static_cast<double>(vb) / 256.0;
      OpCount c;
      double got = mul_segment(a, b, m, SegmentMode::Dynamic, c);
      double want = static_cast<double>(va * vb) / 65536.0;
      CHECK(got == want);
    }
  }
  TEST_CASE("errors") {
    OpCount c;
    CHECK_THROWS_AS(mul_segment(1.0, 1.0, 5, SegmentMode::Static, c),
                    InvalidParam);
    CHECK_THROWS_AS(mul_segment(256.0, 1.0, 8, SegmentMode::Dynamic, c),
                    OverflowError);
  }
}

TEST_SUITE("kernel properties") {
  TEST_CASE("sign correctness and zero absorption across all kernels") {
    Rng rng(41);
    for (const auto& id : MulKernel::canonical_ids()) {
      MulKernel k = MulKernel::parse(id);
      if (k.id() == KernelId::Quantize) k = k.with_scales(0.5, 0.5);
      for (int i = 0; i < 2000; ++i) {
        double a = rng.uniform(-100.0, 100.0);
        double b = rng.uniform(-100.0, 100.0);
        double r = k.multiply(a, b);
        if (r != 0.0) {
          CHECK(std::signbit(r) == (std::signbit(a) != std::signbit(b)));
        }
        CHECK(k.multiply(0.0, b) == 0.0);
        CHECK(k.multiply(a, 0.0) == 0.0);
      }
    }
  }

  TEST_CASE("kernel_cost is pure and matches the counting multiply") {
    Rng rng(43);
    for (const auto& id : MulKernel::canonical_ids()) {
      MulKernel k = MulKernel::parse(id);
      if (k.id() == KernelId::Quantize) k = k.with_scales(0.5, 0.5);
      for (int i = 0; i < 200; ++i) {
        double a = rng.uniform(-100.0, 100.0);
        double b = rng.uniform(-100.0, 100.0);
        OpCount c1 = kernel_cost(k, a, b);
        OpCount c2 = kernel_cost(k, a, b);
        CHECK(c1 == c2);
        OpCount c3;
        (void)k.multiply(a, b, c3);
        CHECK(c1 == c3);
      }
    }
  }

  TEST_CASE("canonical id round trip") {
    for (const auto& id : MulKernel::canonical_ids()) {
      CHECK(MulKernel::parse(id).name() == id);
    }
    CHECK_THROWS_AS(MulKernel::parse("bogus"), InvalidParam);
    CHECK_THROWS_AS(MulKernel::parse(""), InvalidParam);
  }

  TEST_CASE("segment kernel ids carry their width") {
    CHECK(MulKernel::parse("ssm4").segment_bits() == 4);
    CHECK(MulKernel::parse("dsm8").segment_bits() == 8);
    CHECK_THROWS_AS(MulKernel(KernelId::SSM, 5), InvalidParam);
    CHECK_THROWS_AS(MulKernel(KernelId::Quantize, 40), InvalidParam);
  }
}
