#include <doctest.h>

#include <cmath>

#include "samlp/binary_io.hpp"
#include "samlp/error.hpp"
#include "samlp/shiftquant.hpp"
#include "support.hpp"

using namespace samlp;
using namespace samlp::testing;

TEST_CASE("shift code encoding table") {
  CHECK(encode_shift_code({1, 0}) == 0b00000);
  CHECK(encode_shift_code({-1, -2}) == 0b10010);
  CHECK(encode_shift_code({-1, -15}) == 0b11111);
  CHECK(encode_shift_code({1, -15}) == 0b01111);
  CHECK_THROWS_AS(encode_shift_code({1, 1}), EncodingError);
  CHECK_THROWS_AS(encode_shift_code({1, -16}), EncodingError);
  CHECK_THROWS_AS(encode_shift_code({0, -1}), EncodingError);
  CHECK_THROWS_AS(decode_shift_code(32), EncodingError);
}

TEST_CASE("all 32 codes roundtrip through pack and unpack") {
  std::vector<std::int8_t> sign, exponent;
  for (int code = 0; code < 32; ++code) {
    sign.push_back((code & 0x10) ? -1 : 1);
    exponent.push_back(static_cast<std::int8_t>(-(code & 0x0F)));
  }
  const PackedShiftTensor packed = pack_weights({4, 8}, sign, exponent);
  CHECK(packed.bits.size() == 20);  // 32 * 5 bits
  const ShiftQuantized back = unpack_weights(packed);
  CHECK(back.sign == sign);
  CHECK(back.exponent == exponent);
  const auto codes = unpack_codes(packed);
  for (int code = 0; code < 32; ++code) {
    CHECK(codes[static_cast<std::size_t>(code)] == code);
    CHECK(encode_shift_code(decode_shift_code(static_cast<std::uint8_t>(code))) == code);
  }
}

TEST_CASE("packing is little-endian and least significant bit first") {
  // codes 0b10010 then 0b00001: bits 0-4 = 10010, bits 5-9 = 00001
  const std::vector<std::int8_t> sign{-1, 1};
  const std::vector<std::int8_t> exponent{-2, -1};
  const PackedShiftTensor packed = pack_weights({2}, sign, exponent);
  REQUIRE(packed.bits.size() == 2);
  CHECK(packed.bits[0] == 0b00110010);
  CHECK(packed.bits[1] == 0b00000000);
  CHECK_THROWS_AS(pack_weights({2}, sign, std::vector<std::int8_t>{-2, 1}), EncodingError);
  CHECK_THROWS_AS(pack_weights({3}, sign, exponent), DimensionError);
}

TEST_CASE("random 7-element tensor roundtrips") {
  Rng rng(30);
  const Tensor w = random_tensor({7}, rng);
  const ShiftQuantized q = quantize_shift(w);
  const ShiftQuantized back = unpack_weights(pack_weights(q));
  CHECK(back.sign == q.sign);
  CHECK(back.exponent == q.exponent);
  CHECK(back.weights == q.weights);
  CHECK(back.shape == Shape{7});
}

TEST_CASE("SAQ1 file layout and corruption") {
  Rng rng(31);
  const PackedShiftTensor packed = pack_weights(quantize_shift(random_tensor({3, 5}, rng)));
  const auto bytes = encode_saq1(packed);
  ByteReader r(bytes, "test");
  r.expect_magic("SAQ1");
  CHECK(r.u32() == 2);
  CHECK(r.u32() == 3);
  CHECK(r.u32() == 5);
  const auto stream = r.bytes(10);  // 15 codes * 5 bits = 75 bits
  CHECK(std::vector<std::uint8_t>(stream.begin(), stream.end()) == packed.bits);
  CHECK(r.u32() == crc32(packed.bits));
  CHECK(r.remaining() == 0);
  CHECK(decode_saq1(bytes) == packed);

  auto bad = bytes;
  bad[16] ^= 0x01;
  CHECK_THROWS_AS(decode_saq1(bad), CorruptFileError);
  auto wrong_magic = bytes;
  wrong_magic[0] = 'X';
  CHECK_THROWS_AS(decode_saq1(wrong_magic), CorruptFileError);
  CHECK_THROWS_AS(decode_saq1(std::span(bytes).first(bytes.size() - 3)), CorruptFileError);

  TempDir dir("saq1");
  write_saq1(dir / "w.saq1", packed);
  CHECK(read_saq1(dir / "w.saq1") == packed);
}

TEST_CASE("Q16.16 conversions") {
  CHECK(to_fixed(1.0f) == 65536);
  CHECK(to_fixed(-0.5f) == -32768);
  CHECK(to_fixed(0.3f) == 19661);
  CHECK(to_fixed(-0.3f) == -19661);
  CHECK(to_fixed(32767.99f) > 0);
  CHECK_THROWS_AS(to_fixed(32768.0f), RangeError);
  CHECK_THROWS_AS(to_fixed(-32768.0f), RangeError);
  CHECK_THROWS_AS(to_fixed(INFINITY), RangeError);
  CHECK_THROWS_AS(to_fixed(std::nanf("")), RangeError);
  Rng rng(32);
  for (int i = 0; i < 10000; ++i) {
    const float x = static_cast<float>(rng.uniform(-1000, 1000));
    CHECK(std::abs(static_cast<double>(from_fixed(to_fixed(x))) - x) <= std::ldexp(1.0, -17) + std::abs(x) * 1e-7);
  }
}

TEST_CASE("fixed_shift_affine examples") {
  const std::uint8_t half = encode_shift_code({1, -1});
  auto r = fixed_shift_affine(std::vector<std::int32_t>{65536}, 1, 1, std::vector<std::uint8_t>{half}, 1);
  CHECK(r.values[0] == 32768);

  for (std::int32_t x : {123457, -98765, 5, -1}) {
    const auto one = fixed_shift_affine(std::vector<std::int32_t>{x}, 1, 1, std::vector<std::uint8_t>{0}, 1);
    CHECK(one.values[0] == x);
  }

  r = fixed_shift_affine(std::vector<std::int32_t>{to_fixed(2.0f), to_fixed(3.0f)}, 1, 2,
                         std::vector<std::uint8_t>{encode_shift_code({1, -1}), encode_shift_code({1, -2})}, 1);
  CHECK(r.values[0] == 114688);
  CHECK(from_fixed(r.values[0]) == 1.75f);
  CHECK(r.saturations == 0);
}

TEST_CASE("fixed shifts round toward minus infinity") {
  const std::uint8_t quarter = encode_shift_code({1, -2});
  const auto r = fixed_shift_affine(std::vector<std::int32_t>{-5, 5}, 2, 1, std::vector<std::uint8_t>{quarter}, 1);
  CHECK(r.values[0] == -2);  // floor(-1.25)
  CHECK(r.values[1] == 1);   // floor(1.25)
}

TEST_CASE("fixed_shift_affine saturates and counts") {
  const std::vector<std::int32_t> x(4, to_fixed(30000.0f));
  const std::vector<std::uint8_t> pos(4, 0), neg(4, encode_shift_code({-1, 0}));
  auto r = fixed_shift_affine(x, 1, 4, pos, 1);
  CHECK(r.values[0] == std::numeric_limits<std::int32_t>::max());
  CHECK(r.saturations == 1);
  r = fixed_shift_affine(x, 1, 4, neg, 1);
  CHECK(r.values[0] == std::numeric_limits<std::int32_t>::min());
  CHECK(r.saturations == 1);
  CHECK_THROWS_AS(fixed_shift_affine(x, 1, 3, pos, 1), DimensionError);
}

TEST_CASE("fixed path agrees with the float shift forward") {
  Rng rng(33);
  double worst = 0.0;
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t c_in = 1 + rng.below(64), c_out = 1 + rng.below(8);
    const ShiftQuantized q = quantize_shift(random_tensor({c_out, c_in}, rng));
    const auto codes = unpack_codes(pack_weights(q));
    const Tensor x = random_tensor({1, c_in}, rng, -8, 8);
    std::vector<std::int32_t> xq(c_in);
    for (std::size_t i = 0; i < c_in; ++i) xq[i] = to_fixed(x[i]);
    const auto fixed = fixed_shift_affine(xq, 1, c_in, codes, c_out);
    const auto ref = ref_affine(to_double(x), to_double(q.weights), {}, 1, c_in, c_out);
    for (std::size_t o = 0; o < c_out; ++o) worst = std::max(worst, std::abs(from_fixed(fixed.values[o]) - ref[o]));
  }
  CHECK(worst <= std::ldexp(1.0, -12));
}
