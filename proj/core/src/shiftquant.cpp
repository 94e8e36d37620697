#include "samlp/shiftquant.hpp"

#include <cmath>
#include <limits>

#include "samlp/binary_io.hpp"
#include "samlp/error.hpp"

namespace samlp {

std::uint8_t encode_shift_code(ShiftCode code) {
  if (code.sign != 1 && code.sign != -1) {
    throw EncodingError("shift code sign must be +-1, got " + std::to_string(code.sign));
  }
  if (code.exponent < kMinShiftExponent || code.exponent > kMaxShiftExponent) {
    throw EncodingError("shift exponent " + std::to_string(code.exponent) + " outside [-15, 0]");
  }
  const auto magnitude = static_cast<std::uint8_t>(-code.exponent);
  return static_cast<std::uint8_t>((code.sign < 0 ? kShiftSignBit : 0) | magnitude);
}

ShiftCode decode_shift_code(std::uint8_t code) {
  if (code >= (1u << kShiftCodeBits)) throw EncodingError("shift code " + std::to_string(code) + " exceeds 5 bits");
  return {static_cast<std::int8_t>((code & kShiftSignBit) ? -1 : 1),
          static_cast<std::int8_t>(-static_cast<int>(code & kShiftMagnitudeMask))};
}

PackedShiftTensor pack_weights(const Shape& shape, std::span<const std::int8_t> sign,
                               std::span<const std::int8_t> exponent) {
  const std::size_t n = shape_numel(shape);
  if (sign.size() != n || exponent.size() != n) {
    throw DimensionError("pack_weights: shape " + shape_to_string(shape) + " needs " + std::to_string(n) +
                         " signs and exponents");
  }
  PackedShiftTensor packed{shape, std::vector<std::uint8_t>((n * kShiftCodeBits + 7) / 8, 0)};
  for (std::size_t k = 0; k < n; ++k) {
    const std::uint32_t code = encode_shift_code({sign[k], exponent[k]});
    const std::size_t bit = k * kShiftCodeBits;
    // a code spans at most two bytes
    const std::uint32_t shifted = code << (bit % 8);
    packed.bits[bit / 8] |= static_cast<std::uint8_t>(shifted);
    if ((bit % 8) + kShiftCodeBits > 8) packed.bits[bit / 8 + 1] |= static_cast<std::uint8_t>(shifted >> 8);
  }
  return packed;
}

PackedShiftTensor pack_weights(const ShiftQuantized& q) { return pack_weights(q.shape, q.sign, q.exponent); }

std::vector<std::uint8_t> unpack_codes(const PackedShiftTensor& packed) {
  const std::size_t n = packed.count();
  if (packed.bits.size() != (n * kShiftCodeBits + 7) / 8) {
    throw CorruptFileError("packed shift tensor: " + std::to_string(packed.bits.size()) + " bytes for " +
                           std::to_string(n) + " codes");
  }
  std::vector<std::uint8_t> codes(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t bit = k * kShiftCodeBits;
    std::uint32_t window = packed.bits[bit / 8];
    if (bit / 8 + 1 < packed.bits.size()) window |= static_cast<std::uint32_t>(packed.bits[bit / 8 + 1]) << 8;
    codes[k] = static_cast<std::uint8_t>((window >> (bit % 8)) & 0x1F);
  }
  return codes;
}

ShiftQuantized unpack_weights(const PackedShiftTensor& packed) {
  const auto codes = unpack_codes(packed);
  ShiftQuantized q{packed.shape, {}, {}, Tensor(packed.shape)};
  q.sign.resize(codes.size());
  q.exponent.resize(codes.size());
  for (std::size_t k = 0; k < codes.size(); ++k) {
    const ShiftCode c = decode_shift_code(codes[k]);
    q.sign[k] = c.sign;
    q.exponent[k] = c.exponent;
    q.weights[k] = shift_code_value(c);
  }
  return q;
}

std::vector<std::uint8_t> encode_saq1(const PackedShiftTensor& packed) {
  ByteWriter w;
  w.magic("SAQ1");
  w.u32(static_cast<std::uint32_t>(packed.shape.size()));
  for (auto d : packed.shape) w.u32(static_cast<std::uint32_t>(d));
  w.bytes(packed.bits);
  w.u32(crc32(packed.bits));
  return std::move(w.buffer());
}

PackedShiftTensor decode_saq1(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes, "SAQ1");
  r.expect_magic("SAQ1");
  const std::uint32_t rank = r.u32();
  if (rank > 8) throw CorruptFileError("SAQ1: implausible rank " + std::to_string(rank));
  PackedShiftTensor packed;
  for (std::uint32_t i = 0; i < rank; ++i) packed.shape.push_back(r.u32());
  const std::size_t nbytes = (packed.count() * kShiftCodeBits + 7) / 8;
  auto stream = r.bytes(nbytes);
  packed.bits.assign(stream.begin(), stream.end());
  if (r.u32() != crc32(packed.bits)) throw CorruptFileError("SAQ1: CRC mismatch");
  if (r.remaining() != 0) throw CorruptFileError("SAQ1: trailing bytes");
  return packed;
}

void write_saq1(const std::filesystem::path& path, const PackedShiftTensor& packed) {
  write_file_bytes(path, encode_saq1(packed));
}

PackedShiftTensor read_saq1(const std::filesystem::path& path) { return decode_saq1(read_file_bytes(path)); }

// ---------------------------------------------------------------------------

std::int32_t to_fixed(float x) {
  if (!std::isfinite(x) || std::abs(x) >= 32768.0f) {
    throw RangeError("value " + std::to_string(x) + " outside the Q16.16 range");
  }
  const double scaled = std::round(static_cast<double>(x) * kFixedOne);
  if (scaled > std::numeric_limits<std::int32_t>::max() || scaled < std::numeric_limits<std::int32_t>::min()) {
    throw RangeError("value " + std::to_string(x) + " rounds outside the Q16.16 range");
  }
  return static_cast<std::int32_t>(scaled);
}

float from_fixed(std::int32_t q) { return static_cast<float>(static_cast<double>(q) / kFixedOne); }

FixedAffineResult fixed_shift_affine(std::span<const std::int32_t> x, std::size_t rows, std::size_t c_in,
                                     std::span<const std::uint8_t> codes, std::size_t c_out) {
  if (x.size() != rows * c_in || codes.size() != c_out * c_in) {
    throw DimensionError("fixed_shift_affine: " + std::to_string(x.size()) + " inputs and " +
                         std::to_string(codes.size()) + " codes for rows=" + std::to_string(rows) +
                         " c_in=" + std::to_string(c_in) + " c_out=" + std::to_string(c_out));
  }
  constexpr std::int64_t lo = std::numeric_limits<std::int32_t>::min();
  constexpr std::int64_t hi = std::numeric_limits<std::int32_t>::max();
  FixedAffineResult res{std::vector<std::int32_t>(rows * c_out), 0};
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t* xr = x.data() + r * c_in;
    for (std::size_t o = 0; o < c_out; ++o) {
      const std::uint8_t* crow = codes.data() + o * c_in;
      std::int64_t acc = 0;
      for (std::size_t i = 0; i < c_in; ++i) {
        // >> on a negative signed value is arithmetic since C++20
        const std::int64_t term = xr[i] >> (crow[i] & kShiftMagnitudeMask);
        acc += (crow[i] & kShiftSignBit) ? -term : term;
      }
      if (acc < lo || acc > hi) {
        ++res.saturations;
        acc = acc < lo ? lo : hi;
      }
      res.values[r * c_out + o] = static_cast<std::int32_t>(acc);
    }
  }
  return res;
}

}  // namespace samlp
