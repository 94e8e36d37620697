#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "samlp/layers.hpp"
#include "samlp/tensor.hpp"

namespace samlp {

// 5-bit weight code: bit 4 set for a negative weight, bits 3..0 hold |p|.
inline constexpr std::uint8_t kShiftSignBit = 0x10;
inline constexpr std::uint8_t kShiftMagnitudeMask = 0x0F;
inline constexpr int kShiftCodeBits = 5;

std::uint8_t encode_shift_code(ShiftCode code);
ShiftCode decode_shift_code(std::uint8_t code);

/// A shift tensor in its storage form: shape plus the contiguous 5-bit stream.
struct PackedShiftTensor {
  Shape shape;
  std::vector<std::uint8_t> bits;

  std::size_t count() const { return shape_numel(shape); }
  friend bool operator==(const PackedShiftTensor&, const PackedShiftTensor&) = default;
};

/// Packs codes back to back, least significant bit first. Raises EncodingError
/// for a sign outside {-1, +1} or an exponent outside [-15, 0].
PackedShiftTensor pack_weights(const Shape& shape, std::span<const std::int8_t> sign,
                               std::span<const std::int8_t> exponent);
PackedShiftTensor pack_weights(const ShiftQuantized& q);

/// One unpacked 5-bit code per weight.
std::vector<std::uint8_t> unpack_codes(const PackedShiftTensor& packed);
ShiftQuantized unpack_weights(const PackedShiftTensor& packed);

/// SAQ1 file: magic, u32 rank, u32 dims, bitstream, CRC32 of the bitstream.
std::vector<std::uint8_t> encode_saq1(const PackedShiftTensor& packed);
PackedShiftTensor decode_saq1(std::span<const std::uint8_t> bytes);
void write_saq1(const std::filesystem::path& path, const PackedShiftTensor& packed);
PackedShiftTensor read_saq1(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Q16.16 fixed point

inline constexpr int kFixedFractionBits = 16;
inline constexpr double kFixedOne = 65536.0;

/// Round to nearest (half away from zero) at 2^-16 resolution. Raises
/// RangeError when |x| >= 32768 or x is not finite.
std::int32_t to_fixed(float x);
float from_fixed(std::int32_t q);

struct FixedAffineResult {
  std::vector<std::int32_t> values;  // rows * c_out
  std::uint64_t saturations = 0;     // outputs clamped to the int32 range
};

/// out[r, o] = sum_i sign_oi * (x[r, i] >> |p_oi|) with arithmetic shifts
/// (rounding toward -inf), accumulated in 64 bits and saturated to Q16.16.
FixedAffineResult fixed_shift_affine(std::span<const std::int32_t> x, std::size_t rows, std::size_t c_in,
                                     std::span<const std::uint8_t> codes, std::size_t c_out);

}  // namespace samlp
