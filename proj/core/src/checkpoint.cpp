#include "samlp/checkpoint.hpp"

#include "samlp/binary_io.hpp"
#include "samlp/error.hpp"

namespace samlp {

namespace {
constexpr std::uint16_t kCheckpointVersion = 1;
constexpr std::uint8_t kDtypeF32 = 0;
}  // namespace

Checkpoint capture_checkpoint(Model& model, const RunConfig& config, std::uint32_t epoch) {
  Checkpoint ckpt{config, epoch, {}};
  ckpt.config.out_dir.clear();
  for (const auto& p : model.params()) ckpt.tensors.emplace(p.name, *p.value);
  for (const auto& b : model.buffers()) ckpt.tensors.emplace(b.name, *b.value);
  return ckpt;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  ByteWriter w;
  w.magic("SACK");
  w.u16(kCheckpointVersion);
  w.str32(to_ini(ckpt.config));
  w.u32(ckpt.epoch);
  w.u32(static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, t] : ckpt.tensors) {
    w.str16(name);
    w.u8(kDtypeF32);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    ByteWriter payload;
    for (float v : t.data()) payload.f32(v);
    w.bytes(payload.buffer());
    w.u32(crc32(payload.buffer()));
  }
  seal_with_crc(w);
  return std::move(w.buffer());
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(verify_sealed(bytes, "checkpoint"), "checkpoint");
  r.expect_magic("SACK");
  const auto version = r.u16();
  if (version != kCheckpointVersion) throw CorruptFileError("checkpoint: unsupported version " + std::to_string(version));
  Checkpoint ckpt;
  ckpt.config = from_ini(r.str32());
  ckpt.epoch = r.u32();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str16();
    if (r.u8() != kDtypeF32) throw CorruptFileError("checkpoint: tensor '" + name + "' has unknown dtype");
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    const std::size_t n = shape_numel(shape);
    if (n > r.remaining() / 4) throw CorruptFileError("checkpoint: tensor '" + name + "' is truncated");
    auto raw = r.bytes(n * 4);
    if (r.u32() != crc32(raw)) throw CorruptFileError("checkpoint: CRC mismatch in tensor '" + name + "'");
    ByteReader pr(raw, "checkpoint tensor");
    Tensor t(shape);
    for (auto& v : t.data()) v = pr.f32();
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  if (r.remaining() != 0) throw CorruptFileError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path));
}

void restore_model(Model& model, const Checkpoint& ckpt) {
  auto copy_in = [&](const std::string& name, Tensor* dst) {
    auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw ConfigError("checkpoint/architecture mismatch: no tensor '" + name + "'");
    if (it->second.shape() != dst->shape()) {
      throw ConfigError("checkpoint/architecture mismatch: '" + name + "' is " + shape_to_string(it->second.shape()) +
                        ", model expects " + shape_to_string(dst->shape()));
    }
    *dst = it->second;
  };
  std::size_t used = 0;
  for (const auto& p : model.params()) {
    copy_in(p.name, p.value);
    ++used;
  }
  for (const auto& b : model.buffers()) {
    copy_in(b.name, b.value);
    ++used;
  }
  if (used != ckpt.tensors.size()) {
    throw ConfigError("checkpoint/architecture mismatch: checkpoint holds " + std::to_string(ckpt.tensors.size()) +
                      " tensors, model has " + std::to_string(used));
  }
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Rng unused(0);
  Model model(ckpt.config.model, unused);
  restore_model(model, ckpt);
  return model;
}

}  // namespace samlp
