#include <doctest.h>

#include <cstring>

#include "samlp/binary_io.hpp"
#include "samlp/checkpoint.hpp"
#include "samlp/error.hpp"
#include "samlp/run_config.hpp"
#include "support.hpp"

using namespace samlp;
using namespace samlp::testing;

namespace {

std::vector<std::uint8_t> bytes_of(std::string_view s) { return {s.begin(), s.end()}; }

}  // namespace

TEST_CASE("crc32 check values") {
  CHECK(crc32(bytes_of("123456789")) == 0xCBF43926u);
  CHECK(crc32(std::vector<std::uint8_t>{}) == 0u);
  CHECK(crc32(bytes_of("a")) == 0xE8B7BE43u);
}

TEST_CASE("little-endian writer and reader") {
  ByteWriter w;
  w.magic("ABCD");
  w.u8(0x7F);
  w.u16(0x1234);
  w.u32(0xA1B2C3D4u);
  w.f32(1.0f);
  w.str16("hi");
  w.str32("there");
  const auto& b = w.buffer();
  const std::vector<std::uint8_t> head{'A', 'B', 'C', 'D', 0x7F, 0x34, 0x12, 0xD4, 0xC3, 0xB2, 0xA1, 0x00, 0x00, 0x80, 0x3F};
  REQUIRE(b.size() == head.size() + 2 + 2 + 4 + 5);
  CHECK(std::equal(head.begin(), head.end(), b.begin()));

  ByteReader r(b, "sample");
  r.expect_magic("ABCD");
  CHECK(r.u8() == 0x7F);
  CHECK(r.u16() == 0x1234);
  CHECK(r.u32() == 0xA1B2C3D4u);
  CHECK(r.f32() == 1.0f);
  CHECK(r.str16() == "hi");
  CHECK(r.str32() == "there");
  CHECK(r.remaining() == 0);
  try {
    r.u8();
    FAIL("expected a CorruptFileError");
  } catch (const CorruptFileError& e) {
    CHECK(std::string(e.what()).find("sample") != std::string::npos);
  }

  ByteReader wrong(b, "sample");
  CHECK_THROWS_AS(wrong.expect_magic("ABCE"), CorruptFileError);
  CHECK_THROWS_AS(ByteWriter{}.str16(std::string(70000, 'x')), EncodingError);
}

TEST_CASE("CRC sealing") {
  ByteWriter w;
  w.str16("payload");
  seal_with_crc(w);
  const auto sealed = w.buffer();
  const auto payload = verify_sealed(sealed, "x");
  CHECK(payload.size() == sealed.size() - 4);
  for (std::size_t i = 0; i < sealed.size(); ++i) {
    auto bad = sealed;
    bad[i] ^= 0x04;
    CHECK_THROWS_AS(verify_sealed(bad, "x"), CorruptFileError);
  }
  CHECK_THROWS_AS(verify_sealed(std::span(sealed).first(3), "x"), CorruptFileError);
}

TEST_CASE("file bytes roundtrip") {
  TempDir dir("bytes");
  const auto data = bytes_of("some bytes\0with nul");
  write_file_bytes(dir / "a" / "b.bin", data);
  CHECK(read_file_bytes(dir / "a" / "b.bin") == data);
  CHECK_THROWS_AS(read_file_bytes(dir / "missing.bin"), IngestionError);
}

TEST_CASE("data spec parsing") {
  CHECK(parse_data_spec("synthetic").kind == DataKind::synthetic);
  const DataSpec mn = parse_data_spec("modelnet40:/data/mn40");
  CHECK(mn.kind == DataKind::modelnet40);
  CHECK(mn.root == "/data/mn40");
  CHECK(mn.points_per_cloud == 1024);
  CHECK(data_spec_string(mn) == "modelnet40:/data/mn40");
  CHECK_THROWS_AS(parse_data_spec("modelnet40:"), ConfigError);
  CHECK_THROWS_AS(parse_data_spec("imagenet"), ConfigError);
}

TEST_CASE("run config INI roundtrip") {
  RunConfig cfg = RunConfig::defaults(Variant::shift, DataSpec{});
  cfg.seed = 1234567890123ULL;
  cfg.epochs = 17;
  cfg.batch_size = 9;
  cfg.model.head_kind = LinearKind::shift;
  cfg.model.knn_k = 5;
  cfg.augment.scale_min = 0.1 + 0.2;  // not exactly representable in short decimal
  cfg.routing.at(ParamKind::norm).lr_start = 3.3e-4;
  cfg.routing.at(ParamKind::adder).cycles = 3;
  cfg.out_dir = "runs/x y";

  const RunConfig back = from_ini(to_ini(cfg));
  CHECK(back.model.variant == Variant::shift);
  CHECK(back.seed == cfg.seed);
  CHECK(back.epochs == 17);
  CHECK(back.batch_size == 9);
  CHECK(back.model.embed_widths == cfg.model.embed_widths);
  CHECK(back.model.encoder_widths == cfg.model.encoder_widths);
  CHECK(back.model.head_widths == cfg.model.head_widths);
  CHECK(back.model.head_kind == LinearKind::shift);
  CHECK(back.model.knn_k == 5);
  CHECK(back.model.points_in == 256);
  CHECK(back.augment.scale_min == cfg.augment.scale_min);
  CHECK(back.routing.size() == cfg.routing.size());
  CHECK(back.routing.at(ParamKind::norm).lr_start == 3.3e-4);
  CHECK(back.routing.at(ParamKind::adder).cycles == 3);
  CHECK(back.routing.at(ParamKind::adder).eta == 0.2);
  CHECK(back.out_dir == cfg.out_dir);
  CHECK(to_ini(back) == to_ini(cfg));

  TempDir dir("ini");
  write_config(cfg, dir / "c" / "config.ini");
  CHECK(to_ini(read_config(dir / "c" / "config.ini")) == to_ini(cfg));
  CHECK_THROWS_AS(read_config(dir / "none.ini"), ConfigError);
}

TEST_CASE("INI defaults and errors") {
  const RunConfig partial = from_ini("[run]\nvariant = add\nepochs = 3\n");
  CHECK(partial.model.variant == Variant::add);
  CHECK(partial.epochs == 3);
  CHECK(partial.model.embed_widths == ModelConfig::desk(Variant::add).embed_widths);
  CHECK(partial.routing.at(ParamKind::adder).lr_start == 2e-2);

  CHECK_THROWS_AS(from_ini("[run]\nvariant = conv\n"), ConfigError);
  CHECK_THROWS_AS(from_ini("[run]\nepochs = many\n"), ConfigError);
  CHECK_THROWS_AS(from_ini("[model]\nembed_widths = 1,x\n"), ConfigError);
  CHECK_THROWS_AS(from_ini("[optim.conv]\nlr_start = 1\n"), ConfigError);
  CHECK_THROWS_AS(from_ini("not an ini [[["), ConfigError);

  RunConfig bad = RunConfig::defaults(Variant::sa, DataSpec{});
  bad.batch_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig::defaults(Variant::sa, DataSpec{});
  bad.model.points_in = 128;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig::defaults(Variant::sa, DataSpec{});
  bad.epochs = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_NOTHROW(RunConfig::defaults(Variant::sa, DataSpec{}).validate());

  const RunConfig mn = RunConfig::defaults(Variant::mul, parse_data_spec("modelnet40:/x"));
  CHECK(mn.model.embed_widths == std::vector<std::size_t>{64, 64, 128, 256});
  CHECK(mn.model.points_in == 1024);
  CHECK(mn.epochs == 200);
}

TEST_CASE("checkpoint roundtrip restores identical outputs") {
  RunConfig cfg = RunConfig::defaults(Variant::sa, DataSpec{});
  cfg.model.embed_widths = {8, 8, 8, 8};
  cfg.model.encoder_widths = {8, 12};
  cfg.model.head_widths = {8};
  Rng rng(70);
  Model model(cfg.model, rng);
  const Tensor x = random_tensor({2, 256, 3}, rng);
  model.forward(x, Mode::train);  // moves the running statistics
  const Tensor logits = model.forward(x, Mode::eval).logits;

  const Checkpoint ckpt = capture_checkpoint(model, cfg, 12);
  const auto bytes = encode_checkpoint(ckpt);
  CHECK(std::memcmp(bytes.data(), "SACK", 4) == 0);
  CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);

  TempDir dir("ckpt");
  save_checkpoint(ckpt, dir / "m.ckpt");
  const Checkpoint loaded = load_checkpoint(dir / "m.ckpt");
  CHECK(loaded.epoch == 12);
  CHECK(loaded.config.out_dir.empty());
  RunConfig expected = cfg;
  expected.out_dir.clear();
  CHECK(to_ini(loaded.config) == to_ini(expected));
  CHECK(loaded.tensors.size() == model.params().size() + model.buffers().size());
  Model restored = model_from_checkpoint(loaded);
  CHECK(restored.forward(x, Mode::eval).logits == logits);
}

TEST_CASE("checkpoint corruption and architecture mismatch") {
  RunConfig cfg = RunConfig::defaults(Variant::add, DataSpec{});
  Rng rng(71);
  Model model(cfg.model, rng);
  const Checkpoint ckpt = capture_checkpoint(model, cfg, 0);
  const auto bytes = encode_checkpoint(ckpt);

  Rng pick(72);
  for (int trial = 0; trial < 50; ++trial) {
    auto bad = bytes;
    bad[pick.below(bad.size())] ^= static_cast<std::uint8_t>(1u << pick.below(8));
    CHECK_THROWS_AS(decode_checkpoint(bad), CorruptFileError);
  }
  CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(bytes.size() - 1)), CorruptFileError);
  CHECK_THROWS_AS(decode_checkpoint(std::span(bytes).first(10)), CorruptFileError);

  ModelConfig wider = cfg.model;
  wider.encoder_widths = {64, 256};
  Model other(wider, rng);
  CHECK_THROWS_AS(restore_model(other, ckpt), ConfigError);

  Checkpoint missing = ckpt;
  missing.tensors.erase("head.out.bias");
  CHECK_THROWS_AS(restore_model(model, missing), ConfigError);
  Checkpoint extra = ckpt;
  extra.tensors.emplace("stray", Tensor({1}));
  CHECK_THROWS_AS(restore_model(model, extra), ConfigError);
}
