#include "samlp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "samlp/binary_io.hpp"
#include "samlp/error.hpp"

namespace samlp {

namespace {

// Next token, skipping '#' comments to end of line.
bool next_token(std::istream& in, std::string& tok) {
  while (in >> tok) {
    if (tok[0] != '#') return true;
    std::string rest;
    std::getline(in, rest);
  }
  return false;
}

std::uint64_t read_count(std::istream& in, const char* what) {
  std::string tok;
  if (!next_token(in, tok)) throw IngestionError(std::string("OFF: missing ") + what);
  try {
    std::size_t used = 0;
    const long long v = std::stoll(tok, &used);
    if (used != tok.size() || v < 0) throw IngestionError("");
    return static_cast<std::uint64_t>(v);
  } catch (const std::exception&) {
    throw IngestionError(std::string("OFF: bad ") + what + " '" + tok + "'");
  }
}

float read_float(std::istream& in) {
  std::string tok;
  if (!next_token(in, tok)) throw IngestionError("OFF: truncated vertex list");
  try {
    return std::stof(tok);
  } catch (const std::exception&) {
    throw IngestionError("OFF: bad coordinate '" + tok + "'");
  }
}

}  // namespace

MeshOff parse_off(std::istream& in) {
  std::string header;
  if (!next_token(in, header) || header.rfind("OFF", 0) != 0) throw IngestionError("OFF: missing header");
  // Some ModelNet files glue the vertex count onto the header ("OFF490 518 0").
  std::uint64_t nv;
  if (header.size() > 3) {
    std::istringstream glued(header.substr(3));
    nv = read_count(glued, "vertex count");
  } else {
    nv = read_count(in, "vertex count");
  }
  const std::uint64_t nf = read_count(in, "face count");
  read_count(in, "edge count");

  MeshOff mesh;
  mesh.vertices.resize(nv);
  for (auto& v : mesh.vertices) {
    for (auto& c : v) c = read_float(in);
  }
  for (std::uint64_t f = 0; f < nf; ++f) {
    const std::uint64_t arity = read_count(in, "face arity");
    std::vector<std::uint32_t> idx(arity);
    for (auto& i : idx) {
      const std::uint64_t v = read_count(in, "face index");
      if (v >= nv) {
        throw IngestionError("OFF: face " + std::to_string(f) + " references vertex " + std::to_string(v) +
                             " of " + std::to_string(nv));
      }
      i = static_cast<std::uint32_t>(v);
    }
    for (std::size_t t = 1; t + 1 < idx.size(); ++t) mesh.faces.push_back({idx[0], idx[t], idx[t + 1]});
  }
  return mesh;
}

MeshOff read_off(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  try {
    return parse_off(in);
  } catch (const IngestionError& e) {
    throw IngestionError(path.string() + ": " + e.what());
  }
}

Tensor sample_mesh(const MeshOff& mesh, std::size_t n, Rng& rng) {
  using V = std::array<double, 3>;
  auto vertex = [&](std::uint32_t i) {
    const auto& v = mesh.vertices[i];
    return V{v[0], v[1], v[2]};
  };
  std::vector<double> cumulative;
  cumulative.reserve(mesh.faces.size());
  double total = 0.0;
  for (const auto& f : mesh.faces) {
    const V a = vertex(f[0]), b = vertex(f[1]), c = vertex(f[2]);
    const V u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
    const V w{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    const V cr{u[1] * w[2] - u[2] * w[1], u[2] * w[0] - u[0] * w[2], u[0] * w[1] - u[1] * w[0]};
    total += 0.5 * std::sqrt(cr[0] * cr[0] + cr[1] * cr[1] + cr[2] * cr[2]);
    cumulative.push_back(total);
  }
  if (!(total > 0.0)) throw IngestionError("mesh has zero surface area");

  Tensor out({n, 3});
  for (std::size_t s = 0; s < n; ++s) {
    const double pick = rng.uniform() * total;
    auto it = std::upper_bound(cumulative.begin(), cumulative.end(), pick);
    if (it == cumulative.end()) --it;
    const auto& f = mesh.faces[static_cast<std::size_t>(it - cumulative.begin())];
    const double r1 = std::sqrt(rng.uniform());
    const double r2 = rng.uniform();
    const double wa = 1.0 - r1, wb = r1 * (1.0 - r2), wc = r1 * r2;
    const V a = vertex(f[0]), b = vertex(f[1]), c = vertex(f[2]);
    for (int k = 0; k < 3; ++k) out[s * 3 + k] = static_cast<float>(wa * a[k] + wb * b[k] + wc * c[k]);
  }
  return out;
}

Tensor normalize_cloud(const Tensor& points) {
  if (points.rank() != 2 || points.dim(1) != 3) {
    throw DimensionError("normalize_cloud expects [n, 3], got " + shape_to_string(points.shape()));
  }
  const std::size_t n = points.dim(0);
  if (n == 0) throw EmptyInputError("normalize_cloud: empty cloud");
  double centroid[3] = {0, 0, 0};
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) centroid[k] += points[i * 3 + k];
  }
  for (double& c : centroid) c /= static_cast<double>(n);
  double radius = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double r2 = 0.0;
    for (int k = 0; k < 3; ++k) {
      const double d = points[i * 3 + k] - centroid[k];
      r2 += d * d;
    }
    radius = std::max(radius, std::sqrt(r2));
  }
  if (!(radius > 0.0)) throw RangeError("normalize_cloud: all points coincide, scale is undefined");
  Tensor out(points.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (int k = 0; k < 3; ++k) out[i * 3 + k] = static_cast<float>((points[i * 3 + k] - centroid[k]) / radius);
  }
  return out;
}

Tensor subsample_density(const Tensor& points, std::size_t m, Rng& rng) {
  const std::size_t n = points.dim(0);
  if (m > n) throw RangeError("subsample_density: " + std::to_string(m) + " > " + std::to_string(n) + " points");
  // partial Fisher-Yates over indices
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  Tensor out({m, 3});
  for (std::size_t i = 0; i < m; ++i) std::copy_n(points.data().data() + idx[i] * 3, 3, out.data().data() + i * 3);
  return out;
}

Tensor augment(const Tensor& points, Rng& rng, const AugmentConfig& cfg) {
  if (!cfg.enabled) return points;
  double scale[3], shift[3];
  for (int k = 0; k < 3; ++k) scale[k] = rng.uniform(cfg.scale_min, cfg.scale_max);
  for (int k = 0; k < 3; ++k) shift[k] = rng.uniform(-cfg.max_shift, cfg.max_shift);
  Tensor out(points.shape());
  for (std::size_t i = 0; i < points.dim(0); ++i) {
    for (int k = 0; k < 3; ++k) out[i * 3 + k] = static_cast<float>(points[i * 3 + k] * scale[k] + shift[k]);
  }
  return out;
}

DatasetManifest make_manifest(const SplitDataset& data, std::uint64_t seed) {
  DatasetManifest m{data.train.class_names, {}, {}, data.train.points_per_cloud, seed};
  for (const auto& s : data.train.samples) m.train_ids.push_back(s.id);
  for (const auto& s : data.test.samples) m.test_ids.push_back(s.id);
  return m;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& synth_class_names() {
  static const std::vector<std::string> names{"cube", "disk", "sphere", "two_planes"};
  return names;
}

namespace {

enum SynthClass { kCube = 0, kDisk = 1, kSphere = 2, kTwoPlanes = 3 };

std::array<double, 3> jitter(Rng& rng) {
  for (;;) {
    std::array<double, 3> j{rng.normal(0, kSynthJitter), rng.normal(0, kSynthJitter), rng.normal(0, kSynthJitter)};
    if (j[0] * j[0] + j[1] * j[1] + j[2] * j[2] <= 9.0 * kSynthJitter * kSynthJitter) return j;
  }
}

}  // namespace

Tensor synth_shape_raw(int label, std::size_t n, Rng& rng) {
  Tensor out({n, 3});
  for (std::size_t i = 0; i < n; ++i) {
    double p[3] = {0, 0, 0};
    switch (label) {
      case kSphere: {
        double r;
        do {
          for (double& c : p) c = rng.normal();
          r = std::sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2]);
        } while (r < 1e-9);
        for (double& c : p) c /= r;
        break;
      }
      case kCube: {
        const auto face = rng.below(6);
        const int axis = static_cast<int>(face % 3);
        p[axis] = face < 3 ? -1.0 : 1.0;
        p[(axis + 1) % 3] = rng.uniform(-1.0, 1.0);
        p[(axis + 2) % 3] = rng.uniform(-1.0, 1.0);
        break;
      }
      case kDisk: {
        const double r = std::sqrt(rng.uniform());
        const double a = rng.uniform(0.0, 2.0 * 3.14159265358979323846);
        p[0] = r * std::cos(a);
        p[1] = r * std::sin(a);
        p[2] = rng.uniform(-0.05, 0.05);
        break;
      }
      case kTwoPlanes: {
        p[0] = rng.uniform(-1.0, 1.0);
        p[1] = rng.uniform(-1.0, 1.0);
        p[2] = rng.below(2) ? 0.4 : -0.4;
        break;
      }
      default: throw LabelError("synthetic class " + std::to_string(label) + " does not exist");
    }
    const auto j = jitter(rng);
    for (int k = 0; k < 3; ++k) out[i * 3 + k] = static_cast<float>(p[k] + j[k]);
  }
  return out;
}

SplitDataset synth_shapes(std::size_t num_per_class, std::size_t n_points, std::uint64_t seed) {
  if (n_points < 64) throw RangeError("synth_shapes: need at least 64 points per cloud");
  SplitDataset out;
  out.train.class_names = out.test.class_names = synth_class_names();
  out.train.points_per_cloud = out.test.points_per_cloud = n_points;
  Rng root(seed);
  const std::size_t n_train = (num_per_class * 8 + 5) / 10;
  for (int label = 0; label < static_cast<int>(synth_class_names().size()); ++label) {
    Rng cls_rng = root.fork(static_cast<std::uint64_t>(label) + 1);
    std::vector<std::size_t> order(num_per_class);
    std::iota(order.begin(), order.end(), std::size_t{0});
    cls_rng.shuffle(order);
    std::vector<bool> is_train(num_per_class, false);
    for (std::size_t j = 0; j < n_train; ++j) is_train[order[j]] = true;
    for (std::size_t j = 0; j < num_per_class; ++j) {
      Rng sample_rng = cls_rng.fork(j);
      Sample s{normalize_cloud(synth_shape_raw(label, n_points, sample_rng)), label,
               static_cast<std::uint32_t>(static_cast<std::size_t>(label) * num_per_class + j)};
      (is_train[j] ? out.train : out.test).samples.push_back(std::move(s));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {
constexpr std::uint16_t kCacheVersion = 1;
}

std::vector<std::uint8_t> encode_cache(const Dataset& data) {
  if (data.points_per_cloud > UINT16_MAX || data.class_names.size() > UINT16_MAX) {
    throw EncodingError("cache: points per cloud and class count must fit in 16 bits");
  }
  ByteWriter w;
  w.magic("SAPC");
  w.u16(kCacheVersion);
  w.u32(static_cast<std::uint32_t>(data.samples.size()));
  w.u16(static_cast<std::uint16_t>(data.class_names.size()));
  w.u16(static_cast<std::uint16_t>(data.points_per_cloud));
  for (const auto& s : data.samples) {
    if (s.points.size() != data.points_per_cloud * 3) throw EncodingError("cache: sample has wrong point count");
    w.u16(static_cast<std::uint16_t>(s.label));
    for (float v : s.points.data()) w.f32(v);
  }
  seal_with_crc(w);
  return std::move(w.buffer());
}

Dataset decode_cache(std::span<const std::uint8_t> bytes) {
  ByteReader r(verify_sealed(bytes, "SAPC cache"), "SAPC cache");
  r.expect_magic("SAPC");
  const auto version = r.u16();
  if (version != kCacheVersion) throw CorruptFileError("SAPC cache: unsupported version " + std::to_string(version));
  const std::uint32_t count = r.u32();
  const std::uint16_t classes = r.u16();
  Dataset d;
  d.points_per_cloud = r.u16();
  d.class_names.resize(classes);
  for (std::uint16_t c = 0; c < classes; ++c) d.class_names[c] = "class_" + std::to_string(c);
  d.samples.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Sample s{Tensor({d.points_per_cloud, 3}), r.u16(), i};
    if (s.label >= classes) throw CorruptFileError("SAPC cache: label out of range");
    for (auto& v : s.points.data()) v = r.f32();
    d.samples.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw CorruptFileError("SAPC cache: trailing bytes");
  return d;
}

void cache_write(const Dataset& data, const std::filesystem::path& path) {
  write_file_bytes(path, encode_cache(data));
}

Dataset cache_read(const std::filesystem::path& path) { return decode_cache(read_file_bytes(path)); }

// ---------------------------------------------------------------------------

namespace {

std::vector<std::filesystem::path> sorted_entries(const std::filesystem::path& dir, bool directories) {
  std::vector<std::filesystem::path> out;
  if (!std::filesystem::is_directory(dir)) return out;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (directories ? e.is_directory() : (e.is_regular_file() && e.path().extension() == ".off")) {
      out.push_back(e.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

Dataset ingest_split(const std::vector<std::filesystem::path>& class_dirs, const std::string& split,
                     std::size_t ppc, Rng& rng) {
  Dataset d;
  d.points_per_cloud = ppc;
  std::uint32_t id = 0;
  for (std::size_t c = 0; c < class_dirs.size(); ++c) {
    d.class_names.push_back(class_dirs[c].filename().string());
    for (const auto& file : sorted_entries(class_dirs[c] / split, false)) {
      Rng mesh_rng = rng.fork(id);
      Sample s{normalize_cloud(sample_mesh(read_off(file), ppc, mesh_rng)), static_cast<int>(c), id++};
      d.samples.push_back(std::move(s));
    }
  }
  return d;
}

}  // namespace

SplitDataset load_modelnet40(const std::filesystem::path& root, const std::filesystem::path& cache_dir,
                             std::size_t ppc, std::uint64_t seed) {
  const auto class_dirs = sorted_entries(root, true);
  if (class_dirs.empty()) throw IngestionError("no class directories under " + root.string());
  std::vector<std::string> names;
  for (const auto& d : class_dirs) names.push_back(d.filename().string());

  SplitDataset out;
  Rng rng(seed);
  const std::pair<Dataset*, const char*> splits[] = {{&out.train, "train"}, {&out.test, "test"}};
  for (auto [dst, split] : splits) {
    Rng split_rng = rng.fork(std::string_view(split) == "train" ? 1 : 2);
    const auto cache = cache_dir / (std::string(split) + ".sapc");
    if (std::filesystem::exists(cache)) {
      *dst = cache_read(cache);
      if (dst->points_per_cloud != ppc || dst->class_names.size() != names.size()) {
        throw CorruptFileError(cache.string() + ": cached with different points or classes; delete it to rebuild");
      }
    } else {
      *dst = ingest_split(class_dirs, split, ppc, split_rng);
      cache_write(*dst, cache);
    }
    dst->class_names = names;
  }
  // test ids continue after train ids so the two splits never collide
  const auto offset = static_cast<std::uint32_t>(out.train.samples.size());
  for (auto& s : out.test.samples) s.id += offset;
  return out;
}

}  // namespace samlp
