#include "samlp/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "samlp/error.hpp"
#include "samlp/optim.hpp"
#include "samlp/shiftquant.hpp"

namespace samlp {

namespace fs = std::filesystem;
using nlohmann::json;

std::string to_json_line(const MetricsRecord& m) {
  json j{{"epoch", m.epoch},
         {"train_loss", m.train_loss},
         {"train_accuracy", m.train_accuracy},
         {"test_accuracy", m.test_accuracy},
         {"grad_rms", m.grad_rms},
         {"learning_rates", m.learning_rates},
         {"zero_gradient_events", m.zero_gradient_events},
         {"seconds", m.seconds}};
  return j.dump();
}

MetricsRecord metrics_from_json_line(const std::string& line) {
  try {
    const json j = json::parse(line);
    MetricsRecord m;
    m.epoch = j.at("epoch").get<int>();
    m.train_loss = j.at("train_loss").get<double>();
    m.train_accuracy = j.at("train_accuracy").get<double>();
    m.test_accuracy = j.at("test_accuracy").get<double>();
    m.grad_rms = j.at("grad_rms").get<std::map<std::string, double>>();
    m.learning_rates = j.at("learning_rates").get<std::map<std::string, double>>();
    m.zero_gradient_events = j.at("zero_gradient_events").get<std::uint64_t>();
    m.seconds = j.at("seconds").get<double>();
    return m;
  } catch (const json::exception& e) {
    throw CorruptFileError(std::string("metrics record: ") + e.what());
  }
}

std::vector<MetricsRecord> read_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open " + path.string());
  std::vector<MetricsRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(metrics_from_json_line(line));
  }
  return out;
}

std::string to_json_line(const EvalReport& r) {
  json j{{"density", r.density},
         {"count", r.count},
         {"accuracy", r.accuracy},
         {"per_class_accuracy", r.per_class_accuracy},
         {"saturations", r.saturations}};
  return j.dump();
}

SplitDataset load_dataset(const RunConfig& cfg) {
  if (cfg.data.kind == DataKind::synthetic) {
    return synth_shapes(cfg.data.per_class, cfg.data.points_per_cloud, cfg.seed);
  }
  const fs::path cache = cfg.data.cache_dir.empty() ? cfg.out_dir / "cache" : cfg.data.cache_dir;
  return load_modelnet40(cfg.data.root, cache, cfg.data.points_per_cloud, cfg.seed);
}

Tensor make_batch(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw EmptyInputError("make_batch: no samples");
  const std::size_t n = samples.front()->points.dim(0);
  Tensor batch({samples.size(), n, 3});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i]->points.dim(0) != n) throw DimensionError("make_batch: clouds have different point counts");
    std::copy(samples[i]->points.data().begin(), samples[i]->points.data().end(),
              batch.data().begin() + static_cast<std::ptrdiff_t>(i * n * 3));
  }
  return batch;
}

namespace {

void write_manifest(const DatasetManifest& m, const fs::path& path) {
  json j{{"class_names", m.class_names},
         {"train_ids", m.train_ids},
         {"test_ids", m.test_ids},
         {"points_per_cloud", m.points_per_cloud},
         {"seed", m.seed}};
  std::ofstream out(path);
  out << j.dump(1) << '\n';
}

std::vector<int> argmax_rows(const Tensor& logits) {
  const std::size_t k = logits.dim(1);
  std::vector<int> out(logits.dim(0));
  for (std::size_t b = 0; b < out.size(); ++b) {
    const float* row = logits.data().data() + b * k;
    out[b] = static_cast<int>(std::max_element(row, row + k) - row);
  }
  return out;
}

Rng subsample_rng(const EvalOptions& opts, std::size_t density, std::uint32_t id) {
  Rng base(opts.subsample_seed + (opts.nested ? 0 : density * 0x10001ULL));
  return base.fork(id);
}

const Sample* densify(const Sample& s, const EvalOptions& opts, Sample& scratch) {
  if (!opts.density || *opts.density == s.points.dim(0)) return &s;
  Rng rng = subsample_rng(opts, *opts.density, s.id);
  scratch = Sample{subsample_density(s.points, *opts.density, rng), s.label, s.id};
  return &scratch;
}

// Parameter kinds sharing the group, e.g. "mul+norm+shift".
std::string rate_key(const ParamGroup& g) {
  std::set<std::string_view> kinds;
  for (const auto& p : g.params) kinds.insert(to_string(p.kind));
  std::string key;
  for (auto k : kinds) key += (key.empty() ? "" : "+") + std::string(k);
  return key;
}

}  // namespace

EvalReport evaluate(Model& model, const Dataset& split, const EvalOptions& opts, std::size_t batch_size) {
  const std::size_t classes = model.config().num_classes;
  EvalReport rep;
  rep.density = opts.density.value_or(split.points_per_cloud);
  rep.count = split.samples.size();
  std::vector<std::size_t> correct(classes, 0), total(classes, 0);
  std::size_t hits = 0;
  std::vector<Sample> scratch(batch_size);
  for (std::size_t start = 0; start < split.samples.size(); start += batch_size) {
    const std::size_t end = std::min(split.samples.size(), start + batch_size);
    std::vector<const Sample*> batch;
    for (std::size_t i = start; i < end; ++i) batch.push_back(densify(split.samples[i], opts, scratch[i - start]));
    const auto pred = argmax_rows(model.forward(make_batch(batch), Mode::eval).logits);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const auto label = static_cast<std::size_t>(batch[i]->label);
      if (label >= classes) throw LabelError("sample label " + std::to_string(label) + " exceeds model classes");
      ++total[label];
      if (pred[i] == batch[i]->label) {
        ++correct[label];
        ++hits;
      }
    }
  }
  rep.accuracy = rep.count ? static_cast<double>(hits) / static_cast<double>(rep.count) : 0.0;
  for (std::size_t c = 0; c < classes; ++c) {
    rep.per_class_accuracy.push_back(total[c] ? static_cast<double>(correct[c]) / static_cast<double>(total[c]) : 0.0);
  }
  for (auto& [name, layer] : model.shift_layers()) {
    if (layer->fixed_path()) rep.saturations += layer->fixed_path()->saturations;
  }
  return rep;
}

TrainResult cmd_train(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  TrainResult result;
  result.run_dir = cfg.out_dir;
  fs::create_directories(cfg.out_dir);
  write_config(cfg, cfg.out_dir / "config.ini");

  const SplitDataset data = load_dataset(cfg);
  if (data.train.class_names.size() > cfg.model.num_classes) {
    throw ConfigError("dataset has " + std::to_string(data.train.class_names.size()) + " classes but the model only " +
                      std::to_string(cfg.model.num_classes));
  }
  write_manifest(make_manifest(data, cfg.seed), cfg.out_dir / "manifest.json");

  Rng root(cfg.seed);
  Rng init_rng = root.fork(1);
  Rng shuffle_rng = root.fork(2);
  Rng augment_rng = root.fork(3);

  Model model(cfg.model, init_rng);
  auto params = model.params();
  Optimizer optimizer(route_parameters(params, cfg.routing), cfg.epochs);

  std::ofstream metrics(cfg.out_dir / "metrics.jsonl", std::ios::trunc);
  const EvalOptions eval_opts;
  double best = -1.0;
  if (cfg.epochs == 0) {
    const Checkpoint ckpt = capture_checkpoint(model, cfg, 0);
    save_checkpoint(ckpt, cfg.out_dir / "last.ckpt");
    save_checkpoint(ckpt, cfg.out_dir / "best.ckpt");
    result.final_test_accuracy = evaluate(model, data.test, eval_opts, cfg.batch_size).accuracy;
    return result;
  }

  std::vector<std::size_t> order(data.train.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto backbone = model.backbone();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    shuffle_rng.shuffle(order);
    MetricsRecord rec;
    rec.epoch = epoch;
    std::vector<double> grad_sum(backbone.size(), 0.0);
    double loss_sum = 0.0;
    std::size_t seen = 0, hits = 0, batches = 0;

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      if (end - start < 2) break;  // batch norm cannot normalize a single sample
      std::vector<Sample> augmented;
      augmented.reserve(end - start);
      for (std::size_t i = start; i < end; ++i) {
        const Sample& s = data.train.samples[order[i]];
        augmented.push_back({augment(s.points, augment_rng, cfg.augment), s.label, s.id});
      }
      std::vector<const Sample*> ptrs;
      std::vector<int> labels;
      for (const auto& s : augmented) {
        ptrs.push_back(&s);
        labels.push_back(s.label);
      }

      const auto out = model.forward(make_batch(ptrs), Mode::train);
      const CrossEntropyResult ce = softmax_cross_entropy(out.logits, labels);
      if (!std::isfinite(ce.loss)) {
        throw NonFiniteError("non-finite loss at epoch " + std::to_string(epoch) + ", batch " + std::to_string(batches) +
                             "; first offending layer: " +
                             model.first_nonfinite().value_or("none (layer outputs finite, loss overflowed)"));
      }
      model.backward(ce.dlogits);
      for (std::size_t l = 0; l < backbone.size(); ++l) grad_sum[l] += rms(backbone[l].second->weight_grad().data());
      optimizer.step(epoch);

      const auto pred = argmax_rows(out.logits);
      for (std::size_t i = 0; i < labels.size(); ++i) hits += pred[i] == labels[i];
      loss_sum += ce.loss * static_cast<double>(labels.size());
      seen += labels.size();
      ++batches;
    }

    rec.train_loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
    rec.train_accuracy = seen ? static_cast<double>(hits) / static_cast<double>(seen) : 0.0;
    for (std::size_t l = 0; l < backbone.size(); ++l) {
      rec.grad_rms[backbone[l].first] = batches ? grad_sum[l] / static_cast<double>(batches) : 0.0;
    }
    const auto rates = optimizer.learning_rates(epoch);
    for (std::size_t g = 0; g < rates.size(); ++g) rec.learning_rates[rate_key(optimizer.groups()[g])] = rates[g];
    rec.zero_gradient_events = optimizer.zero_gradient_events();
    rec.test_accuracy = evaluate(model, data.test, eval_opts, cfg.batch_size).accuracy;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    metrics << to_json_line(rec) << '\n';
    metrics.flush();
    if (log) {
      std::ostringstream line;
      line << "epoch " << std::setw(3) << epoch << "  loss " << std::fixed << std::setprecision(4) << rec.train_loss
           << "  train " << rec.train_accuracy << "  test " << rec.test_accuracy << "  (" << std::setprecision(1)
           << rec.seconds << "s)\n";
      *log << line.str() << std::flush;
    }
    if (rec.test_accuracy > best) {
      best = rec.test_accuracy;
      save_checkpoint(capture_checkpoint(model, cfg, static_cast<std::uint32_t>(epoch + 1)), cfg.out_dir / "best.ckpt");
    }
    result.final_test_accuracy = rec.test_accuracy;
    result.metrics.push_back(std::move(rec));
  }
  save_checkpoint(capture_checkpoint(model, cfg, static_cast<std::uint32_t>(cfg.epochs)), cfg.out_dir / "last.ckpt");
  return result;
}

namespace {

struct Loaded {
  Checkpoint ckpt;
  RunConfig cfg;
  Model model;
};

Loaded load_for_eval(const fs::path& checkpoint, const std::optional<DataSpec>& data) {
  Checkpoint ckpt = load_checkpoint(checkpoint);
  RunConfig cfg = ckpt.config;
  cfg.out_dir = checkpoint.parent_path();
  if (data) cfg.data = *data;
  Model model = model_from_checkpoint(ckpt);
  return {std::move(ckpt), std::move(cfg), std::move(model)};
}

}  // namespace

EvalReport cmd_eval(const fs::path& checkpoint, const EvalOptions& opts) {
  Loaded l = load_for_eval(checkpoint, opts.data);
  if (opts.packed_shift_dir) install_packed_shift(l.model, *opts.packed_shift_dir);
  const SplitDataset data = load_dataset(l.cfg);
  if (opts.density && (*opts.density == 0 || *opts.density > data.test.points_per_cloud)) {
    throw RangeError("density " + std::to_string(*opts.density) + " must be in [1, " +
                     std::to_string(data.test.points_per_cloud) + "]");
  }
  return evaluate(l.model, data.test, opts, l.cfg.batch_size);
}

std::vector<EvalReport> cmd_sweep_density(const fs::path& checkpoint, std::vector<std::size_t> densities,
                                          const EvalOptions& opts) {
  Loaded l = load_for_eval(checkpoint, opts.data);
  if (opts.packed_shift_dir) install_packed_shift(l.model, *opts.packed_shift_dir);
  const SplitDataset data = load_dataset(l.cfg);
  const std::size_t ppc = data.test.points_per_cloud;
  if (densities.empty()) densities = {ppc, ppc / 2, ppc / 4, ppc / 8};
  std::vector<EvalReport> out;
  for (std::size_t d : densities) {
    if (d == 0 || d > ppc) throw RangeError("density " + std::to_string(d) + " must be in [1, " + std::to_string(ppc) + "]");
    EvalOptions o = opts;
    o.density = d;
    out.push_back(evaluate(l.model, data.test, o, l.cfg.batch_size));
  }
  return out;
}

std::vector<GradRow> cmd_grad_report(const fs::path& checkpoint, std::size_t batches, std::optional<DataSpec> data) {
  if (batches == 0) return {};
  Loaded l = load_for_eval(checkpoint, data);
  const SplitDataset ds = load_dataset(l.cfg);
  const double eta = l.cfg.routing.count(ParamKind::adder) ? l.cfg.routing.at(ParamKind::adder).eta : 0.2;

  auto backbone = l.model.backbone();
  std::vector<GradRow> rows;
  for (const auto& [name, layer] : backbone) {
    rows.push_back({name, layer->kind(), 0.0,
                    layer->kind() == LinearKind::adder ? std::optional<double>(0.0) : std::nullopt});
  }
  // Splits are stored in class order; single-class batches would distort batch norm.
  std::vector<std::size_t> order(ds.train.samples.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng(l.cfg.seed).fork(4).shuffle(order);

  std::size_t done = 0;
  const std::size_t bs = l.cfg.batch_size;
  for (std::size_t start = 0; start + 2 <= order.size() && done < batches; start += bs, ++done) {
    const std::size_t end = std::min(order.size(), start + bs);
    std::vector<const Sample*> ptrs;
    std::vector<int> labels;
    for (std::size_t i = start; i < end; ++i) {
      ptrs.push_back(&ds.train.samples[order[i]]);
      labels.push_back(ds.train.samples[order[i]].label);
    }
    const auto out = l.model.forward(make_batch(ptrs), Mode::train);
    l.model.backward(softmax_cross_entropy(out.logits, labels).dlogits);
    for (std::size_t k = 0; k < backbone.size(); ++k) {
      const Tensor& g = backbone[k].second->weight_grad();
      rows[k].raw_rms += rms(g.data());
      if (rows[k].modulated_rms) *rows[k].modulated_rms += rms(modulate_gradient(g, eta).data());
    }
  }
  for (auto& r : rows) {
    if (done == 0) break;
    r.raw_rms /= static_cast<double>(done);
    if (r.modulated_rms) *r.modulated_rms /= static_cast<double>(done);
  }
  return rows;
}

std::string format_grad_table(const std::vector<GradRow>& rows) {
  std::ostringstream os;
  os << std::left << std::setw(12) << "layer" << std::setw(8) << "kind" << std::setw(16) << "raw_rms"
     << "modulated_rms\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(12) << r.layer << std::setw(8) << to_string(r.kind) << std::setw(16)
       << std::scientific << std::setprecision(3) << r.raw_rms;
    if (r.modulated_rms) {
      os << std::fixed << std::setprecision(4) << *r.modulated_rms;
    } else {
      os << "-";
    }
    os << std::defaultfloat << '\n';
  }
  return os.str();
}

ExportKind parse_export_kind(std::string_view name) {
  if (name == "weights_hist") return ExportKind::weights_hist;
  if (name == "features") return ExportKind::features;
  if (name == "packed_shift") return ExportKind::packed_shift;
  throw ConfigError("unknown export '" + std::string(name) + "' (expected weights_hist, features or packed_shift)");
}

namespace {

std::vector<fs::path> export_weights(Model& model, const fs::path& dir) {
  std::vector<fs::path> out;
  auto shifts = model.shift_layers();
  for (const auto& p : model.params()) {
    if (p.is_bias || p.kind == ParamKind::norm) continue;
    const std::string layer = p.name.substr(0, p.name.rfind('.'));
    Tensor values = *p.value;
    // shift layers run on their quantized image, so that is what gets exported
    if (p.kind == ParamKind::shift) values = quantize_shift(values).weights;

    const fs::path wpath = dir / ("weights_" + layer + ".csv");
    std::ofstream w(wpath);
    w << "value\n" << std::setprecision(9);
    for (float v : values.data()) w << v << '\n';
    out.push_back(wpath);

    const auto [lo_it, hi_it] = std::minmax_element(values.data().begin(), values.data().end());
    double lo = *lo_it, hi = *hi_it;
    if (hi <= lo) {
      lo -= 0.5;
      hi += 0.5;
    }
    constexpr int kBins = 64;
    std::vector<std::size_t> counts(kBins, 0);
    for (float v : values.data()) {
      const int bin = std::min(kBins - 1, static_cast<int>((v - lo) / (hi - lo) * kBins));
      ++counts[static_cast<std::size_t>(bin)];
    }
    const fs::path hpath = dir / ("hist_" + layer + ".csv");
    std::ofstream h(hpath);
    h << "bin_lo,bin_hi,count\n" << std::setprecision(9);
    for (int b = 0; b < kBins; ++b) {
      h << lo + (hi - lo) * b / kBins << ',' << lo + (hi - lo) * (b + 1) / kBins << ',' << counts[b] << '\n';
    }
    out.push_back(hpath);
  }
  return out;
}

std::vector<fs::path> export_features(Model& model, const Dataset& test, std::size_t batch_size, const fs::path& dir) {
  const fs::path path = dir / "features.csv";
  std::ofstream f(path);
  f << "label";
  const std::size_t dims = model.config().encoder_widths.back();
  for (std::size_t d = 0; d < dims; ++d) f << ",f" << d;
  f << '\n' << std::setprecision(9);
  for (std::size_t start = 0; start < test.samples.size(); start += batch_size) {
    const std::size_t end = std::min(test.samples.size(), start + batch_size);
    std::vector<const Sample*> ptrs;
    for (std::size_t i = start; i < end; ++i) ptrs.push_back(&test.samples[i]);
    const Tensor pooled = model.forward(make_batch(ptrs), Mode::eval).pooled;
    for (std::size_t i = 0; i < ptrs.size(); ++i) {
      f << ptrs[i]->label;
      for (std::size_t d = 0; d < dims; ++d) f << ',' << pooled[i * dims + d];
      f << '\n';
    }
  }
  return {path};
}

}  // namespace

std::vector<fs::path> cmd_export(const fs::path& checkpoint, ExportKind what, const fs::path& out_dir,
                                 std::optional<DataSpec> data) {
  Loaded l = load_for_eval(checkpoint, data);
  fs::create_directories(out_dir);
  switch (what) {
    case ExportKind::weights_hist: return export_weights(l.model, out_dir);
    case ExportKind::features: {
      const SplitDataset ds = load_dataset(l.cfg);
      return export_features(l.model, ds.test, l.cfg.batch_size, out_dir);
    }
    case ExportKind::packed_shift: {
      auto shifts = l.model.shift_layers();
      if (shifts.empty()) {
        throw ConfigError("model variant '" + std::string(to_string(l.cfg.model.variant)) + "' has no shift layers");
      }
      std::vector<fs::path> out;
      for (const auto& [name, layer] : shifts) {
        const fs::path p = out_dir / (name + ".saq1");
        write_saq1(p, pack_weights(layer->quantized()));
        out.push_back(p);
      }
      return out;
    }
  }
  return {};
}

void install_packed_shift(Model& model, const fs::path& dir) {
  for (auto& [name, layer] : model.shift_layers()) {
    const PackedShiftTensor packed = read_saq1(dir / (name + ".saq1"));
    if (packed.shape != layer->weight().shape()) {
      throw ConfigError("packed weights for " + name + " are " + shape_to_string(packed.shape) + ", layer is " +
                        shape_to_string(layer->weight().shape()));
    }
    layer->install_fixed_path(unpack_codes(packed));
  }
}

}  // namespace samlp
