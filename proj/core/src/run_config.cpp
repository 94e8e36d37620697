#include "samlp/run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "samlp/error.hpp"

namespace samlp {

namespace pt = boost::property_tree;

DataSpec parse_data_spec(const std::string& text) {
  DataSpec spec;
  if (text == "synthetic") return spec;
  const std::string prefix = "modelnet40:";
  if (text.rfind(prefix, 0) == 0 && text.size() > prefix.size()) {
    spec.kind = DataKind::modelnet40;
    spec.root = text.substr(prefix.size());
    spec.points_per_cloud = 1024;
    return spec;
  }
  throw ConfigError("data source must be 'synthetic' or 'modelnet40:<dir>', got '" + text + "'");
}

std::string data_spec_string(const DataSpec& spec) {
  return spec.kind == DataKind::synthetic ? "synthetic" : "modelnet40:" + spec.root.string();
}

RunConfig RunConfig::defaults(Variant variant, const DataSpec& data) {
  RunConfig cfg;
  cfg.data = data;
  if (data.kind == DataKind::synthetic) {
    cfg.model = ModelConfig::desk(variant);
    cfg.model.points_in = data.points_per_cloud;
    cfg.epochs = 60;
  } else {
    cfg.model = ModelConfig{};
    cfg.model.variant = variant;
    cfg.model.points_in = data.points_per_cloud;
    cfg.epochs = 200;
  }
  return cfg;
}

void RunConfig::validate() const {
  model.validate();
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 2) throw ConfigError("batch size must be >= 2 (batch norm needs two samples)");
  if (model.points_in != data.points_per_cloud) throw ConfigError("model points_in must match the data's points per cloud");
  if (data.kind == DataKind::synthetic && data.points_per_cloud < 64) throw ConfigError("synthetic data needs >= 64 points");
  for (const auto& [kind, route] : routing) validate_route(route);
}

namespace {

std::string join_widths(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::vector<std::size_t> split_widths(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(static_cast<std::size_t>(std::stoull(item)));
    } catch (const std::exception&) {
      throw ConfigError("bad width list '" + s + "'");
    }
  }
  return out;
}

// Present keys must convert; ptree's defaulted get would hide a bad value.
template <class T>
T get_or(const pt::ptree& t, const std::string& key, T fallback) {
  return t.get_child_optional(key) ? t.get<T>(key) : fallback;
}

// Full round-trip precision for doubles.
std::string exact(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

std::string to_ini(const RunConfig& cfg) {
  pt::ptree t;
  t.put("run.variant", std::string(to_string(cfg.model.variant)));
  t.put("run.seed", cfg.seed);
  t.put("run.epochs", cfg.epochs);
  t.put("run.batch_size", cfg.batch_size);
  t.put("run.out", cfg.out_dir.string());

  t.put("data.source", data_spec_string(cfg.data));
  t.put("data.per_class", cfg.data.per_class);
  t.put("data.points", cfg.data.points_per_cloud);
  t.put("data.cache_dir", cfg.data.cache_dir.string());

  t.put("model.embed_widths", join_widths(cfg.model.embed_widths));
  t.put("model.encoder_widths", join_widths(cfg.model.encoder_widths));
  t.put("model.head_widths", join_widths(cfg.model.head_widths));
  t.put("model.num_classes", cfg.model.num_classes);
  t.put("model.knn_k", cfg.model.knn_k);
  t.put("model.head_kind", std::string(to_string(cfg.model.head_kind)));

  t.put("augment.enabled", cfg.augment.enabled);
  t.put("augment.scale_min", exact(cfg.augment.scale_min));
  t.put("augment.scale_max", exact(cfg.augment.scale_max));
  t.put("augment.max_shift", exact(cfg.augment.max_shift));

  for (const auto& [kind, r] : cfg.routing) {
    const std::string sec = "optim." + std::string(to_string(kind));
    pt::ptree s;
    s.put("optimizer", std::string(to_string(r.optimizer)));
    s.put("lr_start", exact(r.lr_start));
    s.put("lr_end", exact(r.lr_end));
    s.put("eta", exact(r.eta));
    s.put("cycles", r.cycles);
    t.add_child(pt::ptree::path_type(sec, '/'), s);
  }
  std::ostringstream os;
  pt::write_ini(os, t);
  return os.str();
}

RunConfig from_ini(const std::string& text) {
  pt::ptree t;
  try {
    std::istringstream is(text);
    pt::read_ini(is, t);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  try {
    const Variant variant = parse_variant(get_or<std::string>(t, "run.variant", "sa"));
    DataSpec data = parse_data_spec(get_or<std::string>(t, "data.source", "synthetic"));
    data.per_class = get_or<std::size_t>(t, "data.per_class", data.per_class);
    data.points_per_cloud = get_or<std::size_t>(t, "data.points", data.points_per_cloud);
    data.cache_dir = get_or<std::string>(t, "data.cache_dir", "");

    RunConfig cfg = RunConfig::defaults(variant, data);
    cfg.seed = get_or<std::uint64_t>(t, "run.seed", cfg.seed);
    cfg.epochs = get_or<int>(t, "run.epochs", cfg.epochs);
    cfg.batch_size = get_or<std::size_t>(t, "run.batch_size", cfg.batch_size);
    cfg.out_dir = get_or<std::string>(t, "run.out", cfg.out_dir.string());

    if (auto v = t.get_optional<std::string>("model.embed_widths")) cfg.model.embed_widths = split_widths(*v);
    if (auto v = t.get_optional<std::string>("model.encoder_widths")) cfg.model.encoder_widths = split_widths(*v);
    if (auto v = t.get_optional<std::string>("model.head_widths")) cfg.model.head_widths = split_widths(*v);
    cfg.model.num_classes = get_or<std::size_t>(t, "model.num_classes", cfg.model.num_classes);
    cfg.model.knn_k = get_or<std::size_t>(t, "model.knn_k", cfg.model.knn_k);
    if (auto v = t.get_optional<std::string>("model.head_kind")) cfg.model.head_kind = parse_linear_kind(*v);

    cfg.augment.enabled = get_or<bool>(t, "augment.enabled", cfg.augment.enabled);
    cfg.augment.scale_min = get_or<double>(t, "augment.scale_min", cfg.augment.scale_min);
    cfg.augment.scale_max = get_or<double>(t, "augment.scale_max", cfg.augment.scale_max);
    cfg.augment.max_shift = get_or<double>(t, "augment.max_shift", cfg.augment.max_shift);

    for (const auto& [section, body] : t) {
      if (section.rfind("optim.", 0) != 0) continue;
      const ParamKind kind = parse_param_kind(section.substr(6));
      OptimRoute r = cfg.routing.count(kind) ? cfg.routing.at(kind) : OptimRoute{};
      r.layer_kind = kind;
      if (auto v = body.get_optional<std::string>("optimizer")) r.optimizer = parse_optimizer_kind(*v);
      r.lr_start = get_or<double>(body, "lr_start", r.lr_start);
      r.lr_end = get_or<double>(body, "lr_end", r.lr_end);
      r.eta = get_or<double>(body, "eta", r.eta);
      r.cycles = get_or<int>(body, "cycles", r.cycles);
      cfg.routing[kind] = r;
    }
    return cfg;
  } catch (const pt::ptree_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

void write_config(const RunConfig& cfg, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << to_ini(cfg);
}

RunConfig read_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_ini(ss.str());
}

}  // namespace samlp
