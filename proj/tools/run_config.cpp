#include "run_config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include "learn/serialize.hpp"

namespace learn {
namespace pt = boost::property_tree;

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value,
                            const std::string& why) {
  throw std::invalid_argument("config key '" + key + "': invalid value '" + value +
                              "' (" + why + ")");
}

std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "expected a non-negative integer");
  return out;
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "expected a non-negative integer");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "expected a number");
  return out;
}

std::string join_types(const std::vector<OccluderType>& types) {
  std::string out;
  for (auto t : types) {
    if (!out.empty()) out += ' ';
    out += occluder_name(t);
  }
  return out;
}

std::vector<OccluderType> to_types(const std::string& key, const std::string& v) {
  std::vector<OccluderType> out;
  std::istringstream in(v);
  for (std::string word; in >> word;) {
    try {
      out.push_back(parse_occluder(word));
    } catch (const std::invalid_argument& e) {
      bad_value(key, v, e.what());
    }
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

template <class T>
Field size_field(std::string key, T RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::to_string(c.*member); },
          [member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = to_size(k, v); }};
}

Field double_field(std::string key, double RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return fmt_double(c.*member); },
          [member](RunConfig& c, const std::string& k, const std::string& v) { c.*member = to_double(k, v); }};
}

Field weight_field(std::string key, double LossWeights::*member) {
  return {key, [member](const RunConfig& c) { return fmt_double(c.weights.*member); },
          [member](RunConfig& c, const std::string& k, const std::string& v) { c.weights.*member = to_double(k, v); }};
}

Field string_field(std::string key, std::string RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return c.*member; },
          [member](RunConfig& c, const std::string&, const std::string& v) { c.*member = v; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> f;
    f.push_back({"run.seed", [](const RunConfig& c) { return std::to_string(c.seed); },
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.seed = to_u64(k, v); }});
    f.push_back(string_field("run.root", &RunConfig::root));
    f.push_back(size_field("data.classes", &RunConfig::classes));
    f.push_back(size_field("data.per_class", &RunConfig::per_class));
    f.push_back(size_field("data.image_size", &RunConfig::image_size));
    f.push_back(size_field("backbone.epochs", &RunConfig::backbone_epochs));
    f.push_back(double_field("backbone.lr", &RunConfig::backbone_lr));
    f.push_back(double_field("backbone.momentum", &RunConfig::backbone_momentum));
    f.push_back(size_field("backbone.batch", &RunConfig::backbone_batch));
    f.push_back({"occlusion.types", [](const RunConfig& c) { return join_types(c.types); },
                 [](RunConfig& c, const std::string& k, const std::string& v) { c.types = to_types(k, v); }});
    f.push_back(double_field("occlusion.min_coverage", &RunConfig::min_coverage));
    f.push_back(double_field("occlusion.max_coverage", &RunConfig::max_coverage));
    f.push_back(double_field("occlusion.clean_fraction", &RunConfig::clean_fraction));
    f.push_back(double_field("learn.lr", &RunConfig::learn_lr));
    f.push_back(size_field("learn.batch", &RunConfig::learn_batch));
    f.push_back(size_field("learn.max_epochs", &RunConfig::max_epochs));
    f.push_back(size_field("learn.patience", &RunConfig::patience));
    f.push_back(size_field("learn.val_copies", &RunConfig::val_copies));
    f.push_back({"learn.heldout",
                 [](const RunConfig& c) { return c.heldout ? std::string(occluder_name(*c.heldout)) : "none"; },
                 [](RunConfig& c, const std::string& k, const std::string& v) {
                   if (v == "none" || v.empty()) {
                     c.heldout.reset();
                     return;
                   }
                   auto t = to_types(k, v);
                   if (t.size() != 1) bad_value(k, v, "expected one occluder type or none");
                   c.heldout = t[0];
                 }});
    f.push_back(weight_field("loss.lambda_intra", &LossWeights::lambda_intra));
    f.push_back(weight_field("loss.lambda_inter", &LossWeights::lambda_inter));
    f.push_back(weight_field("loss.lambda_cls", &LossWeights::lambda_cls));
    f.push_back(weight_field("loss.margin", &LossWeights::margin));
    f.push_back(double_field("eval.clean_tolerance", &RunConfig::clean_tolerance));
    f.push_back(string_field("eval.ablation", &RunConfig::ablation));
    return f;
  }();
  return all;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw std::invalid_argument("unknown config key '" + key + "'");
}

std::map<std::string, std::string> flatten(const pt::ptree& tree) {
  std::map<std::string, std::string> out;
  for (const auto& [section, body] : tree) {
    if (body.empty()) throw std::invalid_argument("config key '" + section + "' must live in a section");
    for (const auto& [key, value] : body) out[section + "." + key] = value.data();
  }
  return out;
}

RunConfig apply_values(RunConfig config, const std::map<std::string, std::string>& values) {
  for (const auto& [k, v] : values) field(k).set(config, k, v);
  return config;
}

}  // namespace

FinetuneConfig RunConfig::finetune_config() const {
  FinetuneConfig f;
  f.epochs = backbone_epochs;
  f.learning_rate = backbone_lr;
  f.momentum = backbone_momentum;
  f.batch_size = backbone_batch;
  f.seed = seed;
  return f;
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.learning_rate = learn_lr;
  t.batch_size = learn_batch;
  t.max_epochs = max_epochs;
  t.patience = patience;
  t.seed = seed;
  t.val_occluded_copies = val_copies;
  t.weights = weights;
  t.policy.types = types;
  if (heldout) std::erase(t.policy.types, *heldout);
  t.policy.min_coverage = min_coverage;
  t.policy.max_coverage = max_coverage;
  t.policy.clean_fraction = clean_fraction;
  return t;
}

void RunConfig::validate() const {
  if (root.empty()) throw std::invalid_argument("config key 'run.root' must not be empty");
  if (classes < 2) throw std::invalid_argument("config key 'data.classes' must be at least 2");
  if (per_class < 10) throw std::invalid_argument("config key 'data.per_class' must be at least 10");
  if (types.empty()) throw std::invalid_argument("config key 'occlusion.types' must list at least one type");
  if (heldout && std::find(types.begin(), types.end(), *heldout) == types.end())
    throw std::invalid_argument("config key 'learn.heldout' must be one of occlusion.types");
  if (!(clean_tolerance >= 0.0)) throw std::invalid_argument("config key 'eval.clean_tolerance' must be >= 0");
  train_config().validate();
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& f : fields()) k.push_back(f.key);
    return k;
  }();
  return keys;
}

std::string emit_config(const RunConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    const auto dot = f.key.find('.');
    const auto s = f.key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << '\n';
      out << '[' << s << "]\n";
      section = s;
    }
    out << f.key.substr(dot + 1) << " = " << f.get(config) << '\n';
  }
  return out.str();
}

RunConfig parse_config(const std::string& text, bool require_all) {
  pt::ptree tree;
  std::istringstream in(text);
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw std::invalid_argument(std::string("malformed config: ") + e.what());
  }
  const auto values = flatten(tree);
  if (require_all)
    for (const auto& k : config_keys())
      if (!values.contains(k)) throw std::invalid_argument("missing config key '" + k + "'");
  return apply_values(RunConfig{}, values);
}

RunConfig resolve_config(const std::string& path, const std::vector<std::string>& overrides) {
  RunConfig config;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read config " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    config = parse_config(ss.str());
  }
  std::map<std::string, std::string> flags;
  for (const auto& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("override '" + o + "' is not key=value");
    flags[o.substr(0, eq)] = o.substr(eq + 1);
  }
  config = apply_values(config, flags);
  config.validate();
  return config;
}

std::uint64_t config_hash(const RunConfig& config) {
  const auto text = emit_config(config);
  return hash_bytes(text.data(), text.size());
}

}  // namespace learn
