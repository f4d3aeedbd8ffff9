#include "sailpiw/config.hpp"

#include <cerrno>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

namespace sailpiw {

namespace {

constexpr const char* kReference = "reference setting";
constexpr const char* kEngineering = "engineering default";

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::string format_double(double v) {
  char buf[40];
  for (int prec = 6; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

double parse_double(const std::string& key, const std::string& v) {
  errno = 0;
  char* end = nullptr;
  const double d = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE || !std::isfinite(d))
    throw ConfigError(key, "key " + key + ": expected a number, got '" + v + "'");
  return d;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || r.ec != std::errc() || r.ptr != v.data() + v.size())
    throw ConfigError(key, "key " + key + ": expected a nonnegative integer, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key, "key " + key + ": expected true or false, got '" + v + "'");
}

template <class T>
std::vector<T> parse_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(static_cast<T>(parse_uint(key, trim(item))));
  if (out.empty()) throw ConfigError(key, "key " + key + ": expected a comma-separated list");
  return out;
}

template <class T>
std::string format_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? "," : "") + std::to_string(v[k]);
  return s;
}

std::string unquote(const std::string& v) {
  if (v.size() >= 2 && v.front() == '"' && v.back() == '"') return v.substr(1, v.size() - 2);
  return v;
}

struct Field {
  std::string section, name, provenance, help;
  std::function<void(ExperimentConfig&, const std::string& key, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
  std::string full() const { return section + "." + name; }
};

template <class Acc>
Field size_field(std::string sec, std::string name, const char* prov, std::string help, Acc acc) {
  return {std::move(sec), std::move(name), prov, std::move(help),
          [acc](ExperimentConfig& c, const std::string& k, const std::string& v) {
            acc(c) = static_cast<std::remove_reference_t<decltype(acc(c))>>(parse_uint(k, v));
          },
          [acc](const ExperimentConfig& c) { return std::to_string(acc(c)); }};
}

template <class Acc>
Field double_field(std::string sec, std::string name, const char* prov, std::string help, Acc acc) {
  return {std::move(sec), std::move(name), prov, std::move(help),
          [acc](ExperimentConfig& c, const std::string& k, const std::string& v) { acc(c) = parse_double(k, v); },
          [acc](const ExperimentConfig& c) { return format_double(acc(c)); }};
}

template <class Acc>
Field string_field(std::string sec, std::string name, const char* prov, std::string help, Acc acc) {
  return {std::move(sec), std::move(name), prov, std::move(help),
          [acc](ExperimentConfig& c, const std::string&, const std::string& v) { acc(c) = unquote(v); },
          [acc](const ExperimentConfig& c) { return acc(c); }};
}

#define ACC(expr) [](auto& c) -> auto& { return expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"data", "source", kEngineering, "file or synth",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   const std::string s = unquote(v);
                   if (s != "file" && s != "synth") throw ConfigError(k, "key " + k + ": expected file or synth");
                   c.source = s;
                 },
                 [](const ExperimentConfig& c) { return c.source; }});
    f.push_back(string_field("data", "path", kEngineering, "interaction log (user,item,timestamp[,category])",
                             ACC(c.dataset_path)));
    f.push_back(size_field("data", "min_degree_user", kReference, "iterative degree filter for users",
                           ACC(c.min_degree_user)));
    f.push_back(size_field("data", "min_degree_item", kReference, "iterative degree filter for items",
                           ACC(c.min_degree_item)));
    f.push_back(double_field("data", "base_frac", kReference, "share of records in the base block", ACC(c.base_frac)));
    f.push_back(size_field("data", "n_inc", kReference, "number of incremental blocks", ACC(c.n_inc)));

    f.push_back(double_field("train", "lr", kReference, "Adam learning rate", ACC(c.train.lr)));
    f.push_back(size_field("train", "batch_size", kReference, "BPR triples per step", ACC(c.train.batch_size)));
    f.push_back(double_field("train", "dropout", kReference, "inverted dropout on layer inputs", ACC(c.train.dropout)));
    f.push_back(size_field("train", "min_epochs_base", kReference, "", ACC(c.train.min_epochs_base)));
    f.push_back(size_field("train", "max_epochs_base", kEngineering, "safety cap", ACC(c.train.max_epochs_base)));
    f.push_back(size_field("train", "min_epochs_inc", kReference, "", ACC(c.train.min_epochs_inc)));
    f.push_back(size_field("train", "max_epochs_inc", kReference, "", ACC(c.train.max_epochs_inc)));
    f.push_back(size_field("train", "patience", kReference, "early-stopping patience", ACC(c.train.patience)));
    f.push_back(size_field("train", "d", kReference, "embedding width", ACC(c.train.d)));
    f.push_back(size_field("train", "layers", kReference, "propagation layers R", ACC(c.train.layers)));
    f.push_back(size_field("train", "hidden", kEngineering, "weight-generator hidden size l", ACC(c.train.hidden)));
    f.push_back(double_field("train", "l2", kEngineering, "L2 coefficient on batch embeddings", ACC(c.train.l2)));
    f.push_back(double_field("train", "embedding_std", kEngineering, "std of embedding init",
                             ACC(c.train.embedding_std)));
    f.push_back(size_field("train", "k_sim", kEngineering, "Jaccard neighbors per node", ACC(c.train.k_sim)));
    f.push_back(size_field("train", "eval_k", kReference, "K of Recall@K", ACC(c.train.eval_k)));
    f.push_back(size_field("train", "n_inc_train", kReference, "incremental blocks trained (Inc 1..n)",
                           ACC(c.train.n_inc_train)));

    f.push_back({"distill", "strategy", kEngineering, "graphsail | sgct | lwckd | none",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   try {
                     c.train.distill.strategy = parse_strategy(unquote(v));
                   } catch (const std::exception& e) {
                     throw ConfigError(k, "key " + k + ": " + e.what());
                   }
                 },
                 [](const ExperimentConfig& c) { return to_string(c.train.distill.strategy); }});
    f.push_back({"distill", "ablation", kEngineering, "full | no_wg | no_cluster | no_trans | hard | no_piw",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   try {
                     c.train.distill.ablation = parse_ablation(unquote(v));
                   } catch (const std::exception& e) {
                     throw ConfigError(k, "key " + k + ": " + e.what());
                   }
                 },
                 [](const ExperimentConfig& c) { return to_string(c.train.distill.ablation); }});
    f.push_back(double_field("distill", "lambda1", kEngineering, "clustering KL coefficient",
                             ACC(c.train.distill.lambda1)));
    f.push_back(double_field("distill", "lambda2", kEngineering, "distillation coefficient",
                             ACC(c.train.distill.lambda2)));
    f.push_back(double_field("distill", "tau", kEngineering, "contrastive temperature", ACC(c.train.distill.tau)));
    f.push_back(size_field("distill", "clusters", kEngineering, "cluster anchors M", ACC(c.train.distill.clusters)));
    f.push_back(size_field("distill", "n_neg", kEngineering, "contrastive negatives per node",
                           ACC(c.train.distill.n_neg)));
    f.push_back(size_field("distill", "anchors", kEngineering, "global anchors of the GraphSAIL term",
                           ACC(c.train.distill.anchors)));
    f.push_back(size_field("distill", "neighbor_len", kEngineering, "state length of the neighbor-state ablation",
                           ACC(c.train.distill.neighbor_len)));
    f.push_back(double_field("distill", "nu", kEngineering, "Student-t degrees of freedom", ACC(c.train.distill.nu)));

    f.push_back({"run", "seeds", kReference, "comma-separated seed list (three trials)",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.seeds = parse_list<std::uint64_t>(k, v);
                 },
                 [](const ExperimentConfig& c) { return format_list(c.seeds); }});
    f.push_back(string_field("run", "out", kEngineering, "output directory", ACC(c.out_dir)));
    f.push_back({"run", "ksweep", kReference, "cluster counts for the ksweep command",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.ksweep = parse_list<std::size_t>(k, v);
                 },
                 [](const ExperimentConfig& c) { return format_list(c.ksweep); }});

    f.push_back(size_field("synth", "users", kEngineering, "", ACC(c.synth.users)));
    f.push_back(size_field("synth", "items", kEngineering, "", ACC(c.synth.items)));
    f.push_back(size_field("synth", "clusters", kEngineering, "planted item clusters", ACC(c.synth.clusters)));
    f.push_back(size_field("synth", "base_per_user", kEngineering, "interactions per user in the base block",
                           ACC(c.synth.base_per_user)));
    f.push_back(size_field("synth", "inc_per_user", kEngineering, "interactions per user per incremental block",
                           ACC(c.synth.inc_per_user)));
    f.push_back(size_field("synth", "inc_blocks", kEngineering, "", ACC(c.synth.inc_blocks)));
    f.push_back(double_field("synth", "noise", kEngineering, "share of off-cluster interactions", ACC(c.synth.noise)));
    f.push_back(double_field("synth", "dynamic_fraction", kEngineering, "share of users that switch cluster",
                             ACC(c.synth.dynamic_fraction)));
    f.push_back({"synth", "duplicate_base", kEngineering, "block 1 repeats the base block (no drift)",
                 [](ExperimentConfig& c, const std::string& k, const std::string& v) {
                   c.synth.duplicate_base = parse_bool(k, v);
                 },
                 [](const ExperimentConfig& c) { return std::string(c.synth.duplicate_base ? "true" : "false"); }});
    return f;
  }();
  return table;
}

#undef ACC

const Field& find_field(const std::string& key, const std::string& section) {
  const auto& f = fields();
  std::string sec = section, name = key;
  if (const auto dot = key.find('.'); dot != std::string::npos) {
    sec = key.substr(0, dot);
    name = key.substr(dot + 1);
  }
  if (!sec.empty()) {
    for (const auto& x : f)
      if (x.section == sec && x.name == name) return x;
    throw ConfigError(key, "unknown config key '" + (section.empty() ? key : section + "." + key) + "'");
  }
  const Field* hit = nullptr;
  for (const auto& x : f)
    if (x.name == name) {
      if (hit) throw ConfigError(key, "ambiguous config key '" + key + "'; write " + x.section + "." + key);
      hit = &x;
    }
  if (!hit) throw ConfigError(key, "unknown config key '" + key + "'");
  return *hit;
}

}  // namespace

ExperimentConfig synth_preset() {
  ExperimentConfig c;
  c.source = "synth";
  c.train.d = 32;
  c.train.batch_size = 256;
  c.train.dropout = 0.1;
  c.train.n_inc_train = 1;
  c.train.distill.clusters = 4;
  return c;
}

std::vector<ConfigKey> config_keys(const ExperimentConfig& base) {
  std::vector<ConfigKey> out;
  for (const auto& f : fields()) out.push_back({f.section, f.name, f.get(base), f.provenance, f.help});
  return out;
}

void set_config_value(ExperimentConfig& config, const std::string& key, const std::string& value) {
  const Field& f = find_field(key, "");
  f.set(config, f.full(), trim(value));
}

std::string get_config_value(const ExperimentConfig& config, const std::string& key) {
  return find_field(key, "").get(config);
}

void apply_config_text(ExperimentConfig& config, const std::string& text) {
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string t = trim(line);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') throw ConfigError("", "line " + std::to_string(lineno) + ": malformed section header");
      section = trim(t.substr(1, t.size() - 2));
      bool known = false;
      for (const auto& f : fields()) known = known || f.section == section;
      if (!known) throw ConfigError(section, "unknown config section '" + section + "'");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError("", "line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const Field& f = find_field(key, key.find('.') == std::string::npos ? section : "");
    f.set(config, f.full(), trim(t.substr(eq + 1)));
  }
}

ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base) {
  ExperimentConfig c = base;
  apply_config_text(c, text);
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), base);
}

std::string serialize_config(const ExperimentConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : fields()) {
    if (f.section != section) {
      out << (section.empty() ? "" : "\n") << '[' << f.section << "]\n";
      section = f.section;
    }
    out << f.name << " = " << f.get(config) << '\n';
  }
  return out.str();
}

void validate_config(const ExperimentConfig& config) {
  if (config.source == "file" && config.dataset_path.empty())
    throw ConfigError("data.path", "missing dataset path (set data.path or use data.source = synth)");
  if (!(config.base_frac > 0.0 && config.base_frac < 1.0))
    throw ConfigError("data.base_frac", "data.base_frac must lie in (0, 1)");
  if (config.seeds.empty()) throw ConfigError("run.seeds", "run.seeds is empty");
  try {
    config.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("train", e.what());
  }
  if (config.source == "synth") {
    try {
      config.synth.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("synth", e.what());
    }
    if (config.train.n_inc_train + 1 > config.synth.inc_blocks)
      throw ConfigError("train.n_inc_train", "train.n_inc_train needs one more synthetic block than it trains");
  } else if (config.train.n_inc_train + 1 > config.n_inc) {
    throw ConfigError("train.n_inc_train", "train.n_inc_train must be below data.n_inc");
  }
}

std::string config_help(const ExperimentConfig& base) {
  std::ostringstream out;
  out << "Config keys (file grammar: `key = value`, `[section]` headers, `#` comments):\n";
  std::string section;
  for (const auto& k : config_keys(base)) {
    if (k.section != section) {
      out << "  [" << k.section << "]\n";
      section = k.section;
    }
    out << "    " << k.name << " = " << (k.default_value.empty() ? "\"\"" : k.default_value) << "  (" << k.provenance
        << (k.help.empty() ? "" : "; " + k.help) << ")\n";
  }
  return out.str();
}

}  // namespace sailpiw
