#include "sailpiw/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <vector>

#include "json.hpp"

namespace sailpiw {

namespace {

constexpr char kMagic[8] = {'S', 'A', 'I', 'L', 'P', 'I', 'W', '1'};
constexpr int kFormatVersion = 1;

std::uint64_t to_le(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int k = 0; k < 8; ++k) r |= ((v >> (8 * k)) & 0xffULL) << (8 * (7 - k));
    return r;
  }
  return v;
}

struct Array {
  std::string name;
  const Matrix* value = nullptr;
};

nlohmann::json dims_json(const ModelDims& d) {
  return {{"d", d.d}, {"R", d.layers}, {"M", d.clusters}, {"l", d.hidden}, {"state_dim", d.state_dim}};
}

ModelDims dims_from(const nlohmann::json& j) {
  ModelDims d;
  d.d = j.at("d");
  d.layers = j.at("R");
  d.clusters = j.at("M");
  d.hidden = j.at("l");
  d.state_dim = j.at("state_dim");
  return d;
}

void add_state(std::vector<Array>& arrays, const std::string& prefix, const ModelState& s) {
  s.visit([&](const std::string& name, const Matrix& m) { arrays.push_back({prefix + name, &m}); });
}

void write_container(const std::filesystem::path& path, nlohmann::json manifest, const std::vector<Array>& arrays) {
  manifest["format_version"] = kFormatVersion;
  manifest["arrays"] = nlohmann::json::array();
  for (const auto& a : arrays)
    manifest["arrays"].push_back({{"name", a.name}, {"rows", a.value->rows()}, {"cols", a.value->cols()}});
  const std::string text = manifest.dump();
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    const std::uint64_t len = to_le(text.size());
    out.write(reinterpret_cast<const char*>(&len), sizeof len);
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& a : arrays)
      for (double v : a.value->flat()) {
        const std::uint64_t bits = to_le(std::bit_cast<std::uint64_t>(v));
        out.write(reinterpret_cast<const char*>(&bits), sizeof bits);
      }
    if (!out) throw CheckpointError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

struct Container {
  nlohmann::json manifest;
  std::map<std::string, Matrix> arrays;

  Matrix take(const std::string& name) {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw CheckpointError("checkpoint lacks array " + name);
    Matrix m = std::move(it->second);
    arrays.erase(it);
    return m;
  }
};

Container read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError("bad magic in " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  len = to_le(len);
  if (!in || len > (1ULL << 32)) throw CheckpointError("bad manifest length in " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw CheckpointError("truncated manifest in " + path.string());
  Container c;
  try {
    c.manifest = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("manifest is not JSON: " + std::string(e.what()));
  }
  if (c.manifest.value("format_version", 0) != kFormatVersion)
    throw CheckpointError("unsupported checkpoint version in " + path.string());
  for (const auto& a : c.manifest.at("arrays")) {
    const std::size_t rows = a.at("rows"), cols = a.at("cols");
    std::vector<double> data(rows * cols);
    for (double& v : data) {
      std::uint64_t bits = 0;
      in.read(reinterpret_cast<char*>(&bits), sizeof bits);
      v = std::bit_cast<double>(to_le(bits));
    }
    if (!in) throw CheckpointError("truncated array " + a.at("name").get<std::string>());
    c.arrays.emplace(a.at("name").get<std::string>(), Matrix(rows, cols, std::move(data)));
  }
  return c;
}

ModelState take_state(Container& c, const std::string& prefix, const nlohmann::json& dims_j) {
  const ModelDims dims = dims_from(dims_j);
  ModelState s;
  s.dims = dims;
  s.layer_weights.resize(dims.layers);
  s.cluster_transforms.resize(c.manifest.at("transforms").at(prefix).get<std::size_t>());
  s.visit([&](const std::string& name, Matrix& m) { m = c.take(prefix + name); });
  return s;
}

void add_transform_count(nlohmann::json& manifest, const std::string& prefix, const ModelState& s) {
  manifest["transforms"][prefix] = s.cluster_transforms.size();
}

}  // namespace

void save_model(const std::filesystem::path& path, const ModelState& state, std::size_t block, std::uint64_t seed) {
  nlohmann::json m{{"kind", "model"},
                   {"dims", dims_json(state.dims)},
                   {"n_users", state.n_users()},
                   {"n_items", state.n_items()},
                   {"block", block},
                   {"seed", seed}};
  add_transform_count(m, "", state);
  std::vector<Array> arrays;
  add_state(arrays, "", state);
  write_container(path, std::move(m), arrays);
}

ModelState load_model(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.manifest.value("kind", "") != "model") throw CheckpointError(path.string() + " is not a model checkpoint");
  return take_state(c, "", c.manifest.at("dims"));
}

void save_progress(const std::filesystem::path& path, const RunProgress& p) {
  nlohmann::json m{{"kind", "progress"},
                   {"dims", dims_json(p.state.dims)},
                   {"best_dims", dims_json(p.best_state.dims)},
                   {"n_users", p.state.n_users()},
                   {"n_items", p.state.n_items()},
                   {"block", p.block},
                   {"seed", p.seed},
                   {"epochs_done", p.epochs_done},
                   {"bad", p.bad},
                   {"best_epoch", p.best_epoch},
                   {"unvalidated", p.unvalidated},
                   {"adam_step", p.adam.step},
                   {"has_prev", p.prev_state.has_value()},
                   {"ledger", p.ledger.to_json(true)}};
  std::vector<Array> arrays;
  add_state(arrays, "state/", p.state);
  add_state(arrays, "best/", p.best_state);
  add_transform_count(m, "state/", p.state);
  add_transform_count(m, "best/", p.best_state);
  if (p.prev_state) {
    m["prev_dims"] = dims_json(p.prev_state->dims);
    add_state(arrays, "prev/", *p.prev_state);
    add_transform_count(m, "prev/", *p.prev_state);
  }
  for (std::size_t k = 0; k < p.adam.m.size(); ++k) {
    arrays.push_back({"adam_m/" + std::to_string(k), &p.adam.m[k]});
    arrays.push_back({"adam_v/" + std::to_string(k), &p.adam.v[k]});
  }
  m["adam_blocks"] = p.adam.m.size();
  const Matrix best_val = Matrix::scalar(p.best_val);
  arrays.push_back({"best_val", &best_val});
  write_container(path, std::move(m), arrays);
}

RunProgress load_progress(const std::filesystem::path& path) {
  Container c = read_container(path);
  if (c.manifest.value("kind", "") != "progress")
    throw CheckpointError(path.string() + " is not a progress checkpoint");
  const auto& m = c.manifest;
  RunProgress p;
  p.seed = m.at("seed");
  p.block = m.at("block");
  p.epochs_done = m.at("epochs_done");
  p.bad = m.at("bad");
  p.best_epoch = m.at("best_epoch");
  p.unvalidated = m.value("unvalidated", false);
  p.state = take_state(c, "state/", m.at("dims"));
  p.best_state = take_state(c, "best/", m.at("best_dims"));
  if (m.at("has_prev").get<bool>()) p.prev_state = take_state(c, "prev/", m.at("prev_dims"));
  const std::size_t blocks = m.at("adam_blocks");
  for (std::size_t k = 0; k < blocks; ++k) {
    p.adam.m.push_back(c.take("adam_m/" + std::to_string(k)));
    p.adam.v.push_back(c.take("adam_v/" + std::to_string(k)));
  }
  p.adam.step = m.at("adam_step");
  p.best_val = c.take("best_val")[0];
  p.ledger = RunLedger::from_json(m.at("ledger"));
  return p;
}

}  // namespace sailpiw
