#include "sailpiw/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "sailpiw/common.hpp"

namespace sailpiw {

ParseError::ParseError(std::size_t line, const std::string& what)
    : DataError("line " + std::to_string(line) + ": " + what), line_(line) {}

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::int64_t parse_int(std::string_view field, std::size_t line, const char* name) {
  std::int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty()) {
    throw ParseError(line, std::string("field ") + name + " is not an integer: '" + std::string(field) + "'");
  }
  if (v < 0) throw ParseError(line, std::string("field ") + name + " is negative");
  return v;
}

}  // namespace

Records parse_interactions(std::istream& in) {
  Records out;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string_view view = trim(line);
    if (view.empty()) continue;
    const auto fields = split_commas(view);
    if (!header_seen) {
      if (fields.size() < 3 || fields[0] != "user_id" || fields[1] != "item_id" || fields[2] != "timestamp" ||
          (fields.size() == 4 && fields[3] != "category_id") || fields.size() > 4) {
        throw ParseError(line_no, "expected header user_id,item_id,timestamp[,category_id]");
      }
      header_seen = true;
      continue;
    }
    if (fields.size() < 3 || fields.size() > 4) {
      throw ParseError(line_no, "expected 3 or 4 comma-separated fields, got " + std::to_string(fields.size()));
    }
    InteractionRecord r;
    r.user_id = parse_int(fields[0], line_no, "user_id");
    r.item_id = parse_int(fields[1], line_no, "item_id");
    r.timestamp = parse_int(fields[2], line_no, "timestamp");
    if (fields.size() == 4 && !fields[3].empty()) r.category_id = parse_int(fields[3], line_no, "category_id");
    out.push_back(r);
  }
  if (!header_seen) throw ParseError(line_no + 1, "missing header");
  return out;
}

Records filter_min_degree(Records records, std::size_t min_degree_user, std::size_t min_degree_item) {
  while (true) {
    std::unordered_map<std::int64_t, std::size_t> user_deg, item_deg;
    for (const auto& r : records) {
      ++user_deg[r.user_id];
      ++item_deg[r.item_id];
    }
    Records kept;
    kept.reserve(records.size());
    for (const auto& r : records) {
      if (user_deg[r.user_id] >= min_degree_user && item_deg[r.item_id] >= min_degree_item) kept.push_back(r);
    }
    if (kept.size() == records.size()) return kept;
    records = std::move(kept);
  }
}

Records load_interactions(const std::filesystem::path& path, std::size_t min_degree_user,
                          std::size_t min_degree_item) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open interaction file " + path.string());
  Records records = filter_min_degree(parse_interactions(in), min_degree_user, min_degree_item);
  if (records.empty()) throw EmptyDatasetError("no interactions left after degree filtering: " + path.string());
  std::stable_sort(records.begin(), records.end(),
                   [](const InteractionRecord& a, const InteractionRecord& b) { return a.timestamp < b.timestamp; });
  return records;
}

void write_interactions(std::ostream& out, std::span<const InteractionRecord> records) {
  const bool with_category =
      std::any_of(records.begin(), records.end(), [](const auto& r) { return r.category_id.has_value(); });
  out << "user_id,item_id,timestamp" << (with_category ? ",category_id" : "") << '\n';
  for (const auto& r : records) {
    out << r.user_id << ',' << r.item_id << ',' << r.timestamp;
    if (with_category) {
      out << ',';
      if (r.category_id) out << *r.category_id;
    }
    out << '\n';
  }
}

std::span<const InteractionRecord> TemporalDataset::validation(std::size_t train_block) const {
  const Records& next = blocks_.at(train_block + 1);
  return std::span<const InteractionRecord>(next).first(next.size() / 2);
}

std::span<const InteractionRecord> TemporalDataset::test(std::size_t train_block) const {
  const Records& next = blocks_.at(train_block + 1);
  return std::span<const InteractionRecord>(next).subspan(next.size() / 2);
}

nlohmann::json TemporalDataset::manifest() const {
  nlohmann::json blocks = nlohmann::json::array();
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const Records& rs = blocks_[b];
    nlohmann::json entry{{"block", b}, {"records", rs.size()}};
    if (!rs.empty()) {
      entry["min_timestamp"] = rs.front().timestamp;
      entry["max_timestamp"] = rs.back().timestamp;
    } else {
      entry["min_timestamp"] = nullptr;
      entry["max_timestamp"] = nullptr;
    }
    blocks.push_back(std::move(entry));
  }
  return nlohmann::json{{"blocks", std::move(blocks)}};
}

std::vector<std::size_t> temporal_block_sizes(std::size_t n, double base_frac, std::size_t n_inc) {
  if (n_inc == 0) throw DataError("split_temporal: need at least one incremental block");
  if (n < 2 * n_inc) {
    throw DataError("split_temporal: " + std::to_string(n) + " records is fewer than 2 per incremental block");
  }
  if (!(base_frac > 0.0 && base_frac < 1.0)) throw DataError("split_temporal: base_frac must be in (0,1)");
  constexpr double kSlack = 1e-9;
  std::vector<double> ideal(n_inc + 1);
  ideal[0] = static_cast<double>(n) * base_frac;
  for (std::size_t b = 1; b <= n_inc; ++b) {
    ideal[b] = static_cast<double>(n) * (1.0 - base_frac) / static_cast<double>(n_inc);
  }
  std::vector<std::size_t> sizes(n_inc + 1);
  std::size_t assigned = 0;
  for (std::size_t b = 0; b <= n_inc; ++b) {
    sizes[b] = static_cast<std::size_t>(std::floor(ideal[b] + kSlack));
    assigned += sizes[b];
  }
  while (assigned < n) {
    std::size_t b = 0;
    while (b <= n_inc && ideal[b] - static_cast<double>(sizes[b]) <= kSlack) ++b;
    if (b > n_inc) b = 0;
    ++sizes[b];
    ++assigned;
  }
  while (assigned > n) {
    // Only reachable through the floor slack; take back from the last block.
    std::size_t b = n_inc;
    while (sizes[b] == 0) --b;
    --sizes[b];
    --assigned;
  }
  return sizes;
}

TemporalDataset split_temporal(Records records, double base_frac, std::size_t n_inc) {
  if (!std::is_sorted(records.begin(), records.end(),
                      [](const auto& a, const auto& b) { return a.timestamp < b.timestamp; })) {
    throw DataError("split_temporal: records must be sorted by timestamp");
  }
  const auto sizes = temporal_block_sizes(records.size(), base_frac, n_inc);
  std::vector<Records> blocks;
  blocks.reserve(sizes.size());
  std::size_t offset = 0;
  for (std::size_t size : sizes) {
    blocks.emplace_back(records.begin() + static_cast<std::ptrdiff_t>(offset),
                        records.begin() + static_cast<std::ptrdiff_t>(offset + size));
    offset += size;
  }
  return TemporalDataset(std::move(blocks));
}

std::optional<std::size_t> IdMap::find(std::int64_t raw) const {
  const auto it = index_.find(raw);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::size_t IdMap::insert(std::int64_t raw) {
  const auto [it, inserted] = index_.try_emplace(raw, raw_.size());
  if (inserted) raw_.push_back(raw);
  return it->second;
}

bool GraphBundle::has_edge(std::size_t user, std::size_t item) const {
  if (user >= ui.size()) return false;
  const auto& nb = ui[user];
  return std::binary_search(nb.begin(), nb.end(), item);
}

std::vector<std::vector<SimilarNeighbor>> jaccard_top_k(const Adjacency& rows, const Adjacency& cols,
                                                        std::size_t k) {
  std::vector<std::vector<SimilarNeighbor>> out(rows.size());
  if (k == 0) return out;
  std::vector<std::size_t> overlap(rows.size(), 0);
  std::vector<std::size_t> touched;
  for (std::size_t a = 0; a < rows.size(); ++a) {
    if (rows[a].empty()) continue;
    touched.clear();
    for (std::size_t c : rows[a]) {
      for (std::size_t b : cols[c]) {
        if (b == a) continue;
        if (overlap[b]++ == 0) touched.push_back(b);
      }
    }
    std::vector<SimilarNeighbor> cand;
    cand.reserve(touched.size());
    for (std::size_t b : touched) {
      const double inter = static_cast<double>(overlap[b]);
      const double uni = static_cast<double>(rows[a].size() + rows[b].size()) - inter;
      cand.push_back({b, inter / uni});
      overlap[b] = 0;
    }
    std::sort(cand.begin(), cand.end(), [](const SimilarNeighbor& x, const SimilarNeighbor& y) {
      return x.similarity != y.similarity ? x.similarity > y.similarity : x.node < y.node;
    });
    if (cand.size() > k) cand.resize(k);
    out[a] = std::move(cand);
  }
  return out;
}

GraphBundle build_graphs(std::span<const InteractionRecord> block, const GraphBundle* carry_forward,
                         std::size_t k_sim) {
  GraphBundle g;
  if (carry_forward != nullptr) {
    g.users = carry_forward->users;
    g.items = carry_forward->items;
  }
  std::vector<Edge> edges;
  edges.reserve(block.size());
  for (const auto& r : block) edges.push_back({g.users.insert(r.user_id), g.items.insert(r.item_id)});
  std::sort(edges.begin(), edges.end(),
            [](const Edge& a, const Edge& b) { return a.user != b.user ? a.user < b.user : a.item < b.item; });
  edges.erase(std::unique(edges.begin(), edges.end(),
                          [](const Edge& a, const Edge& b) { return a.user == b.user && a.item == b.item; }),
              edges.end());
  g.ui.assign(g.n_users(), {});
  g.iu.assign(g.n_items(), {});
  for (const Edge& e : edges) {
    g.ui[e.user].push_back(e.item);
    g.iu[e.item].push_back(e.user);
  }
  g.edges = std::move(edges);
  g.uu = jaccard_top_k(g.ui, g.iu, k_sim);
  g.ii = jaccard_top_k(g.iu, g.ui, k_sim);
  return g;
}

MappedInteractions map_interactions(const GraphBundle& graph, std::span<const InteractionRecord> records) {
  MappedInteractions out;
  out.by_user.assign(graph.n_users(), {});
  for (const auto& r : records) {
    const auto u = graph.users.find(r.user_id);
    if (!u) {
      ++out.unknown_users;
      continue;
    }
    const auto i = graph.items.find(r.item_id);
    if (!i) {
      ++out.unknown_items;
      continue;
    }
    out.by_user[*u].push_back(*i);
  }
  for (auto& items : out.by_user) {
    std::sort(items.begin(), items.end());
    items.erase(std::unique(items.begin(), items.end()), items.end());
  }
  return out;
}

std::vector<BprTriple> sample_bpr_batch(const GraphBundle& graph, std::size_t batch_size, std::uint64_t seed) {
  constexpr int kMaxRejections = 64;
  std::vector<BprTriple> out;
  if (graph.edges.empty() || graph.n_items() == 0) return out;
  out.reserve(batch_size);
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick_edge(0, graph.edges.size() - 1);
  std::uniform_int_distribution<std::size_t> pick_item(0, graph.n_items() - 1);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const Edge e = graph.edges[pick_edge(rng)];
    if (graph.ui[e.user].size() >= graph.n_items()) {
      log_warn("sample_bpr_batch: user " + std::to_string(e.user) + " interacts with every item; skipped");
      continue;
    }
    bool found = false;
    std::size_t neg = 0;
    for (int attempt = 0; attempt < kMaxRejections && !found; ++attempt) {
      neg = pick_item(rng);
      found = !graph.has_edge(e.user, neg);
    }
    if (!found) {
      log_warn("sample_bpr_batch: no negative found for user " + std::to_string(e.user) + "; skipped");
      continue;
    }
    out.push_back({e.user, e.item, neg});
  }
  return out;
}

std::vector<std::size_t> sample_candidates(std::span<const std::size_t> positives, std::size_t universe,
                                           std::size_t n_neg, std::uint64_t seed,
                                           std::optional<std::size_t> exclude) {
  std::vector<std::size_t> out;
  std::unordered_set<std::size_t> taken;
  for (std::size_t p : positives) {
    if (taken.insert(p).second) out.push_back(p);
  }
  if (exclude) taken.insert(*exclude);
  std::size_t blocked = 0;
  for (std::size_t t : taken) blocked += t < universe ? 1 : 0;
  const std::size_t available = universe - blocked;
  if (n_neg == 0 || available == 0) return out;
  if (available <= n_neg) {
    for (std::size_t c = 0; c < universe; ++c)
      if (!taken.count(c)) out.push_back(c);
    return out;
  }
  Rng rng(seed);
  if (available < 4 * n_neg) {
    std::vector<std::size_t> pool;
    pool.reserve(available);
    for (std::size_t c = 0; c < universe; ++c)
      if (!taken.count(c)) pool.push_back(c);
    for (std::size_t k = 0; k < n_neg; ++k) {
      std::uniform_int_distribution<std::size_t> pick(k, pool.size() - 1);
      std::swap(pool[k], pool[pick(rng)]);
      out.push_back(pool[k]);
    }
    return out;
  }
  std::uniform_int_distribution<std::size_t> pick(0, universe - 1);
  std::size_t drawn = 0;
  while (drawn < n_neg) {
    const std::size_t c = pick(rng);
    if (taken.insert(c).second) {
      out.push_back(c);
      ++drawn;
    }
  }
  return out;
}

std::vector<std::size_t> sample_contrastive_candidates(const GraphBundle& graph, std::size_t user,
                                                       std::size_t n_neg, std::uint64_t seed) {
  if (user >= graph.n_users()) throw DataError("sample_contrastive_candidates: unknown user index");
  return sample_candidates(graph.ui[user], graph.n_items(), n_neg, seed);
}

}  // namespace sailpiw
