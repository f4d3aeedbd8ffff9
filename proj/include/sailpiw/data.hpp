#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"

namespace sailpiw {

struct InteractionRecord {
  std::int64_t user_id = 0;
  std::int64_t item_id = 0;
  std::int64_t timestamp = 0;
  std::optional<std::int64_t> category_id;

  friend bool operator==(const InteractionRecord&, const InteractionRecord&) = default;
};

using Records = std::vector<InteractionRecord>;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DataError {
 public:
  ParseError(std::size_t line, const std::string& what);
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class EmptyDatasetError : public DataError {
 public:
  using DataError::DataError;
};

// CSV with header `user_id,item_id,timestamp[,category_id]`.
Records parse_interactions(std::istream& in);

// Drops users and items below the degree thresholds until nothing changes.
Records filter_min_degree(Records records, std::size_t min_degree_user, std::size_t min_degree_item);

// Parse, filter to a fixpoint, then stable-sort by timestamp.
Records load_interactions(const std::filesystem::path& path, std::size_t min_degree_user,
                          std::size_t min_degree_item);

void write_interactions(std::ostream& out, std::span<const InteractionRecord> records);

// Block 0 is the base block, blocks 1..n_inc the incremental ones. Training on
// block t validates on the first chronological half of block t+1 and tests on
// the second half.
class TemporalDataset {
 public:
  TemporalDataset() = default;
  explicit TemporalDataset(std::vector<Records> blocks) : blocks_(std::move(blocks)) {}

  std::size_t block_count() const { return blocks_.size(); }
  std::size_t incremental_count() const { return blocks_.empty() ? 0 : blocks_.size() - 1; }
  const Records& block(std::size_t b) const { return blocks_.at(b); }
  const Records& base() const { return blocks_.at(0); }

  std::span<const InteractionRecord> validation(std::size_t train_block) const;
  std::span<const InteractionRecord> test(std::size_t train_block) const;

  // block index, record count, min/max timestamp per block.
  nlohmann::json manifest() const;

 private:
  std::vector<Records> blocks_;
};

// Sizes follow floor(N * fraction) per block; the remainder goes one record at
// a time to the earliest block whose ideal (fractional) size still exceeds
// its assigned size. Throws DataError when N < 2 * n_inc.
TemporalDataset split_temporal(Records records, double base_frac = 0.6, std::size_t n_inc = 4);

// Block sizes split_temporal would produce for `n` records.
std::vector<std::size_t> temporal_block_sizes(std::size_t n, double base_frac, std::size_t n_inc);

// Dense, append-only id space: an index never changes meaning once assigned.
class IdMap {
 public:
  std::optional<std::size_t> find(std::int64_t raw) const;
  std::size_t insert(std::int64_t raw);
  std::int64_t raw(std::size_t index) const { return raw_.at(index); }
  std::size_t size() const { return raw_.size(); }

 private:
  std::vector<std::int64_t> raw_;
  std::unordered_map<std::int64_t, std::size_t> index_;
};

using Adjacency = std::vector<std::vector<std::size_t>>;

struct SimilarNeighbor {
  std::size_t node = 0;
  double similarity = 0.0;
};

struct Edge {
  std::size_t user = 0;
  std::size_t item = 0;
};

// One block's user-item graph plus Jaccard similarity graphs. Immutable once
// built; neighbor lists are sorted ascending.
struct GraphBundle {
  IdMap users;
  IdMap items;
  Adjacency ui;  // user -> items
  Adjacency iu;  // item -> users
  std::vector<std::vector<SimilarNeighbor>> uu;
  std::vector<std::vector<SimilarNeighbor>> ii;
  std::vector<Edge> edges;  // (user, item) sorted, de-duplicated

  std::size_t n_users() const { return users.size(); }
  std::size_t n_items() const { return items.size(); }
  std::size_t edge_count() const { return edges.size(); }
  bool has_edge(std::size_t user, std::size_t item) const;
};

// Node ids are cumulative: ids from `carry_forward` keep their index and new
// ids are appended. Repeated (user, item) pairs collapse to one edge.
GraphBundle build_graphs(std::span<const InteractionRecord> block, const GraphBundle* carry_forward,
                         std::size_t k_sim = 10);

// Top-k Jaccard neighbors of each row over `rows` (neighbor sets sorted).
std::vector<std::vector<SimilarNeighbor>> jaccard_top_k(const Adjacency& rows, const Adjacency& cols,
                                                        std::size_t k);

// Maps records onto dense ids of `graph` as per-user item lists. Records whose
// user or item is unknown to the graph are dropped and counted.
struct MappedInteractions {
  Adjacency by_user;  // sized graph.n_users(); sorted, unique
  std::size_t unknown_users = 0;
  std::size_t unknown_items = 0;
};
MappedInteractions map_interactions(const GraphBundle& graph, std::span<const InteractionRecord> records);

struct BprTriple {
  std::size_t user = 0;
  std::size_t pos = 0;
  std::size_t neg = 0;
};

// (user, pos) uniform over edges; neg uniform over items not adjacent to the
// user. A user adjacent to every item is skipped after a bounded number of
// rejections and a warning.
std::vector<BprTriple> sample_bpr_batch(const GraphBundle& graph, std::size_t batch_size, std::uint64_t seed);

// positives followed by up to n_neg distinct uniform draws from
// [0, universe) \ (positives + exclude). All of them when fewer remain.
std::vector<std::size_t> sample_candidates(std::span<const std::size_t> positives, std::size_t universe,
                                           std::size_t n_neg, std::uint64_t seed,
                                           std::optional<std::size_t> exclude = std::nullopt);

// Candidate set D(user) on the user-item graph.
std::vector<std::size_t> sample_contrastive_candidates(const GraphBundle& graph, std::size_t user,
                                                       std::size_t n_neg, std::uint64_t seed);

}  // namespace sailpiw
