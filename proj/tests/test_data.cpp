#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "doctest.h"
#include "sailpiw/data.hpp"

using namespace sailpiw;

namespace {

Records make_records(std::size_t n) {
  Records r;
  for (std::size_t k = 0; k < n; ++k)
    r.push_back({static_cast<std::int64_t>(k % 13), static_cast<std::int64_t>(k % 97), static_cast<std::int64_t>(k)});
  return r;
}

std::filesystem::path write_temp(const std::string& name, const std::string& text) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream(path) << text;
  return path;
}

// Counting oracle for the remainder rule: the leftover records go one at a
// time to the block whose ideal size exceeds its floor by the most, ties to
// the earlier block, which for these fractions is the earliest deficit.
std::vector<std::size_t> oracle_sizes(std::size_t n) {
  std::vector<double> ideal{0.6 * n, 0.1 * n, 0.1 * n, 0.1 * n, 0.1 * n};
  std::vector<std::size_t> sizes;
  for (double v : ideal) sizes.push_back(static_cast<std::size_t>(std::floor(v + 1e-9)));
  std::size_t left = n - std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  for (std::size_t b = 0; left > 0; b = (b + 1) % sizes.size()) {
    if (ideal[b] > static_cast<double>(sizes[b]) + 1e-9) {
      ++sizes[b];
      --left;
    }
  }
  return sizes;
}

}  // namespace

TEST_CASE("parse_interactions reads optional category and reports bad lines") {
  std::istringstream ok("user_id,item_id,timestamp,category_id\n1,2,30,4\n5,6,7,\n");
  const Records r = parse_interactions(ok);
  REQUIRE(r.size() == 2);
  CHECK(r[0] == InteractionRecord{1, 2, 30, 4});
  CHECK_FALSE(r[1].category_id.has_value());

  std::istringstream bad("user_id,item_id,timestamp\n1,2,3\n1,x,3\n");
  try {
    parse_interactions(bad);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 3);
  }
  std::istringstream negative("user_id,item_id,timestamp\n-1,2,3\n");
  CHECK_THROWS_AS(parse_interactions(negative), ParseError);
}

TEST_CASE("load_interactions filters and orders") {
  SUBCASE("all users below threshold") {
    const auto p = write_temp("sailpiw_one_each.csv", "user_id,item_id,timestamp\n1,1,5\n2,1,6\n3,2,7\n");
    CHECK_THROWS_AS(load_interactions(p, 2, 0), EmptyDatasetError);
    CHECK(filter_min_degree(parse_interactions(*std::make_unique<std::ifstream>(p)), 2, 0).empty());
  }
  SUBCASE("unfiltered rows come back in timestamp order, ties by input order") {
    std::string text = "user_id,item_id,timestamp\n";
    const int ts[] = {9, 3, 3, 8, 1, 7, 3, 2, 6, 5};
    for (int k = 0; k < 10; ++k) text += std::to_string(k) + "," + std::to_string(k) + "," + std::to_string(ts[k]) + "\n";
    const Records r = load_interactions(write_temp("sailpiw_ten.csv", text), 0, 0);
    REQUIRE(r.size() == 10);
    CHECK(std::is_sorted(r.begin(), r.end(), [](auto& a, auto& b) { return a.timestamp < b.timestamp; }));
    // Three rows at t=3 keep their input order 1, 2, 6.
    std::vector<std::int64_t> at3;
    for (const auto& x : r)
      if (x.timestamp == 3) at3.push_back(x.user_id);
    CHECK(at3 == std::vector<std::int64_t>{1, 2, 6});
  }
  SUBCASE("fixpoint cascades") {
    // A: {X, Y}; B: {Y, Z}; C: {Z}. X has a single user, so it drops, which
    // leaves A with one item, so A drops, which leaves Y with one user...
    Records r{{0, 10, 1}, {0, 11, 2}, {1, 11, 3}, {1, 12, 4}, {2, 12, 5}};
    // Hand simulation with thresholds (2, 2):
    // round 1: users A=2,B=2,C=1 -> drop C; items X=1,Y=2,Z=2 -> drop X.
    // round 2: A={Y} (1) drop; B={Y,Z} stays; Z has B only -> drop.
    // round 3: B={Y} drop; everything gone.
    CHECK(filter_min_degree(r, 2, 2).empty());
    // Thresholds (1, 2): X drops, then nothing else falls below 1.
    const Records kept = filter_min_degree(r, 1, 2);
    CHECK(kept.size() == 4);
    CHECK(std::none_of(kept.begin(), kept.end(), [](auto& x) { return x.item_id == 10; }));
  }
}

TEST_CASE("split_temporal sizes follow the rounding rule") {
  for (std::size_t n : {10u, 100u, 101u, 99u, 99991u, 1003u}) {
    CAPTURE(n);
    CHECK(temporal_block_sizes(n, 0.6, 4) == oracle_sizes(n));
    const auto ds = split_temporal(make_records(n));
    REQUIRE(ds.block_count() == 5);
    CHECK(std::llabs(static_cast<long long>(ds.base().size()) - static_cast<long long>(0.6 * n)) <= 1);
    for (std::size_t b = 1; b < 5; ++b)
      CHECK(std::llabs(static_cast<long long>(ds.block(b).size()) - static_cast<long long>(0.1 * n)) <= 1);
  }
  CHECK(temporal_block_sizes(101, 0.6, 4) == std::vector<std::size_t>{61, 10, 10, 10, 10});
  CHECK(temporal_block_sizes(10, 0.6, 4) == std::vector<std::size_t>{6, 1, 1, 1, 1});
  CHECK_THROWS_AS(split_temporal(make_records(7)), DataError);
}

TEST_CASE("split_temporal on 100 records partitions blocks and halves") {
  const Records all = make_records(100);
  const auto ds = split_temporal(all);
  CHECK(ds.base().size() == 60);
  Records joined;
  for (std::size_t b = 0; b < ds.block_count(); ++b) {
    joined.insert(joined.end(), ds.block(b).begin(), ds.block(b).end());
    if (b + 1 < ds.block_count()) CHECK(ds.block(b).back().timestamp <= ds.block(b + 1).front().timestamp);
  }
  CHECK(joined == all);
  // Records 61-65 (1-based) validate, 66-70 test.
  const auto val = ds.validation(0);
  const auto test = ds.test(0);
  REQUIRE(val.size() == 5);
  REQUIRE(test.size() == 5);
  CHECK(val.front().timestamp == 60);
  CHECK(val.back().timestamp == 64);
  CHECK(test.front().timestamp == 65);
  CHECK(test.back().timestamp == 69);

  const auto manifest = ds.manifest();
  CHECK(manifest["blocks"].size() == 5);
  CHECK(manifest["blocks"][1]["records"] == 10);
  CHECK(manifest["blocks"][1]["min_timestamp"] == 60);
}

TEST_CASE("build_graphs collapses duplicates and keeps ids stable") {
  const Records b0{{10, 100, 1}, {10, 100, 2}, {11, 101, 3}, {10, 101, 4}};
  const GraphBundle g0 = build_graphs(b0, nullptr);
  CHECK(g0.n_users() == 2);
  CHECK(g0.n_items() == 2);
  CHECK(g0.edge_count() == 3);
  std::size_t degree = 0;
  for (const auto& items : g0.ui) degree += items.size();
  CHECK(degree == 3);
  for (std::size_t u = 0; u < g0.ui.size(); ++u)
    for (std::size_t i : g0.ui[u]) CHECK(std::binary_search(g0.iu[i].begin(), g0.iu[i].end(), u));

  const Records b1{{12, 100, 5}, {11, 102, 6}};
  const GraphBundle g1 = build_graphs(b1, &g0);
  CHECK(g1.n_users() == 3);
  CHECK(g1.n_items() == 3);
  for (std::size_t u = 0; u < g0.n_users(); ++u) CHECK(g1.users.raw(u) == g0.users.raw(u));
  CHECK(*g1.users.find(12) == 2);
  CHECK(*g1.items.find(102) == 2);
  // Edges come from this block only.
  CHECK(g1.edge_count() == 2);
  CHECK(g1.ui[*g1.users.find(10)].empty());
}

TEST_CASE("Jaccard similarity graphs") {
  SUBCASE("identical sets are mutual top-1") {
    const Records r{{0, 1, 1}, {0, 2, 2}, {1, 1, 3}, {1, 2, 4}, {2, 3, 5}};
    const auto g = build_graphs(r, nullptr);
    REQUIRE(g.uu[0].size() == 1);
    CHECK(g.uu[0][0].node == 1);
    CHECK(g.uu[0][0].similarity == 1.0);
    CHECK(g.uu[2].empty());
  }
  SUBCASE("disjoint sets have no neighbors") {
    const Records r{{0, 1, 1}, {1, 2, 2}, {2, 3, 3}};
    const auto g = build_graphs(r, nullptr);
    for (const auto& l : g.uu) CHECK(l.empty());
  }
  SUBCASE("A={1,2}, B={2,3}, C={9}") {
    const Records r{{0, 1, 1}, {0, 2, 2}, {1, 2, 3}, {1, 3, 4}, {2, 9, 5}};
    const auto g = build_graphs(r, nullptr);
    REQUIRE(g.uu[0].size() == 1);
    CHECK(g.uu[0][0].node == 1);
    CHECK(g.uu[0][0].similarity == doctest::Approx(1.0 / 3.0));
    CHECK(g.uu[1][0].node == 0);
    CHECK(g.uu[2].empty());
  }
  SUBCASE("lists are bounded, self-free") {
    Records r;
    for (int u = 0; u < 30; ++u)
      for (int i = 0; i < 4; ++i) r.push_back({u, (u + i) % 12, u * 4 + i});
    const auto g = build_graphs(r, nullptr, 5);
    for (std::size_t u = 0; u < g.uu.size(); ++u) {
      CHECK(g.uu[u].size() <= 5);
      for (const auto& n : g.uu[u]) CHECK(n.node != u);
    }
    for (std::size_t i = 0; i < g.ii.size(); ++i) {
      CHECK(g.ii[i].size() <= 5);
      for (const auto& n : g.ii[i]) CHECK(n.node != i);
    }
  }
}

TEST_CASE("sample_bpr_batch") {
  SUBCASE("single user with one non-neighbor") {
    const auto g = build_graphs(Records{{0, 0, 1}, {1, 1, 2}}, nullptr);
    for (const auto& t : sample_bpr_batch(g, 50, 3)) {
      if (t.user == 0) {
        CHECK(t.pos == 0);
        CHECK(t.neg == 1);
      }
    }
  }
  SUBCASE("deterministic for a seed") {
    const auto g = build_graphs(make_records(200), nullptr);
    const auto a = sample_bpr_batch(g, 64, 42);
    const auto b = sample_bpr_batch(g, 64, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].user == b[k].user);
      CHECK(a[k].pos == b[k].pos);
      CHECK(a[k].neg == b[k].neg);
    }
    for (const auto& t : a) {
      CHECK(g.has_edge(t.user, t.pos));
      CHECK_FALSE(g.has_edge(t.user, t.neg));
    }
  }
  SUBCASE("positives are uniform over interactions") {
    // 2 users, 4 items, 5 interactions.
    const Records r{{0, 0, 1}, {0, 1, 2}, {0, 2, 3}, {1, 0, 4}, {1, 3, 5}};
    const auto g = build_graphs(r, nullptr);
    const std::size_t n = 10000;
    const auto batch = sample_bpr_batch(g, n, 7);
    REQUIRE(batch.size() == n);
    std::map<std::pair<std::size_t, std::size_t>, double> counts;
    for (const auto& t : batch) counts[{t.user, t.pos}] += 1.0;
    CHECK(counts.size() == 5);
    const double expected = n / 5.0;
    double chi2 = 0.0;
    for (const auto& [k, c] : counts) {
      chi2 += (c - expected) * (c - expected) / expected;
      CHECK(std::abs(c - expected) < 3.0 * std::sqrt(expected * 0.8));
    }
    // 4 degrees of freedom; 18.47 is the 0.999 quantile.
    CHECK(chi2 < 18.47);
  }
  SUBCASE("a user adjacent to every item is skipped") {
    const auto g = build_graphs(Records{{0, 0, 1}, {0, 1, 2}}, nullptr);
    CHECK(sample_bpr_batch(g, 10, 1).empty());
  }
}

TEST_CASE("contrastive candidates") {
  // user 0 adjacent to items 0 and 1 out of 10.
  Records r{{0, 0, 1}, {0, 1, 2}};
  for (int i = 2; i < 10; ++i) r.push_back({1, i, 3 + i});
  const auto g = build_graphs(r, nullptr);
  const std::size_t u = *g.users.find(0);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto d = sample_contrastive_candidates(g, u, 3, seed);
    REQUIRE(d.size() == 5);
    CHECK(d[0] == *g.items.find(0));
    CHECK(d[1] == *g.items.find(1));
    CHECK(std::set<std::size_t>(d.begin(), d.end()).size() == 5);
  }
  CHECK(sample_contrastive_candidates(g, u, 0, 1).size() == 2);
  CHECK(sample_contrastive_candidates(g, u, 50, 1).size() == 10);
  const std::size_t full = *g.users.find(1);
  CHECK(sample_contrastive_candidates(g, full, 5, 1).size() == 10);
}

TEST_CASE("map_interactions drops unknown ids") {
  const auto g = build_graphs(Records{{1, 1, 1}, {2, 2, 2}}, nullptr);
  const Records test{{1, 2, 3}, {1, 2, 4}, {3, 1, 5}, {2, 9, 6}};
  const auto m = map_interactions(g, test);
  CHECK(m.unknown_users == 1);
  CHECK(m.unknown_items == 1);
  CHECK(m.by_user[*g.users.find(1)] == std::vector<std::size_t>{*g.items.find(2)});
}
