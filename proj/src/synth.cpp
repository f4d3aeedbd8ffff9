#include "sailpiw/synth.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>

#include "sailpiw/common.hpp"

namespace sailpiw {

void SynthConfig::validate() const {
  if (users == 0 || clusters < 2 || items < clusters) throw std::invalid_argument("synth: need users, >= 2 clusters");
  if (items % clusters != 0) throw std::invalid_argument("synth: items must divide evenly into clusters");
  if (inc_blocks < 2) throw std::invalid_argument("synth: need at least 2 incremental blocks");
  if (noise < 0.0 || noise >= 1.0) throw std::invalid_argument("synth: noise must lie in [0, 1)");
  if (dynamic_fraction < 0.0 || dynamic_fraction > 1.0)
    throw std::invalid_argument("synth: dynamic_fraction must lie in [0, 1]");
  const std::size_t per_cluster = items / clusters;
  if (base_per_user + inc_per_user * inc_blocks > per_cluster)
    throw std::invalid_argument("synth: a user would exhaust their preferred cluster");
}

SynthDataset generate_synthetic(const SynthConfig& c) {
  c.validate();
  Rng rng(derive_seed(c.seed, {0x5e17}));
  const std::size_t per_cluster = c.items / c.clusters;
  SynthDataset out;
  out.item_cluster.resize(c.items);
  for (std::size_t i = 0; i < c.items; ++i) out.item_cluster[i] = i / per_cluster;

  std::uniform_int_distribution<std::size_t> pick_cluster(0, c.clusters - 1);
  std::uniform_int_distribution<std::size_t> pick_other(1, c.clusters - 1);
  std::uniform_int_distribution<std::size_t> pick_item(0, per_cluster - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const double dyn = c.duplicate_base ? 0.0 : c.dynamic_fraction;
  // Exactly round(dyn * users) users switch, chosen by a shuffle.
  std::vector<std::size_t> order(c.users);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_dynamic = static_cast<std::size_t>(std::llround(dyn * static_cast<double>(c.users)));
  out.dynamic.assign(c.users, false);
  for (std::size_t k = 0; k < n_dynamic; ++k) out.dynamic[order[k]] = true;
  out.pref_before.resize(c.users);
  out.pref_after.resize(c.users);
  for (std::size_t u = 0; u < c.users; ++u) {
    out.pref_before[u] = pick_cluster(rng);
    out.pref_after[u] = out.dynamic[u] ? (out.pref_before[u] + pick_other(rng)) % c.clusters : out.pref_before[u];
  }

  std::vector<std::vector<bool>> seen(c.users, std::vector<bool>(c.items, false));
  auto draw = [&](std::size_t u, std::size_t pref) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
      std::size_t cl = pref;
      if (unit(rng) < c.noise) cl = (pref + pick_other(rng)) % c.clusters;
      const std::size_t item = cl * per_cluster + pick_item(rng);
      if (!seen[u][item]) {
        seen[u][item] = true;
        return item;
      }
    }
    throw std::logic_error("synth: could not draw an unseen item");
  };

  std::int64_t clock = 0;
  auto make_block = [&](std::size_t per_user, bool after) {
    Records r;
    for (std::size_t u = 0; u < c.users; ++u)
      for (std::size_t k = 0; k < per_user; ++k) {
        const std::size_t item = draw(u, after ? out.pref_after[u] : out.pref_before[u]);
        r.push_back({static_cast<std::int64_t>(u), static_cast<std::int64_t>(item), 0,
                     static_cast<std::int64_t>(out.item_cluster[item])});
      }
    std::shuffle(r.begin(), r.end(), rng);
    for (auto& rec : r) rec.timestamp = clock++;
    return r;
  };

  std::vector<Records> blocks;
  blocks.push_back(make_block(c.base_per_user, false));
  for (std::size_t b = 1; b <= c.inc_blocks; ++b) {
    if (c.duplicate_base && b == 1) {
      Records copy = blocks.front();
      for (auto& rec : copy) rec.timestamp = clock++;
      blocks.push_back(std::move(copy));
    } else {
      blocks.push_back(make_block(c.inc_per_user, true));
    }
  }
  out.dataset = TemporalDataset(std::move(blocks));
  return out;
}

}  // namespace sailpiw
