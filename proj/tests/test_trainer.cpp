#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "sailpiw/checkpoint.hpp"
#include "sailpiw/common.hpp"
#include "sailpiw/distill.hpp"
#include "sailpiw/eval.hpp"
#include "sailpiw/synth.hpp"
#include "sailpiw/trainer.hpp"

using namespace sailpiw;

namespace {

TrainConfig small_config(std::size_t n_inc_train = 2) {
  TrainConfig c;
  c.d = 12;
  c.layers = 2;
  c.hidden = 6;
  c.batch_size = 128;
  c.lr = 5e-3;
  c.dropout = 0.1;
  c.min_epochs_base = 3;
  c.max_epochs_base = 4;
  c.min_epochs_inc = 2;
  c.max_epochs_inc = 3;
  c.k_sim = 4;
  c.n_inc_train = n_inc_train;
  c.distill.clusters = 3;
  c.distill.n_neg = 4;
  c.distill.anchors = 3;
  c.distill.neighbor_len = 3;
  return c;
}

ExperimentData small_data(std::size_t n_inc_train = 2, std::uint64_t seed = 5) {
  SynthConfig s;
  s.users = 80;
  s.items = 120;
  s.clusters = 4;
  s.base_per_user = 8;
  s.inc_per_user = 3;
  s.inc_blocks = 3;
  s.seed = seed;
  return ExperimentData::prepare(generate_synthetic(s).dataset, n_inc_train, 4);
}

std::filesystem::path temp_path(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("early stopping with patience 2 after a peak at epoch 10 stops at 12") {
  EarlyStopper s(10, 200, 2);
  std::size_t epoch = 0;
  while (!(s.epochs > 0 && s.should_stop())) {
    ++epoch;
    const double val = epoch <= 10 ? 0.01 * static_cast<double>(epoch) : 0.1 - 0.01 * static_cast<double>(epoch - 10);
    s.update(val);
  }
  CHECK(s.epochs == 12);
  CHECK(s.best_epoch == 10);
}

TEST_CASE("early stopping never fires before the minimum and always by the maximum") {
  Rng rng(9);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t min = 1 + trial % 7, max = min + trial % 5, patience = 1 + trial % 3;
    EarlyStopper s(min, max, patience);
    while (!(s.epochs > 0 && s.should_stop())) s.update(u(rng));
    CHECK(s.epochs >= min);
    CHECK(s.epochs <= max);
  }
  EarlyStopper flat(3, 10, 2);
  for (int k = 0; k < 3; ++k) flat.update(0.5);
  CHECK(flat.best_epoch == 1);  // ties do not count as improvement
  CHECK(flat.should_stop());
}

TEST_CASE("unvalidated epochs keep the latest state and stop at the minimum") {
  EarlyStopper s(4, 10, 2);
  while (!(s.epochs > 0 && s.should_stop())) CHECK(s.update_unvalidated());
  CHECK(s.epochs == 4);
  CHECK(s.best_epoch == 4);
}

TEST_CASE("identical seeds give identical ledgers and states") {
  const auto data = small_data();
  auto cfg = small_config();
  const auto a = run_seed(data, cfg);
  const auto b = run_seed(data, cfg);
  CHECK(a.ledger.to_json(false) == b.ledger.to_json(false));
  CHECK(a.final_state == b.final_state);
  cfg.seed = 2;
  const auto c = run_seed(data, cfg);
  CHECK_FALSE(c.final_state == a.final_state);
}

TEST_CASE("ledger shape and averaged recall") {
  const auto data = small_data();
  const auto r = run_seed(data, small_config());
  REQUIRE(r.ledger.blocks.size() == 3);
  const auto inc = r.ledger.incremental_recalls();
  REQUIRE(inc.size() == 2);
  CHECK(r.ledger.incremental_average() == doctest::Approx((inc[0] + inc[1]) / 2).epsilon(1e-15));
  std::size_t prev_block = 0, prev_epoch = 0;
  for (const auto& e : r.ledger.epochs) {
    if (e.block != prev_block) prev_epoch = 0;
    CHECK(e.epoch == prev_epoch + 1);
    CHECK(e.val_recall >= 0.0);
    CHECK(e.val_recall <= 1.0);
    prev_block = e.block;
    prev_epoch = e.epoch;
  }
  for (const auto& b : r.ledger.blocks) {
    CHECK(b.test_recall >= 0.0);
    CHECK(b.test_recall <= 1.0);
    CHECK(b.epochs >= (b.block == 0 ? 3u : 2u));
  }
  CHECK(RunLedger::from_json(r.ledger.to_json(true)).to_json(true) == r.ledger.to_json(true));
}

TEST_CASE("fine-tuning with strategy none matches a standalone loop bitwise") {
  const auto data = small_data(1);
  auto cfg = small_config(1);
  cfg.min_epochs_inc = 3;
  cfg.max_epochs_inc = 3;
  cfg.distill.strategy = Strategy::kNone;
  const RunResult base = train_base(data, cfg);

  std::vector<double> trace;
  TrainHooks hooks;
  hooks.on_step = [&](std::size_t block, std::size_t, std::size_t, const StepLoss& l) {
    if (block == 1) trace.push_back(l.total);
  };
  run_seed(data, cfg, &base, hooks);

  // Plain BPR + Adam loop over the same batches and dropout masks.
  const GraphBundle& g = data.graphs[1];
  ModelState st = base.final_state;
  grow_tables(st, g.n_users(), g.n_items(), cfg.embedding_std, stream_seed(cfg.seed, 1, 0, 0, SeedPurpose::kGrow));
  AdamState adam(st);
  std::vector<double> ref;
  const std::size_t steps = (g.edge_count() + cfg.batch_size - 1) / cfg.batch_size;
  for (std::size_t epoch = 1; epoch <= 3; ++epoch)
    for (std::size_t step = 0; step < steps; ++step) {
      const auto batch = sample_bpr_batch(g, cfg.batch_size, stream_seed(cfg.seed, 1, epoch, step, SeedPurpose::kBatch));
      ad::Tape tape;
      const auto bound = bind_state(tape, st);
      const auto layers =
          forward_embeddings(tape, bound, g, cfg.dropout, stream_seed(cfg.seed, 1, epoch, step, SeedPurpose::kDropout));
      std::vector<std::size_t> us, ps, ns;
      for (const auto& t : batch) {
        us.push_back(t.user);
        ps.push_back(t.pos);
        ns.push_back(t.neg);
      }
      const auto loss = bpr_loss(ad::gather_rows(layers.user.back(), us), ad::gather_rows(layers.item.back(), ps),
                                 ad::gather_rows(layers.item.back(), ns), cfg.l2);
      tape.backward(loss);
      adam_step(st, collect_gradients(tape, bound, st), cfg.lr, adam);
      ref.push_back(loss.scalar());
    }
  REQUIRE(trace.size() == ref.size());
  for (std::size_t k = 0; k < ref.size(); ++k) CHECK(trace[k] == ref[k]);
}

TEST_CASE("constant generator output makes FULL match NO_PIW per step") {
  const auto data = small_data(1);
  auto cfg = small_config(1);
  cfg.distill.lambda1 = 0.0;
  const RunResult base = train_base(data, cfg);
  const BlockSetup setup = prepare_block(base.final_state, data.graphs[0], cfg, 1);
  ModelState st = base.final_state;
  grow_tables(st, data.graphs[1].n_users(), data.graphs[1].n_items(), 0.1, 3);
  reset_piw_parameters(st, cfg);
  st.wg_w2.fill(0.0);
  st.wg_b2.fill(0.3);
  const auto cands = sample_candidate_sets(data.graphs[0], cfg.distill.n_neg, 4, true);
  const auto batch = sample_bpr_batch(data.graphs[1], 64, 5);
  for (Strategy s : {Strategy::kGraphSail, Strategy::kSgct, Strategy::kLwcKd}) {
    StepContext ctx;
    ctx.graph = &data.graphs[1];
    ctx.teacher = &setup.teacher;
    ctx.cands = &cands;
    ctx.order = &setup.order;
    ctx.spec = cfg.distill;
    ctx.spec.strategy = s;
    ctx.dropout = 0.0;
    GradientBuffer g_full(st), g_plain(st);
    ctx.spec.ablation = Ablation::kFull;
    const auto full = step_loss(st, ctx, batch, 0, &g_full);
    ctx.spec.ablation = Ablation::kNoPiw;
    const auto plain = step_loss(st, ctx, batch, 0, &g_plain);
    CAPTURE(to_string(s));
    CHECK(std::abs(full.total - plain.total) < 1e-12);
    for (const char* name : {"user_emb", "item_emb", "layer_weights.0", "layer_weights.1"}) {
      double worst = 0.0;
      const auto& a = g_full[name].flat();
      const auto& b = g_plain[name].flat();
      for (std::size_t k = 0; k < a.size(); ++k) worst = std::max(worst, std::abs(a[k] - b[k]));
      CAPTURE(name);
      CHECK(worst < 1e-12);
    }
  }
}

TEST_CASE("a dominant item outranks unseen items for most users after base training") {
  Records base, inc1, inc2;
  Rng rng(3);
  std::uniform_int_distribution<std::int64_t> other(1, 29);
  std::int64_t ts = 0;
  for (auto* block : {&base, &inc1, &inc2})
    for (std::int64_t u = 0; u < 60; ++u) {
      block->push_back({u, 0, ts++});
      for (int k = 0; k < 3; ++k) block->push_back({u, other(rng), ts++});
    }
  const auto data = ExperimentData::prepare(TemporalDataset({base, inc1, inc2}), 1, 4);
  auto cfg = small_config(1);
  cfg.lr = 2e-2;
  cfg.dropout = 0.0;
  cfg.min_epochs_base = 200;
  cfg.max_epochs_base = 200;
  // The returned state is the best on validation; check the last trained one.
  std::optional<ModelState> last;
  TrainHooks hooks;
  hooks.on_epoch_end = [&](const RunProgress& p) { last = p.state; };
  train_base(data, cfg, hooks);
  REQUIRE(last.has_value());
  const auto emb = forward_values(*last, data.graphs[0]);
  const std::size_t dominant = *data.graphs[0].items.find(0);
  std::size_t ahead = 0;
  for (std::size_t u = 0; u < emb.final_user().rows(); ++u) {
    const double s0 = dot(emb.final_user().row(u), emb.final_item().row(dominant));
    bool first = true;
    for (std::size_t i = 0; i < emb.final_item().rows(); ++i)
      if (!data.graphs[0].has_edge(u, i) && dot(emb.final_user().row(u), emb.final_item().row(i)) >= s0) first = false;
    ahead += first;
  }
  // Collaborative signal may lift a neighbor's item for a few users.
  CHECK(ahead * 10 >= emb.final_user().rows() * 9);
}

TEST_CASE("teacher snapshot is unchanged by a block of training") {
  const auto data = small_data(1);
  const auto cfg = small_config(1);
  const RunResult base = train_base(data, cfg);
  const auto before = snapshot_hash(prepare_block(base.final_state, data.graphs[0], cfg, 1).teacher);
  const RunResult r = run_seed(data, cfg, &base);
  REQUIRE(r.prev_state.has_value());
  CHECK(*r.prev_state == base.final_state);
  CHECK(snapshot_hash(prepare_block(*r.prev_state, data.graphs[0], cfg, 1).teacher) == before);
}

TEST_CASE("grown tables keep old rows") {
  const auto data = small_data(1);
  const auto cfg = small_config(1);
  const RunResult base = train_base(data, cfg);
  const RunResult r = run_seed(data, cfg, &base);
  CHECK(r.final_state.n_users() == data.graphs[1].n_users());
  CHECK(r.final_state.n_users() >= base.final_state.n_users());
}

TEST_CASE("model checkpoint round trip is bit exact") {
  const auto data = small_data(1);
  const auto r = run_seed(data, small_config(1));
  const auto path = temp_path("sailpiw_model.ckpt");
  save_model(path, r.final_state, 1, 7);
  CHECK(load_model(path) == r.final_state);
  {
    std::ofstream out(path, std::ios::binary);
    out << "NOTMAGIC";
  }
  CHECK_THROWS_AS(load_model(path), CheckpointError);
  std::filesystem::remove(path);
}

TEST_CASE("resuming from a mid-block checkpoint reproduces the run") {
  const auto data = small_data();
  auto cfg = small_config();
  cfg.min_epochs_inc = 3;
  const auto path = temp_path("sailpiw_progress.ckpt");
  TrainHooks hooks;
  bool saved = false;
  hooks.on_epoch_end = [&](const RunProgress& p) {
    if (p.block == 1 && p.epochs_done == 2 && !saved) {
      save_progress(path, p);
      saved = true;
    }
  };
  const auto full = run_seed(data, cfg, nullptr, hooks);
  REQUIRE(saved);
  const RunProgress progress = load_progress(path);
  CHECK(progress.block == 1);
  CHECK(progress.epochs_done == 2);
  const auto resumed = run_seed(data, cfg, nullptr, {}, &progress);
  CHECK(resumed.final_state == full.final_state);
  CHECK(resumed.ledger.to_json(false) == full.ledger.to_json(false));
  std::filesystem::remove(path);
}

TEST_CASE("base-block resume continues into the incremental blocks") {
  const auto data = small_data(1);
  const auto cfg = small_config(1);
  const auto path = temp_path("sailpiw_progress_base.ckpt");
  TrainHooks hooks;
  hooks.on_epoch_end = [&](const RunProgress& p) {
    if (p.block == 0 && p.epochs_done == 1) save_progress(path, p);
  };
  const auto full = run_seed(data, cfg, nullptr, hooks);
  const RunProgress progress = load_progress(path);
  const auto resumed = run_seed(data, cfg, nullptr, {}, &progress);
  CHECK(resumed.final_state == full.final_state);
  std::filesystem::remove(path);
}

TEST_CASE("non-finite losses abort with the last good state") {
  const auto data = small_data(1);
  auto cfg = small_config(1);
  cfg.lr = 1e200;
  cfg.min_epochs_base = 50;
  cfg.max_epochs_base = 50;
  bool aborted = false;
  TrainHooks hooks;
  hooks.on_abort = [&](const RunProgress& p) {
    aborted = true;
    for (double v : p.state.user_emb.flat()) REQUIRE(std::isfinite(v));
  };
  CHECK_THROWS_AS(train_base(data, cfg, hooks), NumericError);
  CHECK(aborted);
}

TEST_CASE("config validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  c.batch_size = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = TrainConfig{};
  c.patience = 500;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("progress checkpoints keep the unvalidated flag") {
  const auto data = small_data(1);
  RunProgress p;
  p.seed = 3;
  p.block = 1;
  p.epochs_done = 2;
  p.state = train_base(data, small_config(1)).final_state;
  p.adam = AdamState(p.state);
  p.best_state = p.state;
  p.unvalidated = true;
  const auto path = temp_path("sailpiw_progress_flag.ckpt");
  save_progress(path, p);
  CHECK(load_progress(path).unvalidated);
  p.unvalidated = false;
  save_progress(path, p);
  CHECK_FALSE(load_progress(path).unvalidated);
  std::filesystem::remove(path);
}
