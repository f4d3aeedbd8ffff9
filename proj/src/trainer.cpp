#include "sailpiw/trainer.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>

#include "sailpiw/cluster.hpp"
#include "sailpiw/common.hpp"
#include "sailpiw/eval.hpp"

namespace sailpiw {

void TrainConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw std::invalid_argument(std::string(name) + " must be positive");
  };
  positive(batch_size, "batch_size");
  positive(min_epochs_base, "min_epochs_base");
  positive(max_epochs_base, "max_epochs_base");
  positive(min_epochs_inc, "min_epochs_inc");
  positive(max_epochs_inc, "max_epochs_inc");
  positive(patience, "patience");
  positive(d, "d");
  positive(hidden, "hidden");
  positive(eval_k, "eval_k");
  if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("dropout must lie in [0, 1)");
  if (l2 < 0.0) throw std::invalid_argument("l2 must be nonnegative");
  if (min_epochs_base > max_epochs_base) throw std::invalid_argument("min_epochs_base exceeds max_epochs_base");
  if (min_epochs_inc > max_epochs_inc) throw std::invalid_argument("min_epochs_inc exceeds max_epochs_inc");
  if (patience > max_epochs_inc) throw std::invalid_argument("patience exceeds max_epochs_inc");
  distill.validate();
}

ModelDims TrainConfig::dims() const {
  ModelDims m;
  m.d = d;
  m.layers = layers;
  m.clusters = distill.clusters;
  m.hidden = hidden;
  m.state_dim = distill.state_dim();
  return m;
}

std::uint64_t stream_seed(std::uint64_t seed, std::size_t block, std::size_t epoch, std::size_t step,
                          SeedPurpose purpose) {
  return derive_seed(seed, {block, epoch, step, static_cast<std::uint64_t>(purpose)});
}

// ---------------------------------------------------------------------------
// Ledger

double RunLedger::incremental_average() const {
  const auto r = incremental_recalls();
  if (r.empty()) return 0.0;
  return std::accumulate(r.begin(), r.end(), 0.0) / static_cast<double>(r.size());
}

std::vector<double> RunLedger::incremental_recalls() const {
  std::vector<double> out;
  for (const auto& b : blocks)
    if (b.block >= 1) out.push_back(b.test_recall);
  return out;
}

namespace {

nlohmann::json epoch_json(const EpochRecord& e, bool wall) {
  nlohmann::json j{{"block", e.block},          {"epoch", e.epoch},
                   {"loss", e.loss},            {"bpr", e.bpr},
                   {"kl", e.kl},                {"distill_user", e.distill_user},
                   {"distill_item", e.distill_item}, {"val_recall", e.val_recall}};
  if (wall) j["wall_seconds"] = e.wall_seconds;
  return j;
}

}  // namespace

std::string RunLedger::to_jsonl() const {
  std::ostringstream out;
  for (const auto& e : epochs) out << epoch_json(e, true).dump() << '\n';
  return out.str();
}

nlohmann::json RunLedger::to_json(bool include_wall_time) const {
  nlohmann::json j;
  j["epochs"] = nlohmann::json::array();
  for (const auto& e : epochs) j["epochs"].push_back(epoch_json(e, include_wall_time));
  j["blocks"] = nlohmann::json::array();
  for (const auto& b : blocks)
    j["blocks"].push_back({{"block", b.block},
                           {"epochs", b.epochs},
                           {"best_epoch", b.best_epoch},
                           {"val_recall", b.val_recall},
                           {"test_recall", b.test_recall}});
  return j;
}

RunLedger RunLedger::from_json(const nlohmann::json& j) {
  RunLedger l;
  for (const auto& e : j.at("epochs")) {
    EpochRecord r;
    r.block = e.at("block");
    r.epoch = e.at("epoch");
    r.loss = e.at("loss");
    r.bpr = e.at("bpr");
    r.kl = e.at("kl");
    r.distill_user = e.at("distill_user");
    r.distill_item = e.at("distill_item");
    r.val_recall = e.at("val_recall");
    r.wall_seconds = e.value("wall_seconds", 0.0);
    l.epochs.push_back(r);
  }
  for (const auto& b : j.at("blocks")) {
    BlockResult r;
    r.block = b.at("block");
    r.epochs = b.at("epochs");
    r.best_epoch = b.at("best_epoch");
    r.val_recall = b.at("val_recall");
    r.test_recall = b.at("test_recall");
    l.blocks.push_back(r);
  }
  return l;
}

// ---------------------------------------------------------------------------
// Early stopping

bool EarlyStopper::update(double val) {
  ++epochs;
  if (val > best) {
    best = val;
    best_epoch = epochs;
    bad = 0;
    return true;
  }
  ++bad;
  return false;
}

bool EarlyStopper::update_unvalidated() {
  ++epochs;
  unvalidated_ = true;
  best = std::max(best, 0.0);
  best_epoch = epochs;
  bad = 0;
  return true;
}

bool EarlyStopper::should_stop() const {
  if (epochs >= max_) return true;
  if (unvalidated_) return epochs >= min_;
  return epochs >= min_ && bad >= patience_;
}

// ---------------------------------------------------------------------------
// Data

ExperimentData ExperimentData::prepare(TemporalDataset dataset, std::size_t n_inc_train, std::size_t k_sim) {
  if (n_inc_train + 1 >= dataset.block_count())
    throw std::invalid_argument("n_inc_train=" + std::to_string(n_inc_train) + " needs " +
                                std::to_string(n_inc_train + 2) + " blocks, dataset has " +
                                std::to_string(dataset.block_count()));
  ExperimentData out;
  out.dataset = std::move(dataset);
  for (std::size_t t = 0; t <= n_inc_train; ++t)
    out.graphs.push_back(build_graphs(out.dataset.block(t), t == 0 ? nullptr : &out.graphs.back(), k_sim));
  for (std::size_t t = 0; t <= n_inc_train; ++t) out.masks.push_back(seen_items(out.graphs, t));
  return out;
}

// ---------------------------------------------------------------------------
// One step

namespace {

std::vector<std::size_t> unique_items(const std::vector<BprTriple>& batch) {
  std::set<std::size_t> s;
  for (const auto& t : batch) {
    s.insert(t.pos);
    s.insert(t.neg);
  }
  return {s.begin(), s.end()};
}

}  // namespace

StepLoss step_loss(const ModelState& state, const StepContext& ctx, const std::vector<BprTriple>& batch,
                   std::uint64_t dropout_seed, GradientBuffer* grads) {
  ad::Tape tape;
  const BoundState bound = bind_state(tape, state);
  const LayerVars layers = forward_embeddings(tape, bound, *ctx.graph, ctx.dropout, dropout_seed);
  std::vector<std::size_t> us, ps, ns;
  for (const auto& t : batch) {
    us.push_back(t.user);
    ps.push_back(t.pos);
    ns.push_back(t.neg);
  }
  const ad::Var bpr = bpr_loss(ad::gather_rows(layers.user.back(), us), ad::gather_rows(layers.item.back(), ps),
                               ad::gather_rows(layers.item.back(), ns), ctx.l2);
  ad::Var kl, du, di;
  if (ctx.teacher != nullptr && ctx.spec.strategy != Strategy::kNone) {
    const DistillBatch db = warm_nodes(batch, *ctx.teacher);
    const auto w = piw_weights(ctx.spec, bound, layers, *ctx.teacher, db.users, ctx.order);
    static const CandidateSets kNoCandidates;
    const DistillTerms terms = distill_loss(ctx.spec, layers, *ctx.teacher, db, ctx.cands ? *ctx.cands : kNoCandidates,
                                            w ? std::optional<ad::Var>(w->w) : std::nullopt);
    du = terms.user;
    di = terms.item;
    if (ctx.spec.uses_cluster_kl() && ctx.target_p != nullptr) {
      const auto items = unique_items(batch);
      const ad::Var q = soft_assign(ad::gather_rows(layers.item.back(), items), bound.cluster_centers, ctx.spec.nu);
      kl = clustering_kl_loss(q, gather_rows(*ctx.target_p, items));
    }
  }
  const ad::Var total = compose_total_loss(bpr, kl, du, di, ctx.spec);
  StepLoss out;
  out.total = total.scalar();
  out.bpr = bpr.scalar();
  out.kl = kl.valid() ? kl.scalar() : 0.0;
  out.distill_user = du.valid() ? du.scalar() : 0.0;
  out.distill_item = di.valid() ? di.scalar() : 0.0;
  if (grads) {
    tape.backward(total);
    *grads = collect_gradients(tape, bound, state);
    // HARD anchors are recomputed from assignments, not learned.
    if (ctx.spec.ablation == Ablation::kHard) (*grads)["cluster_centers"].fill(0.0);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Block setup

BlockSetup prepare_block(const ModelState& prev_state, const GraphBundle& prev_graph, const TrainConfig& config,
                         std::size_t block) {
  BlockSetup s;
  s.teacher = make_teacher(prev_state, prev_graph, config.distill.anchors,
                           stream_seed(config.seed, block, 0, 0, SeedPurpose::kTeacher));
  const DistillSpec& spec = config.distill;
  if (spec.strategy != Strategy::kNone && spec.ablation == Ablation::kNoCluster)
    s.order = order_neighbors(prev_graph, s.teacher.layers.final_user(), s.teacher.layers.final_item(),
                              spec.neighbor_len);
  if (spec.strategy != Strategy::kNone && spec.ablation == Ablation::kHard)
    s.hard_assignment = kmeans(s.teacher.layers.final_item(), std::min(spec.clusters, s.teacher.n_items()),
                               stream_seed(config.seed, block, 0, 0, SeedPurpose::kCenters))
                            .assignment;
  return s;
}

void reset_piw_parameters(ModelState& state, const TrainConfig& config) {
  ModelDims dims = config.dims();
  dims.layers = 0;
  const ModelState fresh = init_model(dims, 0, 0, {config.embedding_std, derive_seed(config.seed, {static_cast<std::uint64_t>(SeedPurpose::kPiwInit)})});
  state.dims.clusters = dims.clusters;
  state.dims.state_dim = dims.state_dim;
  state.dims.hidden = dims.hidden;
  state.cluster_centers = fresh.cluster_centers;
  state.cluster_transforms = fresh.cluster_transforms;
  state.neighbor_transform = fresh.neighbor_transform;
  state.wg_w1 = fresh.wg_w1;
  state.wg_b1 = fresh.wg_b1;
  state.wg_w2 = fresh.wg_w2;
  state.wg_b2 = fresh.wg_b2;
}

namespace {

// Anchors at the start of an incremental block.
void init_block_centers(ModelState& state, const BlockSetup& setup, const TrainConfig& config, std::size_t block) {
  const DistillSpec& spec = config.distill;
  if (spec.strategy == Strategy::kNone) return;
  const Matrix& teacher_items = setup.teacher.layers.final_item();
  if (teacher_items.rows() < spec.clusters) {
    log_warn("fewer teacher items than clusters; anchors left unchanged");
    return;
  }
  if (spec.ablation == Ablation::kHard) return;  // set per epoch from the assignment
  state.cluster_centers =
      init_centers(teacher_items, spec.clusters, stream_seed(config.seed, block, 0, 0, SeedPurpose::kCenters));
}

struct EpochInputs {
  CandidateSets cands;
  Matrix target_p;
};

EpochInputs refresh_epoch(ModelState& state, const GraphBundle& graph, const BlockSetup& setup,
                          const TrainConfig& config, std::size_t block, std::size_t epoch) {
  EpochInputs in;
  const DistillSpec& spec = config.distill;
  if (spec.strategy == Strategy::kNone) return in;
  const bool contrastive = spec.strategy == Strategy::kSgct || spec.strategy == Strategy::kLwcKd;
  if (contrastive)
    in.cands = sample_candidate_sets(setup.teacher.graph, spec.n_neg,
                                     stream_seed(config.seed, block, epoch, 0, SeedPurpose::kCandidates),
                                     spec.strategy == Strategy::kLwcKd);
  const bool need_values = spec.uses_cluster_kl() || spec.ablation == Ablation::kHard;
  if (!need_values) return in;
  const Matrix items = forward_values(state, graph).final_item();
  if (spec.ablation == Ablation::kHard && !setup.hard_assignment.empty()) {
    std::vector<std::size_t> rows(setup.hard_assignment.size());
    std::iota(rows.begin(), rows.end(), 0);
    const Matrix prev = state.cluster_centers;
    state.cluster_centers =
        centers_from_assignment(gather_rows(items, rows), setup.hard_assignment, spec.clusters, &prev);
  }
  if (spec.uses_cluster_kl()) in.target_p = target_distribution(soft_assign(items, state.cluster_centers, spec.nu));
  return in;
}

struct BlockPlan {
  std::size_t block = 0;
  std::size_t min_epochs = 0;
  std::size_t max_epochs = 0;
  const BlockSetup* setup = nullptr;  // null on the base block
};

// Trains one block starting from `progress` (fresh or resumed) and appends
// the block result to the ledger. Leaves the best state in progress.best_state.
void train_block(const ExperimentData& data, const TrainConfig& config, const BlockPlan& plan,
                 RunProgress& progress, const TrainHooks& hooks) {
  const GraphBundle& graph = data.graphs.at(plan.block);
  const auto val = data.dataset.validation(plan.block);
  const Adjacency& mask = data.masks.at(plan.block);

  EarlyStopper stopper(plan.min_epochs, plan.max_epochs, config.patience);
  stopper.epochs = progress.epochs_done;
  stopper.bad = progress.bad;
  stopper.best = progress.best_val;
  stopper.best_epoch = progress.best_epoch;
  stopper.set_unvalidated(progress.unvalidated);

  StepContext ctx;
  ctx.graph = &graph;
  ctx.l2 = config.l2;
  ctx.dropout = config.dropout;
  if (plan.setup) {
    ctx.teacher = &plan.setup->teacher;
    ctx.order = &plan.setup->order;
    ctx.spec = config.distill;
  } else {
    ctx.spec.strategy = Strategy::kNone;
  }

  const std::size_t steps = (graph.edge_count() + config.batch_size - 1) / config.batch_size;
  while (!(stopper.epochs > 0 && stopper.should_stop())) {
    const std::size_t epoch = stopper.epochs + 1;
    const auto start = std::chrono::steady_clock::now();
    EpochInputs inputs;
    if (plan.setup) inputs = refresh_epoch(progress.state, graph, *plan.setup, config, plan.block, epoch);
    ctx.cands = &inputs.cands;
    ctx.target_p = inputs.target_p.empty() ? nullptr : &inputs.target_p;

    StepLoss sum;
    GradientBuffer grads(progress.state);
    try {
      for (std::size_t step = 0; step < steps; ++step) {
        const auto batch = sample_bpr_batch(graph, config.batch_size,
                                            stream_seed(config.seed, plan.block, epoch, step, SeedPurpose::kBatch));
        const StepLoss l = step_loss(progress.state, ctx, batch,
                                     stream_seed(config.seed, plan.block, epoch, step, SeedPurpose::kDropout), &grads);
        if (!std::isfinite(l.total))
          throw NumericError("non-finite loss in block " + std::to_string(plan.block) + " epoch " +
                             std::to_string(epoch) + " step " + std::to_string(step));
        adam_step(progress.state, grads, config.lr, progress.adam);
        if (hooks.on_step) hooks.on_step(plan.block, epoch, step, l);
        sum.total += l.total;
        sum.bpr += l.bpr;
        sum.kl += l.kl;
        sum.distill_user += l.distill_user;
        sum.distill_item += l.distill_item;
      }
    } catch (const NumericError&) {
      if (hooks.on_abort) {
        RunProgress good = progress;
        good.state = progress.best_state;
        hooks.on_abort(good);
      }
      throw;
    }

    const RecallResult vr = evaluate_recall(progress.state, graph, val, &mask, config.eval_k);
    const double recall = vr.mean;
    if (vr.users.empty() ? stopper.update_unvalidated() : stopper.update(recall)) progress.best_state = progress.state;
    const double n = static_cast<double>(std::max<std::size_t>(steps, 1));
    EpochRecord rec;
    rec.block = plan.block;
    rec.epoch = epoch;
    rec.loss = sum.total / n;
    rec.bpr = sum.bpr / n;
    rec.kl = sum.kl / n;
    rec.distill_user = sum.distill_user / n;
    rec.distill_item = sum.distill_item / n;
    rec.val_recall = recall;
    rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    progress.ledger.epochs.push_back(rec);
    progress.epochs_done = stopper.epochs;
    progress.bad = stopper.bad;
    progress.best_val = stopper.best;
    progress.best_epoch = stopper.best_epoch;
    progress.unvalidated = stopper.unvalidated();
    log_info("block " + std::to_string(plan.block) + " epoch " + std::to_string(epoch) + " loss " +
             std::to_string(rec.loss) + " val recall " + std::to_string(recall));
    if (hooks.on_epoch_end) hooks.on_epoch_end(progress);
  }

  BlockResult res;
  res.block = plan.block;
  res.epochs = stopper.epochs;
  res.best_epoch = stopper.best_epoch;
  res.val_recall = stopper.best;
  res.test_recall =
      evaluate_recall(progress.best_state, graph, data.dataset.test(plan.block), &mask, config.eval_k).mean;
  progress.ledger.blocks.push_back(res);
}

RunProgress fresh_progress(const ModelState& state, std::uint64_t seed, std::size_t block, RunLedger ledger) {
  RunProgress p;
  p.seed = seed;
  p.block = block;
  p.state = state;
  p.adam = AdamState(state);
  p.best_state = state;
  p.ledger = std::move(ledger);
  return p;
}

// Incremental block `block` continuing from `progress`, which already holds
// the grown student and the teacher source in prev_state.
void run_incremental(const ExperimentData& data, const TrainConfig& config, RunProgress& progress,
                     const TrainHooks& hooks) {
  const std::size_t block = progress.block;
  const BlockSetup setup = prepare_block(*progress.prev_state, data.graphs.at(block - 1), config, block);
  const std::uint64_t before = snapshot_hash(setup.teacher);
  BlockPlan plan{block, config.min_epochs_inc, config.max_epochs_inc, &setup};
  train_block(data, config, plan, progress, hooks);
  if (snapshot_hash(setup.teacher) != before) throw std::logic_error("teacher snapshot changed during training");
}

RunProgress start_incremental(const ExperimentData& data, const TrainConfig& config, const ModelState& prev,
                              std::size_t block, RunLedger ledger) {
  ModelState student = prev;
  const GraphBundle& g = data.graphs.at(block);
  grow_tables(student, g.n_users(), g.n_items(), config.embedding_std,
              stream_seed(config.seed, block, 0, 0, SeedPurpose::kGrow));
  if (block == 1) reset_piw_parameters(student, config);
  const BlockSetup setup = prepare_block(prev, data.graphs.at(block - 1), config, block);
  init_block_centers(student, setup, config, block);
  RunProgress p = fresh_progress(student, config.seed, block, std::move(ledger));
  p.prev_state = prev;
  return p;
}

}  // namespace

RunResult train_base(const ExperimentData& data, const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  const GraphBundle& g = data.graphs.at(0);
  if (g.edge_count() == 0) throw EmptyDatasetError("base block is empty");
  const ModelState init = init_model(config.dims(), g.n_users(), g.n_items(),
                                     {config.embedding_std, stream_seed(config.seed, 0, 0, 0, SeedPurpose::kInit)});
  RunProgress p = fresh_progress(init, config.seed, 0, {});
  train_block(data, config, {0, config.min_epochs_base, config.max_epochs_base, nullptr}, p, hooks);
  return {std::move(p.ledger), std::move(p.best_state), std::nullopt};
}

RunResult run_seed(const ExperimentData& data, const TrainConfig& config, const RunResult* base,
                   const TrainHooks& hooks, const RunProgress* resume) {
  config.validate();
  const std::size_t last = data.graphs.size() - 1;
  RunProgress progress;
  if (resume) {
    progress = *resume;
    if (progress.block == 0) {
      train_block(data, config, {0, config.min_epochs_base, config.max_epochs_base, nullptr}, progress, hooks);
      if (last == 0) return {std::move(progress.ledger), std::move(progress.best_state), std::nullopt};
      progress = start_incremental(data, config, progress.best_state, 1, std::move(progress.ledger));
    }
  } else {
    RunResult b = base ? *base : train_base(data, config, hooks);
    if (last == 0) return b;
    progress = start_incremental(data, config, b.final_state, 1, std::move(b.ledger));
  }
  while (true) {
    run_incremental(data, config, progress, hooks);
    if (progress.block == last) break;
    progress = start_incremental(data, config, progress.best_state, progress.block + 1, std::move(progress.ledger));
  }
  return {std::move(progress.ledger), std::move(progress.best_state), std::move(progress.prev_state)};
}

UserDiagnostics user_diagnostics(const ModelState& state, const GraphBundle& graph, const BlockSetup& setup,
                                 const DistillSpec& spec) {
  DistillSpec probe = spec;
  if (probe.strategy == Strategy::kNone) probe.strategy = Strategy::kLwcKd;
  const bool unit_weights = probe.ablation == Ablation::kNoPiw;
  if (unit_weights) probe.ablation = Ablation::kFull;
  UserDiagnostics out;
  const std::size_t n = std::min(setup.teacher.n_users(), state.n_users());
  for (std::size_t u = 0; u < n; ++u) out.users.push_back(u);
  if (out.users.empty()) return out;
  ad::Tape tape;
  const BoundState bound = bind_state(tape, state, false);
  const LayerVars layers = forward_embeddings(tape, bound, graph, 0.0, 0);
  const auto w = piw_weights(probe, bound, layers, setup.teacher, out.users, &setup.order);
  const Matrix& s = w->s.value();
  for (std::size_t r = 0; r < s.rows(); ++r) {
    double sq = 0.0;
    for (double v : s.row(r)) sq += v * v;
    out.shift_norm.push_back(std::sqrt(sq));
    out.w_raw.push_back(unit_weights ? 1.0 : w->w_raw.value()[r]);
    out.w.push_back(unit_weights ? 1.0 : w->w.value()[r]);
  }
  return out;
}

}  // namespace sailpiw
