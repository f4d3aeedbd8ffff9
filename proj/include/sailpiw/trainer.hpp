#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "json.hpp"
#include "sailpiw/data.hpp"
#include "sailpiw/distill.hpp"
#include "sailpiw/model.hpp"

namespace sailpiw {

struct TrainConfig {
  double lr = 5e-4;
  std::size_t batch_size = 64;
  double dropout = 0.2;
  std::size_t min_epochs_base = 10;
  std::size_t max_epochs_base = 200;  // safety cap; the base block is otherwise bounded by early stopping
  std::size_t min_epochs_inc = 3;
  std::size_t max_epochs_inc = 10;
  std::size_t patience = 2;
  std::size_t d = 128;
  std::size_t layers = 2;
  std::size_t hidden = 16;
  double l2 = 1e-5;
  double embedding_std = 0.1;
  std::size_t k_sim = 10;
  std::size_t eval_k = 20;
  std::size_t n_inc_train = 3;  // incremental blocks trained; the next one only serves val/test
  std::uint64_t seed = 1;
  DistillSpec distill;

  void validate() const;
  ModelDims dims() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// Stream tags for derive_seed(seed, {block, epoch, step, purpose}).
enum class SeedPurpose : std::uint64_t {
  kInit = 1,
  kBatch,
  kDropout,
  kCandidates,
  kTeacher,
  kCenters,
  kGrow,
  kPiwInit,
  kIss,
};
std::uint64_t stream_seed(std::uint64_t seed, std::size_t block, std::size_t epoch, std::size_t step,
                          SeedPurpose purpose);

struct EpochRecord {
  std::size_t block = 0;
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;
  double bpr = 0.0;
  double kl = 0.0;
  double distill_user = 0.0;
  double distill_item = 0.0;
  double val_recall = 0.0;
  double wall_seconds = 0.0;
};

struct BlockResult {
  std::size_t block = 0;
  std::size_t epochs = 0;
  std::size_t best_epoch = 0;
  double val_recall = 0.0;
  double test_recall = 0.0;
};

struct RunLedger {
  std::vector<EpochRecord> epochs;
  std::vector<BlockResult> blocks;

  // Mean test recall over the incremental blocks (block >= 1).
  double incremental_average() const;
  std::vector<double> incremental_recalls() const;
  // One JSON object per epoch; wall time is the only non-deterministic field.
  std::string to_jsonl() const;
  nlohmann::json to_json(bool include_wall_time) const;
  static RunLedger from_json(const nlohmann::json& j);
};

// Early stopping on validation recall: a non-improving epoch counts as bad;
// stop once at least `min_epochs` ran and the last `patience` were bad, or
// at `max_epochs`.
class EarlyStopper {
 public:
  EarlyStopper(std::size_t min_epochs, std::size_t max_epochs, std::size_t patience)
      : min_(min_epochs), max_(max_epochs), patience_(patience) {}

  // Returns true when `val` is a new best.
  bool update(double val);
  // Epoch whose validation split had no evaluable users: the latest state
  // counts as best and training ends at the minimum epoch count.
  bool update_unvalidated();
  bool should_stop() const;
  bool unvalidated() const { return unvalidated_; }
  // Restores the flag from a checkpoint.
  void set_unvalidated(bool v) { unvalidated_ = v; }

  std::size_t epochs = 0;
  std::size_t bad = 0;
  std::size_t best_epoch = 0;
  double best = -1.0;

 private:
  std::size_t min_, max_, patience_;
  bool unvalidated_ = false;
};

// Dataset plus the per-block graphs and training-item masks used for
// evaluation. graphs[t] holds block t's edges on cumulative ids.
struct ExperimentData {
  TemporalDataset dataset;
  std::vector<GraphBundle> graphs;  // blocks 0..n_inc_train
  std::vector<Adjacency> masks;     // items seen in blocks 0..t, per user

  static ExperimentData prepare(TemporalDataset dataset, std::size_t n_inc_train, std::size_t k_sim);
};

// Everything a single optimization step reads besides the parameters.
struct StepContext {
  const GraphBundle* graph = nullptr;
  const TeacherSnapshot* teacher = nullptr;  // null on the base block
  const CandidateSets* cands = nullptr;
  const Matrix* target_p = nullptr;          // clustering target, all items x M
  const NeighborOrder* order = nullptr;
  DistillSpec spec;
  double l2 = 1e-5;
  double dropout = 0.0;
};

struct StepLoss {
  double total = 0.0;
  double bpr = 0.0;
  double kl = 0.0;
  double distill_user = 0.0;
  double distill_item = 0.0;
};

// Loss of one batch; fills `grads` when non-null.
StepLoss step_loss(const ModelState& state, const StepContext& ctx, const std::vector<BprTriple>& batch,
                   std::uint64_t dropout_seed, GradientBuffer* grads);

// Teacher-side inputs that stay fixed for a whole incremental block.
struct BlockSetup {
  TeacherSnapshot teacher;
  NeighborOrder order;                     // neighbor-state ablation
  std::vector<std::size_t> hard_assignment;  // HARD ablation
};
BlockSetup prepare_block(const ModelState& prev_state, const GraphBundle& prev_graph, const TrainConfig& config,
                         std::size_t block);

// Resets anchors, transforms and the weight generator to the shape given by the distill settings.
void reset_piw_parameters(ModelState& state, const TrainConfig& config);

// Training position saved at epoch boundaries; enough to resume bit-exactly.
struct RunProgress {
  std::uint64_t seed = 0;
  std::size_t block = 0;
  std::size_t epochs_done = 0;
  ModelState state;
  AdamState adam;
  ModelState best_state;
  std::size_t bad = 0;
  std::size_t best_epoch = 0;
  double best_val = -1.0;
  bool unvalidated = false;
  std::optional<ModelState> prev_state;  // teacher source for block > 0
  RunLedger ledger;
};

struct TrainHooks {
  std::function<void(std::size_t block, std::size_t epoch, std::size_t step, const StepLoss&)> on_step;
  std::function<void(const RunProgress&)> on_epoch_end;
  // Called with the last good state when a non-finite value aborts training.
  std::function<void(const RunProgress&)> on_abort;
};

struct RunResult {
  RunLedger ledger;
  ModelState final_state;
  std::optional<ModelState> prev_state;  // teacher source of the last trained block
};

// Base block only: BPR + L2, early stopping on validation recall.
RunResult train_base(const ExperimentData& data, const TrainConfig& config, const TrainHooks& hooks = {});

// Base (trained here unless `base` is given) followed by incremental blocks
// 1..n_inc_train. `resume` continues from a saved position.
RunResult run_seed(const ExperimentData& data, const TrainConfig& config, const RunResult* base = nullptr,
                   const TrainHooks& hooks = {}, const RunProgress* resume = nullptr);

// Per-user shift diagnostics for warm users of the teacher: |s_u|, w_raw and
// w normalized over all of them. NO_PIW reports the FULL state with w = 1.
struct UserDiagnostics {
  std::vector<std::size_t> users;
  std::vector<double> shift_norm;
  std::vector<double> w_raw;
  std::vector<double> w;
};
UserDiagnostics user_diagnostics(const ModelState& state, const GraphBundle& graph, const BlockSetup& setup,
                                 const DistillSpec& spec);

}  // namespace sailpiw
