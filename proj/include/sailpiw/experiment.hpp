#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "sailpiw/config.hpp"
#include "sailpiw/eval.hpp"
#include "sailpiw/synth.hpp"
#include "sailpiw/trainer.hpp"

namespace sailpiw {

// Prepared blocks for one seed. File data is the same for every seed; the
// synthetic generator is reseeded per seed.
struct SeedData {
  ExperimentData data;
  std::optional<SynthDataset> synth;
};

class DataSource {
 public:
  explicit DataSource(ExperimentConfig config) : config_(std::move(config)) {}
  const SeedData& for_seed(std::uint64_t seed);

 private:
  ExperimentConfig config_;
  std::optional<std::uint64_t> cached_seed_;
  std::optional<SeedData> cached_;
};

SeedData prepare_seed_data(const ExperimentConfig& config, std::uint64_t seed);

struct Variant {
  std::string name;
  DistillSpec spec;
};

// finetune, <strategy> (no PIW) and <strategy>-piw with the configured ablation.
std::vector<Variant> main_variants(const DistillSpec& spec);
// One row per ablation in the order FULL, NO_WG, NO_CLUSTER, NO_TRANS, HARD, NO_PIW.
std::vector<Variant> ablation_variants(const DistillSpec& spec);
// The configured PIW variant with M taken from each entry of `ks`.
std::vector<Variant> ksweep_variants(const DistillSpec& spec, const std::vector<std::size_t>& ks);

struct VariantLedgers {
  Variant variant;
  std::vector<RunLedger> per_seed;  // aligned with SweepResult::seeds

  // Per incremental block, averaged over seeds.
  std::vector<double> block_means() const;
  // Mean of block_means().
  double average() const;
};

struct SweepResult {
  std::vector<std::uint64_t> seeds;
  std::vector<VariantLedgers> variants;
  const VariantLedgers* find(const std::string& name) const;
};

struct SweepHooks {
  // Per-variant training hooks; may be empty.
  std::function<TrainHooks(const std::string& variant, std::uint64_t seed)> train_hooks;
  // Called once per seed after every variant finished, results aligned with the variants.
  std::function<void(std::uint64_t seed, const SeedData& data, const std::vector<RunResult>& results)> on_seed;
};

// Every variant on every seed; the base model is trained once per seed and shared.
SweepResult run_variants(DataSource& source, const ExperimentConfig& config, const std::vector<Variant>& variants,
                         const SweepHooks& hooks = {});

// Case study on the last trained block t: ISS between blocks t-1 and t from
// the PIW run's teacher items, cohort recall forward (test half of t+1) and
// backward (block t-1) for each model, plus shift diagnostics of the PIW run.
struct CaseStudy {
  std::uint64_t seed = 0;
  std::size_t block = 0;
  IssResult iss;
  CohortSplit cohorts;
  std::vector<CohortRecall> models;
  UserDiagnostics diagnostics;           // dense ids of the block-t graph
  std::vector<std::int64_t> diag_raw_users;
  std::vector<double> category_shift;    // users active in both blocks, when categories exist
};

CaseStudy run_case_study(const SeedData& seed_data, const ExperimentConfig& config, std::uint64_t seed,
                         const std::vector<std::pair<std::string, const RunResult*>>& models,
                         const RunResult& piw_run, const DistillSpec& piw_spec);

// Per-user category-interest shift between two record sets, over users
// present in both.
std::vector<double> category_shifts(const Records& prev, const Records& now);

// Synthetic-drift acceptance suite.
struct SynthSeedOutcome {
  std::uint64_t seed = 0;
  double shift_dynamic = 0.0;  // mean |s_u| of planted dynamic users
  double shift_static = 0.0;
  double piw_recall = 0.0;     // FULL
  double nopiw_recall = 0.0;
  double static_backward = 0.0;
  double dynamic_backward = 0.0;
  double zero_w_std = 0.0;     // population std of w on the duplicated block
  double zero_piw_recall = 0.0;
  double zero_nopiw_recall = 0.0;
  std::map<std::string, double> ablation;  // variant name -> test recall
};

struct Criterion {
  std::string id;
  std::string title;
  bool pass = false;
  std::string detail;
};

struct SynthSuiteResult {
  std::vector<SynthSeedOutcome> seeds;
  SweepResult sweep;              // finetune plus the six ablations
  std::vector<CaseStudy> case_studies;
  double seconds = 0.0;

  // Criteria 6 (three sub-checks), 7 and 8.
  std::vector<Criterion> criteria() const;
};

SynthSuiteResult run_synth_suite(const ExperimentConfig& config, const SweepHooks& hooks = {});

double population_std(const std::vector<double>& v);

}  // namespace sailpiw
