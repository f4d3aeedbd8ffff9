#include "sailpiw/experiment.hpp"

#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "sailpiw/common.hpp"

namespace sailpiw {

SeedData prepare_seed_data(const ExperimentConfig& config, std::uint64_t seed) {
  SeedData out;
  if (config.source == "synth") {
    SynthConfig sc = config.synth;
    sc.seed = seed;
    out.synth = generate_synthetic(sc);
    out.data = ExperimentData::prepare(out.synth->dataset, config.train.n_inc_train, config.train.k_sim);
  } else {
    Records records = load_interactions(config.dataset_path, config.min_degree_user, config.min_degree_item);
    out.data = ExperimentData::prepare(split_temporal(std::move(records), config.base_frac, config.n_inc),
                                       config.train.n_inc_train, config.train.k_sim);
  }
  return out;
}

const SeedData& DataSource::for_seed(std::uint64_t seed) {
  const bool per_seed = config_.source == "synth";
  if (!cached_ || (per_seed && cached_seed_ != seed)) {
    cached_ = prepare_seed_data(config_, seed);
    cached_seed_ = seed;
  }
  return *cached_;
}

std::vector<Variant> main_variants(const DistillSpec& spec) {
  DistillSpec none = spec;
  none.strategy = Strategy::kNone;
  none.ablation = Ablation::kFull;
  std::vector<Variant> out{{"finetune", none}};
  if (spec.strategy == Strategy::kNone) return out;
  DistillSpec plain = spec;
  plain.ablation = Ablation::kNoPiw;
  out.push_back({to_string(spec.strategy), plain});
  if (spec.ablation != Ablation::kNoPiw) {
    std::string name = to_string(spec.strategy) + "-piw";
    if (spec.ablation != Ablation::kFull) name += "-" + to_string(spec.ablation);
    out.push_back({name, spec});
  }
  return out;
}

std::vector<Variant> ablation_variants(const DistillSpec& spec) {
  if (spec.strategy == Strategy::kNone) throw ConfigError("distill.strategy", "ablations need a distillation strategy");
  std::vector<Variant> out;
  for (Ablation a : {Ablation::kFull, Ablation::kNoWg, Ablation::kNoCluster, Ablation::kNoTrans, Ablation::kHard,
                     Ablation::kNoPiw}) {
    DistillSpec s = spec;
    s.ablation = a;
    out.push_back({to_string(a), s});
  }
  return out;
}

std::vector<Variant> ksweep_variants(const DistillSpec& spec, const std::vector<std::size_t>& ks) {
  if (spec.strategy == Strategy::kNone) throw ConfigError("distill.strategy", "the K sweep needs a distillation strategy");
  std::vector<Variant> out;
  for (std::size_t k : ks) {
    DistillSpec s = spec;
    s.clusters = k;
    out.push_back({"k" + std::to_string(k), s});
  }
  return out;
}

std::vector<double> VariantLedgers::block_means() const {
  std::vector<double> sum;
  for (const auto& l : per_seed) {
    const auto r = l.incremental_recalls();
    if (sum.empty()) sum.assign(r.size(), 0.0);
    if (r.size() != sum.size()) throw std::logic_error("seeds trained different block counts");
    for (std::size_t b = 0; b < r.size(); ++b) sum[b] += r[b];
  }
  for (double& v : sum) v /= static_cast<double>(per_seed.size());
  return sum;
}

double VariantLedgers::average() const {
  const auto m = block_means();
  if (m.empty()) return 0.0;
  return std::accumulate(m.begin(), m.end(), 0.0) / static_cast<double>(m.size());
}

const VariantLedgers* SweepResult::find(const std::string& name) const {
  for (const auto& v : variants)
    if (v.variant.name == name) return &v;
  return nullptr;
}

SweepResult run_variants(DataSource& source, const ExperimentConfig& config, const std::vector<Variant>& variants,
                         const SweepHooks& hooks) {
  SweepResult out;
  out.seeds = config.seeds;
  for (const auto& v : variants) out.variants.push_back({v, {}});
  for (std::uint64_t seed : config.seeds) {
    const SeedData& sd = source.for_seed(seed);
    TrainConfig base_cfg = config.train;
    base_cfg.seed = seed;
    log_info("seed " + std::to_string(seed) + ": base block");
    const RunResult base = train_base(sd.data, base_cfg, hooks.train_hooks ? hooks.train_hooks("base", seed) : TrainHooks{});
    std::vector<RunResult> results;
    for (std::size_t k = 0; k < variants.size(); ++k) {
      TrainConfig tc = base_cfg;
      tc.distill = variants[k].spec;
      log_info("seed " + std::to_string(seed) + ": " + variants[k].name);
      results.push_back(
          run_seed(sd.data, tc, &base, hooks.train_hooks ? hooks.train_hooks(variants[k].name, seed) : TrainHooks{}));
      out.variants[k].per_seed.push_back(results.back().ledger);
    }
    if (hooks.on_seed) hooks.on_seed(seed, sd, results);
  }
  return out;
}

std::vector<double> category_shifts(const Records& prev, const Records& now) {
  std::set<std::int64_t> cats;
  std::map<std::int64_t, Records> by_prev, by_now;
  for (const auto& r : prev) {
    if (r.category_id) cats.insert(*r.category_id);
    by_prev[r.user_id].push_back(r);
  }
  for (const auto& r : now) {
    if (r.category_id) cats.insert(*r.category_id);
    by_now[r.user_id].push_back(r);
  }
  std::vector<double> out;
  if (cats.empty()) return out;
  const std::vector<std::int64_t> universe(cats.begin(), cats.end());
  for (const auto& [user, rs] : by_prev) {
    const auto it = by_now.find(user);
    if (it == by_now.end()) continue;
    if (auto d = category_interest_shift(rs, it->second, user, universe)) out.push_back(*d);
  }
  return out;
}

CaseStudy run_case_study(const SeedData& seed_data, const ExperimentConfig& config, std::uint64_t seed,
                         const std::vector<std::pair<std::string, const RunResult*>>& models,
                         const RunResult& piw_run, const DistillSpec& piw_spec) {
  const ExperimentData& data = seed_data.data;
  CaseStudy cs;
  cs.seed = seed;
  cs.block = data.graphs.size() - 1;
  if (cs.block == 0 || !piw_run.prev_state) throw std::invalid_argument("case study needs an incremental block");
  const std::size_t t = cs.block;
  const GraphBundle& prev_graph = data.graphs[t - 1];
  const GraphBundle& graph = data.graphs[t];

  const Matrix teacher_items = forward_values(*piw_run.prev_state, prev_graph).final_item();
  cs.iss = iss_scores(teacher_items, prev_graph.ui, graph.ui, piw_spec.clusters,
                      stream_seed(seed, t, 0, 0, SeedPurpose::kIss));
  cs.cohorts = split_cohorts(cs.iss);
  for (const auto& [name, run] : models)
    cs.models.push_back(cohort_recall(name, run->final_state, graph, data.masks[t], data.dataset.test(t),
                                      data.dataset.block(t - 1), cs.cohorts, config.train.eval_k));

  TrainConfig tc = config.train;
  tc.seed = seed;
  tc.distill = piw_spec;
  const BlockSetup setup = prepare_block(*piw_run.prev_state, prev_graph, tc, t);
  cs.diagnostics = user_diagnostics(piw_run.final_state, graph, setup, piw_spec);
  for (std::size_t u : cs.diagnostics.users) cs.diag_raw_users.push_back(graph.users.raw(u));
  cs.category_shift = category_shifts(data.dataset.block(t - 1), data.dataset.block(t));
  return cs;
}

double population_std(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

namespace {

double final_recall(const RunResult& r) { return r.ledger.incremental_average(); }

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(4);
  s << std::fixed << v;
  return s.str();
}

std::size_t majority(std::size_t n) { return (2 * n + 2) / 3; }

}  // namespace

SynthSuiteResult run_synth_suite(const ExperimentConfig& config, const SweepHooks& hooks) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = config;
  cfg.source = "synth";
  cfg.synth.duplicate_base = false;
  DistillSpec spec = cfg.train.distill;
  if (spec.strategy == Strategy::kNone) spec.strategy = Strategy::kLwcKd;
  spec.ablation = Ablation::kFull;

  std::vector<Variant> variants = main_variants(spec);
  variants.resize(1);  // finetune
  for (const auto& v : ablation_variants(spec)) variants.push_back(v);
  const std::string strategy_name = to_string(spec.strategy);

  SynthSuiteResult out;
  SweepHooks inner = hooks;
  inner.on_seed = [&](std::uint64_t seed, const SeedData& sd, const std::vector<RunResult>& results) {
    const RunResult& finetune = results[0];
    const RunResult& full = results[1];
    const RunResult& no_piw = results.back();
    SynthSeedOutcome o;
    o.seed = seed;
    for (std::size_t k = 1; k < variants.size(); ++k) o.ablation[variants[k].name] = final_recall(results[k]);
    o.piw_recall = final_recall(full);
    o.nopiw_recall = final_recall(no_piw);

    CaseStudy cs = run_case_study(
        sd, cfg, seed, {{"finetune", &finetune}, {strategy_name, &no_piw}, {strategy_name + "-piw", &full}}, full,
        spec);
    double sd_sum = 0.0, ss_sum = 0.0;
    std::size_t nd = 0, ns = 0;
    for (std::size_t k = 0; k < cs.diagnostics.users.size(); ++k) {
      const auto raw = static_cast<std::size_t>(cs.diag_raw_users[k]);
      if (sd.synth->dynamic.at(raw)) {
        sd_sum += cs.diagnostics.shift_norm[k];
        ++nd;
      } else {
        ss_sum += cs.diagnostics.shift_norm[k];
        ++ns;
      }
    }
    o.shift_dynamic = nd ? sd_sum / static_cast<double>(nd) : 0.0;
    o.shift_static = ns ? ss_sum / static_cast<double>(ns) : 0.0;
    o.static_backward = cs.models.back().static_backward;
    o.dynamic_backward = cs.models.back().dynamic_backward;

    // Zero drift: block 1 repeats the base block.
    ExperimentConfig zero = cfg;
    zero.synth.duplicate_base = true;
    zero.seeds = {seed};
    DataSource zsrc(zero);
    std::vector<RunResult> zres;
    SweepHooks zhooks;
    zhooks.train_hooks = hooks.train_hooks;
    zhooks.on_seed = [&](std::uint64_t, const SeedData& zsd, const std::vector<RunResult>& r) {
      zres = r;
      const std::size_t t = zsd.data.graphs.size() - 1;
      TrainConfig tc = zero.train;
      tc.seed = seed;
      tc.distill = spec;
      const BlockSetup setup = prepare_block(*r[0].prev_state, zsd.data.graphs[t - 1], tc, t);
      o.zero_w_std = population_std(user_diagnostics(r[0].final_state, zsd.data.graphs[t], setup, spec).w);
    };
    DistillSpec zero_nopiw = spec;
    zero_nopiw.ablation = Ablation::kNoPiw;
    run_variants(zsrc, zero, {{"zero-full", spec}, {"zero-no_piw", zero_nopiw}}, zhooks);
    o.zero_piw_recall = final_recall(zres[0]);
    o.zero_nopiw_recall = final_recall(zres[1]);

    out.seeds.push_back(o);
    out.case_studies.push_back(std::move(cs));
    if (hooks.on_seed) hooks.on_seed(seed, sd, results);
  };
  DataSource source(cfg);
  out.sweep = run_variants(source, cfg, variants, inner);
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::vector<Criterion> SynthSuiteResult::criteria() const {
  const std::size_t n = seeds.size();
  std::size_t a = 0, b = 0, c = 0, z = 0, f = 0;
  std::ostringstream d6, d7, d8;
  for (const auto& o : seeds) {
    a += o.shift_dynamic > o.shift_static;
    b += o.piw_recall >= o.nopiw_recall;
    c += o.static_backward > o.dynamic_backward;
    const double rel = std::abs(o.zero_piw_recall - o.zero_nopiw_recall) / std::max(o.zero_nopiw_recall, 1e-12);
    z += o.zero_w_std < 0.3 && rel < 0.1;
    const double full = o.ablation.at("full"), no_wg = o.ablation.at("no_wg");
    f += full >= no_wg;
    d6 << " seed " << o.seed << ": |s| dyn " << fmt(o.shift_dynamic) << " vs static " << fmt(o.shift_static)
       << ", recall piw " << fmt(o.piw_recall) << " vs no_piw " << fmt(o.nopiw_recall) << ", backward static "
       << fmt(o.static_backward) << " vs dynamic " << fmt(o.dynamic_backward) << ";";
    d7 << " seed " << o.seed << ": std(w) " << fmt(o.zero_w_std) << ", recall piw " << fmt(o.zero_piw_recall)
       << " vs no_piw " << fmt(o.zero_nopiw_recall) << " (rel " << fmt(rel) << ");";
    d8 << " seed " << o.seed << ": full " << fmt(full) << " vs no_wg " << fmt(no_wg) << ";";
  }
  const bool fast = seconds < 600.0;
  std::ostringstream head6;
  head6 << "shift " << a << "/" << n << ", recall " << b << "/" << n << ", backward " << c << "/" << n << ", "
        << fmt(seconds) << " s;";
  std::vector<Criterion> out;
  out.push_back({"6", "synthetic drift", n > 0 && a == n && b >= majority(n) && c >= majority(n) && fast,
                 head6.str() + d6.str()});
  out.push_back({"7", "zero-drift neutrality", n > 0 && z == n,
                 std::to_string(z) + "/" + std::to_string(n) + " seeds;" + d7.str()});
  out.push_back({"8", "ablation harness", n > 0 && f >= majority(n),
                 std::to_string(f) + "/" + std::to_string(n) + " seeds;" + d8.str()});
  return out;
}

}  // namespace sailpiw
