#include "sailpiw/report.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>

namespace sailpiw {

namespace {

std::string fixed(double v, int digits) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  std::string out = buf;
  if (out.front() == '-' && out.find_first_not_of("-0.") == std::string::npos) out.erase(0, 1);
  return out;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  return out;
}

std::optional<double> baseline_average(const SweepResult& sweep, const std::string& baseline) {
  if (baseline.empty()) return std::nullopt;
  const auto* b = sweep.find(baseline);
  if (!b) return std::nullopt;
  return b->average();
}

std::size_t block_count(const SweepResult& sweep) {
  return sweep.variants.empty() ? 0 : sweep.variants.front().block_means().size();
}

}  // namespace

nlohmann::json sweep_summary(const SweepResult& sweep, const std::string& baseline) {
  using nlohmann::json;
  const auto base_avg = baseline_average(sweep, baseline);
  json methods = json::array();
  for (const auto& v : sweep.variants) {
    json per_seed = json::array();
    for (std::size_t k = 0; k < v.per_seed.size(); ++k) {
      const RunLedger& l = v.per_seed[k];
      json epochs = json::array();
      for (const auto& b : l.blocks) epochs.push_back(b.epochs);
      per_seed.push_back({{"seed", sweep.seeds.at(k)},
                          {"base_test_recall", l.blocks.empty() ? 0.0 : l.blocks.front().test_recall},
                          {"inc", l.incremental_recalls()},
                          {"avg", l.incremental_average()},
                          {"epochs_per_block", epochs}});
    }
    json m = {{"name", v.variant.name},
              {"strategy", to_string(v.variant.spec.strategy)},
              {"ablation", to_string(v.variant.spec.ablation)},
              {"clusters", v.variant.spec.clusters},
              {"inc", v.block_means()},
              {"avg", v.average()},
              {"per_seed", per_seed}};
    m["imp_percent"] = base_avg ? json(improvement_percent(v.average(), *base_avg)) : json(nullptr);
    methods.push_back(std::move(m));
  }
  return {{"seeds", sweep.seeds}, {"baseline", base_avg ? json(baseline) : json(nullptr)}, {"methods", methods}};
}

nlohmann::json case_study_json(const std::vector<CaseStudy>& studies) {
  using nlohmann::json;
  json out = json::array();
  for (const auto& cs : studies) {
    json models = json::array();
    for (const auto& m : cs.models)
      models.push_back({{"model", m.model},
                        {"static_forward", m.static_forward},
                        {"dynamic_forward", m.dynamic_forward},
                        {"static_backward", m.static_backward},
                        {"dynamic_backward", m.dynamic_backward}});
    out.push_back({{"seed", cs.seed},
                   {"block", cs.block},
                   {"eligible_users", cs.cohorts.eligible},
                   {"cohort_size", cs.cohorts.static_users.size()},
                   {"models", models}});
  }
  return out;
}

nlohmann::json synth_outcomes_json(const std::vector<SynthSeedOutcome>& outcomes) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& o : outcomes)
    out.push_back({{"seed", o.seed},
                   {"shift_norm_dynamic", o.shift_dynamic},
                   {"shift_norm_static", o.shift_static},
                   {"piw_recall", o.piw_recall},
                   {"no_piw_recall", o.nopiw_recall},
                   {"static_backward", o.static_backward},
                   {"dynamic_backward", o.dynamic_backward},
                   {"zero_drift_w_std", o.zero_w_std},
                   {"zero_drift_piw_recall", o.zero_piw_recall},
                   {"zero_drift_no_piw_recall", o.zero_nopiw_recall},
                   {"ablation", o.ablation}});
  return out;
}

void write_recall_table(const std::filesystem::path& path, const SweepResult& sweep, const std::string& key_header,
                        const std::vector<std::string>& labels, const std::optional<std::string>& baseline) {
  auto out = open_out(path);
  const std::size_t blocks = block_count(sweep);
  const auto base_avg = baseline ? baseline_average(sweep, *baseline) : std::nullopt;
  out << key_header;
  for (std::size_t b = 1; b <= blocks; ++b) out << ",inc" << b;
  out << ",avg";
  if (baseline) out << ",imp_percent";
  out << '\n';
  for (std::size_t k = 0; k < sweep.variants.size(); ++k) {
    const auto& v = sweep.variants[k];
    out << (labels.empty() ? v.variant.name : labels.at(k));
    for (double r : v.block_means()) out << ',' << fixed(r, 6);
    out << ',' << fixed(v.average(), 6);
    if (baseline) out << ',' << (base_avg ? fixed(improvement_percent(v.average(), *base_avg), 2) : "");
    out << '\n';
  }
}

void write_case_study_csv(const std::filesystem::path& path, const std::vector<CaseStudy>& studies) {
  auto out = open_out(path);
  out << "seed,block,model,static_forward,dynamic_forward,static_backward,dynamic_backward,cohort_size,"
         "eligible_users\n";
  std::vector<std::string> order;
  std::map<std::string, std::array<double, 4>> sums;
  for (const auto& cs : studies) {
    for (const auto& m : cs.models) {
      out << cs.seed << ',' << cs.block << ',' << m.model << ',' << fixed(m.static_forward, 6) << ','
          << fixed(m.dynamic_forward, 6) << ',' << fixed(m.static_backward, 6) << ','
          << fixed(m.dynamic_backward, 6) << ',' << cs.cohorts.static_users.size() << ',' << cs.cohorts.eligible
          << '\n';
      if (!sums.count(m.model)) order.push_back(m.model);
      auto& s = sums[m.model];
      s[0] += m.static_forward;
      s[1] += m.dynamic_forward;
      s[2] += m.static_backward;
      s[3] += m.dynamic_backward;
    }
  }
  if (studies.empty()) return;
  const double n = static_cast<double>(studies.size());
  for (const auto& name : order) {
    const auto& s = sums[name];
    out << "mean," << studies.front().block << ',' << name;
    for (double v : s) out << ',' << fixed(v / n, 6);
    out << ",,\n";
  }
}

void write_shift_histogram_csv(const std::filesystem::path& path, const std::vector<CaseStudy>& studies,
                               std::size_t clusters, std::size_t bins) {
  std::vector<double> iss, cat, shift, w;
  for (const auto& cs : studies) {
    iss.insert(iss.end(), cs.iss.scores.begin(), cs.iss.scores.end());
    cat.insert(cat.end(), cs.category_shift.begin(), cs.category_shift.end());
    shift.insert(shift.end(), cs.diagnostics.shift_norm.begin(), cs.diagnostics.shift_norm.end());
    w.insert(w.end(), cs.diagnostics.w.begin(), cs.diagnostics.w.end());
  }
  auto upper = [](const std::vector<double>& v, double floor) {
    const double m = v.empty() ? 0.0 : *std::max_element(v.begin(), v.end());
    return std::max(m, floor);
  };
  auto out = open_out(path);
  out << "metric,bin_lo,bin_hi,count\n";
  auto emit = [&](const std::string& name, const std::vector<double>& v, double hi) {
    if (v.empty()) return;
    const auto counts = histogram(v, 0.0, hi, bins);
    const double width = hi / static_cast<double>(bins);
    for (std::size_t b = 0; b < bins; ++b)
      out << name << ',' << fixed(width * static_cast<double>(b), 6) << ','
          << fixed(width * static_cast<double>(b + 1), 6) << ',' << counts[b] << '\n';
  };
  emit("iss", iss, 2.0 / static_cast<double>(std::max<std::size_t>(clusters, 1)));
  emit("category_shift", cat, std::sqrt(2.0));
  emit("shift_norm", shift, upper(shift, 1e-9));
  emit("w", w, upper(w, 1e-9));
}

void write_user_shift_csv(const std::filesystem::path& path, const std::vector<CaseStudy>& studies) {
  auto out = open_out(path);
  out << "seed,user_id,shift_norm,w_raw,w\n";
  char buf[160];
  for (const auto& cs : studies) {
    const auto& d = cs.diagnostics;
    for (std::size_t k = 0; k < d.users.size(); ++k) {
      std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g", d.shift_norm[k], d.w_raw[k], d.w[k]);
      out << cs.seed << ',' << cs.diag_raw_users[k] << ',' << buf << '\n';
    }
  }
}

void write_ledgers(const std::filesystem::path& dir, const SweepResult& sweep) {
  for (const auto& v : sweep.variants)
    for (std::size_t k = 0; k < v.per_seed.size(); ++k) {
      auto out = open_out(dir / (v.variant.name + "_seed" + std::to_string(sweep.seeds.at(k)) + ".jsonl"));
      out << v.per_seed[k].to_jsonl();
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) { open_out(path) << text; }

void write_json(const std::filesystem::path& path, const nlohmann::json& j) { open_out(path) << j.dump(2) << '\n'; }

void write_report_schema(const std::filesystem::path& path) {
  write_text(path, R"(# Report files

All recall values are Recall@K (K = `train.eval_k`) on the test half of the
block after each trained block, averaged over the configured seeds. `incN` is
incremental block N; `avg` is the mean of the inc columns.

## summary.json

- `command`: CLI command that produced the directory.
- `config`: fully resolved configuration in config-file syntax.
- `seeds`: seed list.
- `baseline`: method used for `imp_percent`, or null.
- `methods[]`: `name`, `strategy`, `ablation`, `clusters`, `inc[]`, `avg`,
  `imp_percent` (`(avg / avg_baseline - 1) * 100`, null without a baseline),
  `per_seed[]` with `seed`, `base_test_recall`, `inc[]`, `avg` and
  `epochs_per_block[]` (block 0 first).
- `case_study[]` (casestudy, synth): `seed`, `block`, `eligible_users`,
  `cohort_size` and per-model cohort recalls as in case_study.csv.
- `synth[]` (synth): per-seed acceptance measurements; see synth_acceptance.json.

No field depends on wall-clock time.

## table_main.csv (run)

`method,inc1..incN,avg,imp_percent`. Methods: `finetune`, `<strategy>`
(distillation without personalized weights) and `<strategy>-piw`.

## table_ablation.csv (ablate, synth)

`variant,inc1..incN,avg,imp_percent` with variants `full`, `no_wg`,
`no_cluster`, `no_trans`, `hard`, `no_piw`; `imp_percent` is relative to
`no_piw`. The synth command adds a `finetune` row.

## table_ksweep.csv (ksweep)

`k,inc1..incN,avg`: the PIW method with `distill.clusters = k`.

## case_study.csv (casestudy, synth)

`seed,block,model,static_forward,dynamic_forward,static_backward,dynamic_backward,cohort_size,eligible_users`.
Static and dynamic cohorts are the bottom and top 20% of users active in
blocks t-1 and t, ranked by ISS. Forward recall tests on the test half of
block t+1 with training items masked; backward recall tests on block t-1
without a mask. Rows with `seed = mean` average the seeds.

## shift_histogram.csv (casestudy, synth)

`metric,bin_lo,bin_hi,count`, 20 equal bins per metric, pooled over seeds:
- `iss`: interest shift score on [0, 2/M].
- `category_shift`: L2 distance of softmax category distributions on
  [0, sqrt 2] (only when the data has categories).
- `shift_norm`: |s_u| of the PIW model on [0, max].
- `w`: normalized imitation weight over all warm users on [0, max].

## user_shift.csv (casestudy, synth)

`seed,user_id,shift_norm,w_raw,w` per warm user of the PIW model on the last
trained block; `user_id` is the id from the input data.

## ledgers/<method>_seed<N>.jsonl

One JSON object per epoch: `block`, `epoch`, `loss`, `bpr`, `kl`,
`distill_user`, `distill_item`, `val_recall`, `wall_seconds`.

## synth_acceptance.json (synth)

`criteria[]` with `id`, `title`, `pass`, `detail`, the per-seed
measurements and `seconds` (wall time of the suite).

## config.resolved.ini

The resolved configuration; passing it back with `--config` reproduces
summary.json exactly on the same platform.
)");
}

}  // namespace sailpiw
