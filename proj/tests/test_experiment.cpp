#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "doctest.h"
#include "sailpiw/experiment.hpp"
#include "sailpiw/report.hpp"

using namespace sailpiw;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c = synth_preset();
  c.seeds = {1, 2};
  c.synth.users = 150;
  c.synth.items = 120;
  c.synth.clusters = 4;
  c.synth.base_per_user = 10;
  c.synth.inc_per_user = 3;
  c.synth.inc_blocks = 3;
  c.train.d = 12;
  c.train.hidden = 6;
  c.train.batch_size = 256;
  c.train.lr = 5e-3;
  c.train.min_epochs_base = 2;
  c.train.max_epochs_base = 3;
  c.train.min_epochs_inc = 2;
  c.train.max_epochs_inc = 2;
  c.train.k_sim = 4;
  c.train.n_inc_train = 2;
  c.train.distill.clusters = 4;
  c.train.distill.n_neg = 4;
  c.train.distill.anchors = 3;
  c.train.distill.neighbor_len = 3;
  return c;
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::vector<std::vector<std::string>> rows;
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("variant lists") {
  DistillSpec spec;
  spec.strategy = Strategy::kSgct;
  const auto main = main_variants(spec);
  REQUIRE(main.size() == 3);
  CHECK(main[0].name == "finetune");
  CHECK(main[0].spec.strategy == Strategy::kNone);
  CHECK(main[1].spec.ablation == Ablation::kNoPiw);
  CHECK(main[2].spec.ablation == Ablation::kFull);

  const auto abl = ablation_variants(spec);
  REQUIRE(abl.size() == 6);
  const std::vector<Ablation> order{Ablation::kFull,    Ablation::kNoWg, Ablation::kNoCluster,
                                    Ablation::kNoTrans, Ablation::kHard, Ablation::kNoPiw};
  std::set<std::string> names;
  for (std::size_t k = 0; k < abl.size(); ++k) {
    CHECK(abl[k].spec.ablation == order[k]);
    CHECK(abl[k].spec.strategy == Strategy::kSgct);
    names.insert(abl[k].name);
  }
  CHECK(names.size() == 6);

  const auto ks = ksweep_variants(spec, {5, 10, 15, 20, 25});
  REQUIRE(ks.size() == 5);
  CHECK(ks[0].name == "k5");
  CHECK(ks[4].spec.clusters == 25);
}

TEST_CASE("category shift over users in both sets") {
  Records prev{{1, 10, 0, 7}, {1, 11, 1, 7}, {2, 10, 2, 7}, {3, 10, 3, 7}, {3, 12, 4, 8}};
  Records now{{1, 12, 5, 8}, {3, 11, 6, 7}, {3, 13, 7, 8}, {4, 10, 8, 7}};
  const auto s = category_shifts(prev, now);
  REQUIRE(s.size() == 2);
  // Softmax of counts: (2, 0) against (0, 1).
  const double p7 = std::exp(2.0) / (std::exp(2.0) + 1.0), q7 = 1.0 / (1.0 + std::exp(1.0));
  CHECK(s[0] == doctest::Approx(std::sqrt(2.0) * (p7 - q7)));
  CHECK(s[1] == doctest::Approx(0.0));
  for (auto& r : prev) r.category_id.reset();
  for (auto& r : now) r.category_id.reset();
  CHECK(category_shifts(prev, now).empty());
}

TEST_CASE("population std") {
  CHECK(population_std({}) == 0.0);
  CHECK(population_std({3.0, 3.0}) == 0.0);
  CHECK(population_std({1.0, 3.0}) == doctest::Approx(1.0));
}

TEST_CASE("sweep tables, summary and ledgers") {
  const ExperimentConfig cfg = tiny_config();
  DistillSpec spec = cfg.train.distill;
  spec.strategy = Strategy::kSgct;

  DataSource src_a(cfg), src_b(cfg);
  const SweepResult a = run_variants(src_a, cfg, main_variants(spec));
  const SweepResult b = run_variants(src_b, cfg, main_variants(spec));
  CHECK(sweep_summary(a, "finetune").dump() == sweep_summary(b, "finetune").dump());

  REQUIRE(a.seeds == cfg.seeds);
  REQUIRE(a.variants.size() == 3);
  for (const auto& v : a.variants) {
    REQUIRE(v.per_seed.size() == 2);
    const auto means = v.block_means();
    REQUIRE(means.size() == 2);
    for (std::size_t blk = 0; blk < means.size(); ++blk) {
      const double m = (v.per_seed[0].incremental_recalls()[blk] + v.per_seed[1].incremental_recalls()[blk]) / 2.0;
      CHECK(means[blk] == doctest::Approx(m).epsilon(1e-12));
    }
  }

  const auto dir = temp_dir("sailpiw_report_test");
  write_recall_table(dir / "table.csv", a, "method", {}, std::string("finetune"));
  const auto rows = read_csv(dir / "table.csv");
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == std::vector<std::string>{"method", "inc1", "inc2", "avg", "imp_percent"});
  CHECK(rows[1][0] == "finetune");
  CHECK(rows[1][4] == "0.00");
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const double avg = (std::stod(rows[r][1]) + std::stod(rows[r][2])) / 2.0;
    CHECK(std::abs(std::stod(rows[r][3]) - avg) <= 5e-5);
  }

  write_recall_table(dir / "plain.csv", a, "variant", {"x", "y", "z"}, std::nullopt);
  const auto plain = read_csv(dir / "plain.csv");
  CHECK(plain[0].back() == "avg");
  CHECK(plain[3][0] == "z");

  const auto j = sweep_summary(a, "finetune");
  CHECK(j["methods"].size() == 3);
  CHECK(j["methods"][0]["imp_percent"].get<double>() == 0.0);
  CHECK(sweep_summary(a, "")["methods"][0]["imp_percent"].is_null());

  write_ledgers(dir / "ledgers", a);
  for (const auto& v : a.variants)
    for (auto seed : a.seeds)
      CHECK(std::filesystem::exists(dir / "ledgers" / (v.variant.name + "_seed" + std::to_string(seed) + ".jsonl")));
  std::filesystem::remove_all(dir);
}

TEST_CASE("case study: identical models give identical columns and disjoint cohorts") {
  const ExperimentConfig cfg = tiny_config();
  DistillSpec spec = cfg.train.distill;
  spec.strategy = Strategy::kLwcKd;
  std::vector<CaseStudy> studies;
  SweepHooks hooks;
  hooks.on_seed = [&](std::uint64_t seed, const SeedData& sd, const std::vector<RunResult>& results) {
    const RunResult& piw = results[2];
    studies.push_back(run_case_study(sd, cfg, seed, {{"a", &piw}, {"b", &piw}, {"finetune", &results[0]}}, piw, spec));
  };
  DataSource src(cfg);
  run_variants(src, cfg, main_variants(spec), hooks);
  REQUIRE(studies.size() == 2);
  for (const auto& cs : studies) {
    REQUIRE(cs.models.size() == 3);
    CHECK(cs.models[0].static_forward == cs.models[1].static_forward);
    CHECK(cs.models[0].dynamic_forward == cs.models[1].dynamic_forward);
    CHECK(cs.models[0].static_backward == cs.models[1].static_backward);
    CHECK(cs.models[0].dynamic_backward == cs.models[1].dynamic_backward);
    std::vector<std::size_t> s = cs.cohorts.static_users, d = cs.cohorts.dynamic_users;
    std::sort(s.begin(), s.end());
    std::sort(d.begin(), d.end());
    std::vector<std::size_t> both;
    std::set_intersection(s.begin(), s.end(), d.begin(), d.end(), std::back_inserter(both));
    CHECK(both.empty());
    CHECK(s.size() == d.size());
    CHECK(!s.empty());
    CHECK(cs.diag_raw_users.size() == cs.diagnostics.users.size());
    CHECK(cs.category_shift.size() == cs.iss.users.size());
    for (double x : cs.iss.scores) CHECK((x >= 0.0 && x <= 2.0 / 4.0 + 1e-12));
    for (double x : cs.category_shift) CHECK((x >= 0.0 && x <= std::sqrt(2.0) + 1e-12));
  }

  const auto dir = temp_dir("sailpiw_case_test");
  write_case_study_csv(dir / "case.csv", studies);
  const auto rows = read_csv(dir / "case.csv");
  CHECK(rows[0][0] == "seed");
  CHECK(rows[0].size() == 9);
  CHECK(rows.size() == 1 + 6 + 3);
  CHECK(rows[7][0] == "mean");
  write_shift_histogram_csv(dir / "hist.csv", studies, 4, 10);
  const auto hist = read_csv(dir / "hist.csv");
  CHECK(hist[0] == std::vector<std::string>{"metric", "bin_lo", "bin_hi", "count"});
  std::size_t iss_total = 0;
  for (const auto& r : hist)
    if (r[0] == "iss") iss_total += std::stoul(r[3]);
  CHECK(iss_total == studies[0].iss.scores.size() + studies[1].iss.scores.size());
  write_user_shift_csv(dir / "users.csv", studies);
  CHECK(read_csv(dir / "users.csv")[0] == std::vector<std::string>{"seed", "user_id", "shift_norm", "w_raw", "w"});
  std::filesystem::remove_all(dir);
}

TEST_CASE("synthetic suite reports one line per criterion") {
  ExperimentConfig cfg = tiny_config();
  cfg.seeds = {1};
  cfg.train.n_inc_train = 1;
  const SynthSuiteResult r = run_synth_suite(cfg);
  REQUIRE(r.seeds.size() == 1);
  CHECK(r.sweep.variants.size() == 7);
  CHECK(r.seeds[0].ablation.size() == 6);
  CHECK(r.seeds[0].zero_w_std >= 0.0);
  const auto crit = r.criteria();
  REQUIRE(crit.size() == 3);
  std::set<std::string> ids;
  for (const auto& c : crit) {
    ids.insert(c.id);
    CHECK(!c.detail.empty());
  }
  CHECK(ids.size() == 3);
  CHECK(synth_outcomes_json(r.seeds).size() == 1);
}
