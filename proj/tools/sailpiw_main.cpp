#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sailpiw/checkpoint.hpp"
#include "sailpiw/common.hpp"
#include "sailpiw/config.hpp"
#include "sailpiw/experiment.hpp"
#include "sailpiw/gradcheck.hpp"
#include "sailpiw/report.hpp"

namespace fs = std::filesystem;
using namespace sailpiw;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::uint64_t> seeds;
  std::string strategy;
  std::string ablation;
  std::string out;
  std::vector<std::string> sets;
  bool checkpoints = false;
  bool quiet = false;
};

// Exit codes: 0 success, 1 runtime failure, 2 bad configuration or usage,
// 3 completed but an acceptance check failed.
constexpr int kFailure = 1;
constexpr int kUsage = 2;
constexpr int kCheckFailed = 3;

void add_common(CLI::App* cmd, Options& o) {
  cmd->add_option("--config", o.config_path, "config file (key = value, [section] headers, # comments)");
  cmd->add_option("--seed", o.seeds, "seed; repeat to run several (overrides run.seeds)");
  cmd->add_option("--strategy", o.strategy, "graphsail | sgct | lwckd | none");
  cmd->add_option("--ablation", o.ablation, "full | no_wg | no_cluster | no_trans | hard | no_piw");
  cmd->add_option("--out", o.out, "output directory (overrides run.out)");
  cmd->add_option("--set", o.sets, "override any key, e.g. --set train.lr=0.001");
  cmd->add_flag("--checkpoints", o.checkpoints, "save training progress at every epoch under <out>/checkpoints");
  cmd->add_flag("-q,--quiet", o.quiet, "only warnings and errors on stderr");
}

ExperimentConfig resolve(const Options& o, const ExperimentConfig& base, bool needs_data) {
  ExperimentConfig c = o.config_path.empty() ? base : load_config(o.config_path, base);
  for (const auto& kv : o.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError(kv, "--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!o.strategy.empty()) set_config_value(c, "distill.strategy", o.strategy);
  if (!o.ablation.empty()) set_config_value(c, "distill.ablation", o.ablation);
  if (!o.out.empty()) set_config_value(c, "run.out", o.out);
  if (!o.seeds.empty()) c.seeds = o.seeds;
  if (needs_data) validate_config(c);
  return c;
}

SweepHooks checkpoint_hooks(const Options& o, const ExperimentConfig& c) {
  SweepHooks h;
  if (!o.checkpoints) return h;
  const fs::path dir = fs::path(c.out_dir) / "checkpoints";
  fs::create_directories(dir);
  h.train_hooks = [dir](const std::string& variant, std::uint64_t seed) {
    const std::string stem = variant + "_seed" + std::to_string(seed);
    TrainHooks t;
    t.on_epoch_end = [dir, stem](const RunProgress& p) { save_progress(dir / (stem + ".progress"), p); };
    t.on_abort = [dir, stem](const RunProgress& p) {
      save_model(dir / (stem + ".last_good.model"), p.state, p.block, p.seed);
    };
    return t;
  };
  return h;
}

void write_common(const ExperimentConfig& c, const std::string& command, nlohmann::json& summary) {
  const fs::path out = c.out_dir;
  summary["command"] = command;
  summary["config"] = serialize_config(c);
  summary["eval_k"] = c.train.eval_k;
  write_json(out / "summary.json", summary);
  write_text(out / "config.resolved.ini", serialize_config(c));
  write_report_schema(out / "REPORT_SCHEMA.md");
  std::cout << "wrote " << (out / "summary.json").string() << '\n';
}

int cmd_run(const ExperimentConfig& c, const Options& o) {
  DataSource src(c);
  const SweepResult sweep = run_variants(src, c, main_variants(c.train.distill), checkpoint_hooks(o, c));
  write_recall_table(fs::path(c.out_dir) / "table_main.csv", sweep, "method", {}, std::string("finetune"));
  write_ledgers(fs::path(c.out_dir) / "ledgers", sweep);
  nlohmann::json summary = sweep_summary(sweep, "finetune");
  write_common(c, "run", summary);
  return 0;
}

int cmd_ablate(const ExperimentConfig& c, const Options& o) {
  DataSource src(c);
  const SweepResult sweep = run_variants(src, c, ablation_variants(c.train.distill), checkpoint_hooks(o, c));
  write_recall_table(fs::path(c.out_dir) / "table_ablation.csv", sweep, "variant", {}, std::string("no_piw"));
  write_ledgers(fs::path(c.out_dir) / "ledgers", sweep);
  nlohmann::json summary = sweep_summary(sweep, "no_piw");
  write_common(c, "ablate", summary);
  return 0;
}

int cmd_ksweep(const ExperimentConfig& c, const Options& o) {
  DataSource src(c);
  const SweepResult sweep = run_variants(src, c, ksweep_variants(c.train.distill, c.ksweep), checkpoint_hooks(o, c));
  std::vector<std::string> labels;
  for (std::size_t k : c.ksweep) labels.push_back(std::to_string(k));
  write_recall_table(fs::path(c.out_dir) / "table_ksweep.csv", sweep, "k", labels, std::nullopt);
  write_ledgers(fs::path(c.out_dir) / "ledgers", sweep);
  nlohmann::json summary = sweep_summary(sweep, "");
  write_common(c, "ksweep", summary);
  return 0;
}

void write_case_reports(const ExperimentConfig& c, const std::vector<CaseStudy>& studies) {
  const fs::path out = c.out_dir;
  write_case_study_csv(out / "case_study.csv", studies);
  write_shift_histogram_csv(out / "shift_histogram.csv", studies, c.train.distill.clusters);
  write_user_shift_csv(out / "user_shift.csv", studies);
}

int cmd_casestudy(const ExperimentConfig& c, const Options& o) {
  const auto variants = main_variants(c.train.distill);
  if (variants.size() < 3)
    throw ConfigError("distill.strategy", "the case study needs a strategy and a PIW ablation other than no_piw");
  std::vector<CaseStudy> studies;
  SweepHooks hooks = checkpoint_hooks(o, c);
  hooks.on_seed = [&](std::uint64_t seed, const SeedData& sd, const std::vector<RunResult>& r) {
    studies.push_back(run_case_study(sd, c, seed,
                                     {{variants[0].name, &r[0]}, {variants[1].name, &r[1]}, {variants[2].name, &r[2]}},
                                     r[2], variants[2].spec));
  };
  DataSource src(c);
  const SweepResult sweep = run_variants(src, c, variants, hooks);
  write_recall_table(fs::path(c.out_dir) / "table_main.csv", sweep, "method", {}, std::string("finetune"));
  write_ledgers(fs::path(c.out_dir) / "ledgers", sweep);
  write_case_reports(c, studies);
  nlohmann::json summary = sweep_summary(sweep, "finetune");
  summary["case_study"] = case_study_json(studies);
  write_common(c, "casestudy", summary);
  return 0;
}

int cmd_synth(ExperimentConfig c, const Options& o) {
  c.source = "synth";
  const SynthSuiteResult r = run_synth_suite(c, checkpoint_hooks(o, c));
  const fs::path out = c.out_dir;
  write_recall_table(out / "table_ablation.csv", r.sweep, "variant", {}, std::string("no_piw"));
  write_ledgers(out / "ledgers", r.sweep);
  write_case_reports(c, r.case_studies);
  nlohmann::json summary = sweep_summary(r.sweep, "no_piw");
  summary["case_study"] = case_study_json(r.case_studies);
  summary["synth"] = synth_outcomes_json(r.seeds);
  write_common(c, "synth", summary);

  const auto criteria = r.criteria();
  nlohmann::json acc = {{"seconds", r.seconds}, {"seeds", synth_outcomes_json(r.seeds)}};
  bool all = true;
  for (const auto& k : criteria) {
    acc["criteria"].push_back({{"id", k.id}, {"title", k.title}, {"pass", k.pass}, {"detail", k.detail}});
    std::cout << "criterion " << k.id << " (" << k.title << "): " << (k.pass ? "PASS" : "FAIL") << " - " << k.detail
              << '\n';
    all = all && k.pass;
  }
  write_json(out / "synth_acceptance.json", acc);
  return all ? 0 : kCheckFailed;
}

int cmd_check_grads(const ExperimentConfig& c) {
  const auto entries = gradient_suite(c.seeds);
  nlohmann::json j = nlohmann::json::array();
  double worst = 0.0;
  for (const auto& e : entries) {
    std::printf("%-18s seed %-4llu max rel error %.3e  (%s, %zu probes)\n", e.path.c_str(),
                static_cast<unsigned long long>(e.seed), e.result.max_rel_error, e.result.worst_param.c_str(),
                e.result.probes);
    worst = std::max(worst, e.result.max_rel_error);
    j.push_back({{"path", e.path},
                 {"seed", e.seed},
                 {"max_rel_error", e.result.max_rel_error},
                 {"worst_param", e.result.worst_param},
                 {"probes", e.result.probes}});
  }
  write_json(fs::path(c.out_dir) / "gradcheck.json", j);
  std::printf("worst %.3e (tolerance 1e-4)\n", worst);
  return worst < 1e-4 ? 0 : kCheckFailed;
}

void print_error(const std::string& type, const std::string& message, const std::string& key = "") {
  nlohmann::json j = {{"error", {{"type", type}, {"message", message}}}};
  if (!key.empty()) j["error"]["key"] = key;
  std::cerr << j.dump() << '\n';
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental graph recommender training with personalized imitation weights"};
  app.require_subcommand(1);
  app.footer("\n" + config_help());
  Options o;
  struct Command {
    const char* name;
    const char* help;
  };
  const std::vector<Command> commands = {
      {"run", "fine-tune, distillation and distillation with personalized weights over the seed list"},
      {"ablate", "the six PIW ablations of the configured strategy"},
      {"ksweep", "the PIW model for each cluster count in run.ksweep"},
      {"casestudy", "static/dynamic cohort recall of the three main models"},
      {"synth", "synthetic-drift acceptance suite (starts from the synthetic preset)"},
      {"check-grads", "finite-difference gradient suite on a small random instance"},
  };
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) {
    subs.push_back(app.add_subcommand(c.name, c.help));
    add_common(subs.back(), o);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage", e.what());
    return kUsage;
  }

  std::string command;
  for (auto* s : subs)
    if (s->parsed()) command = s->get_name();
  set_log_level(o.quiet ? LogLevel::kWarn : LogLevel::kInfo);
  try {
    const ExperimentConfig c = resolve(o, command == "synth" ? synth_preset() : ExperimentConfig{}, command != "check-grads");
    fs::create_directories(c.out_dir);
    if (command == "run") return cmd_run(c, o);
    if (command == "ablate") return cmd_ablate(c, o);
    if (command == "ksweep") return cmd_ksweep(c, o);
    if (command == "casestudy") return cmd_casestudy(c, o);
    if (command == "synth") return cmd_synth(c, o);
    return cmd_check_grads(c);
  } catch (const ConfigError& e) {
    print_error("config", e.what(), e.key());
    return kUsage;
  } catch (const ParseError& e) {
    print_error("data_parse", e.what());
    return kFailure;
  } catch (const DataError& e) {
    print_error("data", e.what());
    return kFailure;
  } catch (const NumericError& e) {
    print_error("numeric", e.what());
    return kFailure;
  } catch (const CheckpointError& e) {
    print_error("checkpoint", e.what());
    return kFailure;
  } catch (const std::exception& e) {
    print_error("runtime", std::string("while running '") + command + "': " + e.what());
    return kFailure;
  }
}
