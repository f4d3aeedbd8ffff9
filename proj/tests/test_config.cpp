#include <fstream>

#include "doctest.h"
#include "sailpiw/config.hpp"

using namespace sailpiw;

TEST_CASE("empty config text yields the defaults") {
  CHECK(parse_config("") == ExperimentConfig{});
  CHECK(parse_config("# only a comment\n\n") == ExperimentConfig{});
  const ExperimentConfig c;
  CHECK(c.train.lr == 5e-4);
  CHECK(c.train.batch_size == 64);
  CHECK(c.train.dropout == 0.2);
  CHECK(c.train.patience == 2);
  CHECK(c.train.d == 128);
  CHECK(c.train.layers == 2);
  CHECK(c.train.min_epochs_base == 10);
  CHECK(c.train.min_epochs_inc == 3);
  CHECK(c.train.max_epochs_inc == 10);
  CHECK(c.min_degree_user == 10);
  CHECK(c.min_degree_item == 10);
}

TEST_CASE("sections, dotted and bare keys") {
  const auto c = parse_config(
      "[train]\nlr = 0.01   # faster\nbatch_size = 32\n"
      "[distill]\nstrategy = sgct\nablation = no_wg\nlambda1 = 0.5\n"
      "run.seeds = 4, 5\n"
      "[data]\nsource = synth\n");
  CHECK(c.train.lr == 0.01);
  CHECK(c.train.batch_size == 32);
  CHECK(c.train.distill.strategy == Strategy::kSgct);
  CHECK(c.train.distill.ablation == Ablation::kNoWg);
  CHECK(c.train.distill.lambda1 == 0.5);
  CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(c.source == "synth");

  ExperimentConfig d;
  set_config_value(d, "dropout", "0.3");
  CHECK(d.train.dropout == 0.3);
  set_config_value(d, "synth.users", "50");
  CHECK(d.synth.users == 50);
  CHECK(get_config_value(d, "train.dropout") == "0.3");
}

TEST_CASE("command-line style override beats the file") {
  auto c = parse_config("[train]\nlr = 0.01\n");
  set_config_value(c, "train.lr", "0.002");
  CHECK(c.train.lr == 0.002);
}

TEST_CASE("unknown keys and bad values name the key") {
  try {
    parse_config("[train]\nlerning_rate = 0.1\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("lerning_rate") != std::string::npos);
  }
  try {
    parse_config("batch_size = many\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(e.key() == "train.batch_size");
    CHECK(std::string(e.what()).find("train.batch_size") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config("batch_size = -3\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("lr = 1e-3x\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("[nosuch]\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("strategy = magic\n"), ConfigError);
  CHECK_THROWS_AS(parse_config("just text\n"), ConfigError);
  // `clusters` lives in both [distill] and [synth].
  CHECK_THROWS_AS(parse_config("clusters = 3\n"), ConfigError);
  CHECK(parse_config("[synth]\nclusters = 3\n").synth.clusters == 3);
}

TEST_CASE("serialize round-trips exactly") {
  ExperimentConfig c = synth_preset();
  c.train.lr = 1.0 / 3.0;
  c.train.distill.tau = 0.07;
  c.train.distill.strategy = Strategy::kGraphSail;
  c.train.distill.ablation = Ablation::kHard;
  c.synth.duplicate_base = true;
  c.dataset_path = "data/log.csv";
  c.seeds = {7, 8, 9, 10};
  const auto text = serialize_config(c);
  CHECK(parse_config(text) == c);
  CHECK(serialize_config(parse_config(text)) == text);
  CHECK(parse_config(serialize_config(ExperimentConfig{})) == ExperimentConfig{});
}

TEST_CASE("load_config reads a file") {
  const auto path = std::filesystem::temp_directory_path() / "sailpiw_test_config.ini";
  {
    std::ofstream out(path);
    out << "[train]\npatience = 5\n";
  }
  CHECK(load_config(path).train.patience == 5);
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_config(path), ConfigError);
}

TEST_CASE("validation and help") {
  ExperimentConfig c;
  CHECK_THROWS_AS(validate_config(c), ConfigError);
  c.dataset_path = "x.csv";
  CHECK_NOTHROW(validate_config(c));
  CHECK_NOTHROW(validate_config(synth_preset()));
  c.base_frac = 1.5;
  CHECK_THROWS_AS(validate_config(c), ConfigError);

  const auto keys = config_keys();
  bool saw_lr = false;
  for (const auto& k : keys) {
    CHECK((k.provenance == "reference setting" || k.provenance == "engineering default"));
    if (k.section == "train" && k.name == "lr") {
      saw_lr = true;
      CHECK(k.default_value == "0.0005");
      CHECK(k.provenance == "reference setting");
    }
  }
  CHECK(saw_lr);
  const auto help = config_help();
  CHECK(help.find("lr = 0.0005") != std::string::npos);
  CHECK(help.find("[distill]") != std::string::npos);
}
