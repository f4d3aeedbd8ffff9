#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sailpiw/experiment.hpp"

namespace sailpiw {

// Summary of a sweep: per-variant block means, average and improvement over
// `baseline` (omitted when empty or absent). Holds no wall-clock values, so
// identical runs serialize identically.
nlohmann::json sweep_summary(const SweepResult& sweep, const std::string& baseline);

nlohmann::json case_study_json(const std::vector<CaseStudy>& studies);
nlohmann::json synth_outcomes_json(const std::vector<SynthSeedOutcome>& outcomes);

// CSV with columns `key_header,inc1..incN,avg[,imp_percent]`. `labels`
// replaces variant names in the first column when non-empty.
void write_recall_table(const std::filesystem::path& path, const SweepResult& sweep, const std::string& key_header,
                        const std::vector<std::string>& labels, const std::optional<std::string>& baseline);

void write_case_study_csv(const std::filesystem::path& path, const std::vector<CaseStudy>& studies);
void write_shift_histogram_csv(const std::filesystem::path& path, const std::vector<CaseStudy>& studies,
                               std::size_t clusters, std::size_t bins = 20);
void write_user_shift_csv(const std::filesystem::path& path, const std::vector<CaseStudy>& studies);

// One JSONL file per variant and seed under `dir`.
void write_ledgers(const std::filesystem::path& dir, const SweepResult& sweep);

void write_report_schema(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);

}  // namespace sailpiw
