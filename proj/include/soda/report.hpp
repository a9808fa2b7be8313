#pragma once

// Run reports (JSON), metric streams (JSONL) and the CSV tables built from
// them.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "soda/pipeline.hpp"
#include "soda/repr.hpp"

namespace soda {

/// One JSON object per metric row; byte-stable for identical rows.
std::string metrics_to_jsonl(const std::vector<MetricRow>& rows);
std::vector<MetricRow> metrics_from_jsonl(std::string_view text);

/// Everything except the metric stream, which lives in its own file.
nlohmann::json report_to_json(const RunReport& report);
/// Throws Migration if schema_version differs from RunReport::kSchemaVersion.
RunReport report_from_json(const nlohmann::json& j);

struct ComparisonRow {
  std::string method;
  std::uint64_t seed = 0;
  double judge_score_in_dist = 0.0;
  double judge_score_heldout = 0.0;
  double kl_in_dist = 0.0;
  double kl_heldout = 0.0;
  std::uint64_t student_generations = 0;
  double wall_clock_s = 0.0;
  std::uint64_t peak_mem_bytes = 0;
  std::uint64_t instability_events = 0;
  bool operator==(const ComparisonRow&) const = default;
};

/// "soda", "seqkd", "gad", or "ablation/<rejection source>".
std::string method_label(const RunReport& report);
ComparisonRow comparison_row(const RunReport& report);

/// Header plus one row per report. Throws InvalidInput if empty.
std::string emit_comparison_table(const std::vector<RunReport>& reports);
std::vector<ComparisonRow> parse_comparison_table(std::string_view csv);

/// run_id, method, seed, split, kl, judge_score, n_prompts.
std::string eval_rows_csv(const RunReport& report);

/// candidate_id, layer, cka
std::string repr_cka_csv(const std::vector<ReprReport>& reports);
/// candidate_id, entropy_nats, kurtosis_pearson
std::string repr_stats_csv(const std::vector<ReprReport>& reports);

/// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace soda
