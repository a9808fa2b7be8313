#include <charconv>
#include <sstream>

#include "soda/config.hpp"
#include "soda/error.hpp"
#include "soda/report.hpp"

namespace soda {

using nlohmann::json;

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

namespace {

json optional_number(const std::optional<double>& v) {
  return v ? json(*v) : json(nullptr);
}

std::optional<double> optional_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig t;
  t.beta = j.value("beta", t.beta);
  t.warmup_epochs = j.value("warmup_epochs", t.warmup_epochs);
  t.dpo_epochs = j.value("dpo_epochs", t.dpo_epochs);
  t.gad_epochs = j.value("gad_epochs", t.gad_epochs);
  t.gad_warmup_epochs = j.value("gad_warmup_epochs", t.gad_warmup_epochs);
  t.rollouts = j.value("rollouts", t.rollouts);
  t.snapshot_temperature = j.value("snapshot_temperature", t.snapshot_temperature);
  t.teacher_temperature = j.value("teacher_temperature", t.teacher_temperature);
  t.rollout_temperature = j.value("rollout_temperature", t.rollout_temperature);
  t.corrupted_temperature = j.value("corrupted_temperature", t.corrupted_temperature);
  t.lr_sft = j.value("lr_sft", t.lr_sft);
  t.lr_dpo = j.value("lr_dpo", t.lr_dpo);
  t.lr_gad = j.value("lr_gad", t.lr_gad);
  t.gad_lr_ratio = j.value("gad_lr_ratio", t.gad_lr_ratio);
  t.momentum = j.value("momentum", t.momentum);
  t.batch_size = j.value("batch_size", t.batch_size);
  t.max_len = j.value("max_len", t.max_len);
  t.rejection_source = parse_source(j.value("rejection_source", std::string("base_student")));
  return t;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.emplace_back(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& text) {
  T value{};
  const auto res = std::from_chars(text.data(), text.data() + text.size(), value);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    fail(ErrorCode::InvalidInput, "bad numeric field '" + text + "'");
  }
  return value;
}

constexpr std::string_view kComparisonHeader =
    "method,seed,judge_score_in_dist,judge_score_heldout,kl_in_dist,kl_heldout,"
    "student_generations,wall_clock_s,peak_mem_bytes,instability_events";

}  // namespace

std::string metrics_to_jsonl(const std::vector<MetricRow>& rows) {
  std::string out;
  for (const MetricRow& r : rows) {
    const json j = {{"stage", r.stage},       {"epoch", r.epoch},
                    {"step", r.step},         {"loss", r.loss},
                    {"margin", optional_number(r.margin)},
                    {"weight", optional_number(r.weight)},
                    {"grad_norm", r.grad_norm}, {"lr", r.lr}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<MetricRow> metrics_from_jsonl(std::string_view text) {
  std::vector<MetricRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    rows.push_back({j.at("stage").get<std::string>(), j.at("epoch").get<int>(),
                    j.at("step").get<std::size_t>(), j.at("loss").get<double>(),
                    optional_from(j, "margin"), optional_from(j, "weight"),
                    j.at("grad_norm").get<double>(), j.at("lr").get<double>()});
  }
  return rows;
}

json report_to_json(const RunReport& r) {
  json evals = json::object();
  for (const auto& [split, e] : r.evals) {
    evals[split] = {{"kl_to_teacher", e.kl_to_teacher},
                    {"judge_score", e.judge_score},
                    {"n_prompts", e.n_prompts},
                    {"seeds", e.seeds}};
  }
  return json{{"schema_version", RunReport::kSchemaVersion},
              {"method", r.method},
              {"rejection_source", r.rejection_source},
              {"seed", r.seed},
              {"config", train_config_to_json(r.config)},
              {"costs",
               {{"teacher_queries", r.costs.teacher_queries},
                {"student_generations", r.costs.student_generations},
                {"snapshot_generations", r.costs.snapshot_generations},
                {"discriminator_params_active", r.costs.discriminator_params_active},
                {"wall_clock_seconds", r.costs.wall_clock_seconds}}},
              {"instability_events", r.instability_events},
              {"evals", evals},
              {"peak_mem_bytes", r.peak_mem_bytes},
              {"notes", r.notes}};
}

RunReport report_from_json(const json& j) {
  const int version = j.value("schema_version", 0);
  if (version != RunReport::kSchemaVersion) {
    fail(ErrorCode::Migration, "report schema_version " + std::to_string(version) +
                                   " does not match " +
                                   std::to_string(RunReport::kSchemaVersion));
  }
  try {
    RunReport r;
    r.method = j.at("method").get<std::string>();
    r.rejection_source = j.value("rejection_source", std::string());
    r.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("config")) r.config = train_config_from_json(j.at("config"));
    const json& c = j.at("costs");
    r.costs.teacher_queries = c.at("teacher_queries").get<std::uint64_t>();
    r.costs.student_generations = c.at("student_generations").get<std::uint64_t>();
    r.costs.snapshot_generations = c.value("snapshot_generations", std::uint64_t{0});
    r.costs.discriminator_params_active = c.value("discriminator_params_active", false);
    r.costs.wall_clock_seconds = c.at("wall_clock_seconds").get<double>();
    r.instability_events = j.at("instability_events").get<std::size_t>();
    for (const auto& [split, e] : j.at("evals").items()) {
      EvalResult er;
      er.kl_to_teacher = e.at("kl_to_teacher").get<double>();
      er.judge_score = e.at("judge_score").get<double>();
      er.n_prompts = e.at("n_prompts").get<std::size_t>();
      er.seeds = e.value("seeds", std::vector<std::uint64_t>{});
      r.evals.emplace(split, std::move(er));
    }
    r.peak_mem_bytes = j.value("peak_mem_bytes", std::uint64_t{0});
    r.notes = j.value("notes", std::vector<std::string>{});
    return r;
  } catch (const json::exception& e) {
    fail(ErrorCode::InvalidInput, std::string("malformed report: ") + e.what());
  }
}

std::string method_label(const RunReport& report) {
  if (report.method == "ablation") return "ablation/" + report.rejection_source;
  return report.method;
}

ComparisonRow comparison_row(const RunReport& r) {
  ComparisonRow row;
  row.method = method_label(r);
  row.seed = r.seed;
  if (const auto it = r.evals.find("in_dist"); it != r.evals.end()) {
    row.judge_score_in_dist = it->second.judge_score;
    row.kl_in_dist = it->second.kl_to_teacher;
  }
  if (const auto it = r.evals.find("heldout"); it != r.evals.end()) {
    row.judge_score_heldout = it->second.judge_score;
    row.kl_heldout = it->second.kl_to_teacher;
  }
  row.student_generations = r.costs.student_generations;
  row.wall_clock_s = r.costs.wall_clock_seconds;
  row.peak_mem_bytes = r.peak_mem_bytes;
  row.instability_events = r.instability_events;
  return row;
}

std::string emit_comparison_table(const std::vector<RunReport>& reports) {
  if (reports.empty()) fail(ErrorCode::InvalidInput, "comparison table needs at least one report");
  std::string out(kComparisonHeader);
  out += '\n';
  for (const RunReport& r : reports) {
    const ComparisonRow row = comparison_row(r);
    out += row.method + ',' + std::to_string(row.seed) + ',' +
           format_double(row.judge_score_in_dist) + ',' + format_double(row.judge_score_heldout) +
           ',' + format_double(row.kl_in_dist) + ',' + format_double(row.kl_heldout) + ',' +
           std::to_string(row.student_generations) + ',' + format_double(row.wall_clock_s) + ',' +
           std::to_string(row.peak_mem_bytes) + ',' + std::to_string(row.instability_events) +
           '\n';
  }
  return out;
}

std::vector<ComparisonRow> parse_comparison_table(std::string_view csv) {
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line) || line != kComparisonHeader) {
    fail(ErrorCode::Migration, "comparison table header does not match this version");
  }
  std::vector<ComparisonRow> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != 10) fail(ErrorCode::InvalidInput, "comparison row has " + std::to_string(f.size()) + " fields");
    ComparisonRow row;
    row.method = f[0];
    row.seed = parse_number<std::uint64_t>(f[1]);
    row.judge_score_in_dist = parse_number<double>(f[2]);
    row.judge_score_heldout = parse_number<double>(f[3]);
    row.kl_in_dist = parse_number<double>(f[4]);
    row.kl_heldout = parse_number<double>(f[5]);
    row.student_generations = parse_number<std::uint64_t>(f[6]);
    row.wall_clock_s = parse_number<double>(f[7]);
    row.peak_mem_bytes = parse_number<std::uint64_t>(f[8]);
    row.instability_events = parse_number<std::uint64_t>(f[9]);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string eval_rows_csv(const RunReport& report) {
  std::string out = "run_id,method,seed,split,kl,judge_score,n_prompts\n";
  const std::string label = method_label(report);
  for (const auto& [split, e] : report.evals) {
    out += label + "_s" + std::to_string(report.seed) + "_" + split + ',' + label + ',' +
           std::to_string(report.seed) + ',' + split + ',' + format_double(e.kl_to_teacher) + ',' +
           format_double(e.judge_score) + ',' + std::to_string(e.n_prompts) + '\n';
  }
  return out;
}

std::string repr_cka_csv(const std::vector<ReprReport>& reports) {
  std::string out = "candidate_id,layer,cka\n";
  for (const ReprReport& r : reports) {
    for (std::size_t l = 0; l < r.cka_to_base.size(); ++l) {
      out += r.candidate_id + ',' + std::to_string(l) + ',' + format_double(r.cka_to_base[l]) + '\n';
    }
  }
  return out;
}

std::string repr_stats_csv(const std::vector<ReprReport>& reports) {
  std::string out = "candidate_id,entropy_nats,kurtosis_pearson\n";
  for (const ReprReport& r : reports) {
    out += r.candidate_id + ',' + format_double(r.last_layer_entropy) + ',' +
           format_double(r.last_layer_kurtosis) + '\n';
  }
  return out;
}

}  // namespace soda
