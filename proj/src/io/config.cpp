#include <filesystem>
#include <limits>
#include <set>

#include "soda/config.hpp"
#include "soda/error.hpp"
#include "soda/io.hpp"

namespace soda {

using nlohmann::json;

namespace {

// Walks one JSON object, recording every problem with its field path
// instead of stopping at the first.
class Section {
 public:
  Section(const json* obj, std::string path, std::vector<std::string>& issues)
      : obj_(obj), path_(std::move(path)), issues_(issues) {}

  std::string path(const std::string& key) const {
    return path_.empty() ? key : path_ + "." + key;
  }

  const json* find(const std::string& key) {
    known_.insert(key);
    if (obj_ == nullptr) return nullptr;
    const auto it = obj_->find(key);
    return it == obj_->end() ? nullptr : &*it;
  }

  void read(const std::string& key, double& out) {
    if (const json* j = find(key)) {
      if (j->is_number()) out = j->get<double>();
      else mismatch(key, "a number");
    }
  }

  void read(const std::string& key, int& out) {
    if (const json* j = find(key)) {
      if (j->is_number_integer() && j->get<std::int64_t>() >= std::numeric_limits<int>::min() &&
          j->get<std::int64_t>() <= std::numeric_limits<int>::max()) {
        out = j->get<int>();
      } else {
        mismatch(key, "an integer");
      }
    }
  }

  void read(const std::string& key, std::size_t& out) {
    if (const json* j = find(key)) {
      if (j->is_number_unsigned() || (j->is_number_integer() && j->get<std::int64_t>() >= 0)) {
        out = j->get<std::size_t>();
      } else {
        mismatch(key, "a non-negative integer");
      }
    }
  }

  void read(const std::string& key, std::string& out) {
    if (const json* j = find(key)) {
      if (j->is_string()) out = j->get<std::string>();
      else mismatch(key, "a string");
    }
  }

  void read(const std::string& key, std::vector<std::uint64_t>& out) {
    if (const json* j = find(key)) {
      if (!j->is_array()) {
        mismatch(key, "an array of non-negative integers");
        return;
      }
      out.clear();
      for (const json& v : *j) {
        if (v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
          out.push_back(v.get<std::uint64_t>());
        } else {
          mismatch(key, "an array of non-negative integers");
          return;
        }
      }
    }
  }

  template <typename T>
  void require(const std::string& key, T& out) {
    known_.insert(key);
    if (obj_ == nullptr || !obj_->contains(key)) {
      issues_.push_back(path(key) + ": missing required field");
      return;
    }
    read(key, out);
  }

  Section child(const std::string& key) {
    const json* j = find(key);
    if (j != nullptr && !j->is_object()) {
      mismatch(key, "an object");
      j = nullptr;
    }
    return Section(j, path(key), issues_);
  }

  void check(bool ok, const std::string& key, const std::string& rule) {
    if (!ok) issues_.push_back(path(key) + ": must satisfy " + rule);
  }

  /// Reports keys that no reader asked for.
  void reject_unknown() const {
    if (obj_ == nullptr) return;
    for (const auto& [key, value] : obj_->items()) {
      if (!known_.contains(key)) issues_.push_back(path(key) + ": unknown field");
    }
  }

 private:
  void mismatch(const std::string& key, const char* expected) {
    issues_.push_back(path(key) + ": expected " + expected);
  }

  const json* obj_;
  std::string path_;
  std::vector<std::string>& issues_;
  std::set<std::string> known_;
};

}  // namespace

ExperimentSpec parse_config(const json& root) {
  std::vector<std::string> issues;
  if (!root.is_object()) {
    fail(ErrorCode::InvalidConfig, "config root must be a JSON object");
  }
  ExperimentSpec spec;
  Section top(&root, "", issues);

  std::string method, arch;
  int vocab = 0;
  std::size_t n_prompts = 0;
  top.require("method", method);
  top.require("vocab_size", vocab);
  top.require("architecture", arch);
  top.require("n_prompts", n_prompts);
  top.require("seeds", spec.seeds);
  top.read("n_heldout", spec.setup.n_heldout);
  top.read("prompt_len", spec.setup.prompt_len);
  top.read("output_dir", spec.output_dir);
  top.read("threads", spec.threads);

  if (!method.empty()) {
    if (method == "soda" || method == "seqkd" || method == "gad" || method == "ablation") {
      spec.method = parse_method(method);
    } else {
      top.check(false, "method", "one of soda, seqkd, gad, ablation");
    }
  }
  if (!arch.empty()) {
    if (arch == "tabular" || arch == "transformer") {
      spec.setup.architecture = parse_architecture(arch);
    } else {
      top.check(false, "architecture", "one of tabular, transformer");
    }
  }
  spec.setup.vocab_size = vocab;
  spec.setup.n_prompts = n_prompts;
  if (root.contains("vocab_size")) top.check(vocab >= 2, "vocab_size", "vocab_size >= 2");
  if (root.contains("n_prompts")) top.check(n_prompts >= 1, "n_prompts", "n_prompts >= 1");
  if (root.contains("seeds")) top.check(!spec.seeds.empty(), "seeds", "at least one seed");
  top.check(spec.setup.n_heldout >= 2, "n_heldout", "n_heldout >= 2");
  top.check(spec.setup.prompt_len >= 1, "prompt_len", "prompt_len >= 1");
  top.check(spec.threads >= 1, "threads", "threads >= 1");

  Section teacher = top.child("teacher");
  teacher.read("sharpness", spec.setup.teacher_sharpness);
  teacher.check(spec.setup.teacher_sharpness > 0.0, "sharpness", "sharpness > 0");
  teacher.reject_unknown();

  Section student = top.child("student");
  student.read("init_scale", spec.setup.student_scale);
  student.read("dim", spec.setup.dims.dim);
  student.read("hidden", spec.setup.dims.hidden);
  student.read("context", spec.setup.dims.context);
  student.read("output_scale", spec.setup.output_scale);
  student.check(spec.setup.student_scale >= 0.0, "init_scale", "init_scale >= 0");
  student.check(spec.setup.dims.dim >= 1, "dim", "dim >= 1");
  student.check(spec.setup.dims.hidden >= 1, "hidden", "hidden >= 1");
  student.check(spec.setup.dims.context >= 2, "context", "context >= 2");
  student.check(spec.setup.output_scale > 0.0, "output_scale", "output_scale > 0");
  student.reject_unknown();

  Section train = top.child("train");
  TrainConfig& t = spec.train;
  train.read("beta", t.beta);
  train.read("warmup_epochs", t.warmup_epochs);
  train.read("dpo_epochs", t.dpo_epochs);
  train.read("gad_epochs", t.gad_epochs);
  train.read("gad_warmup_epochs", t.gad_warmup_epochs);
  train.read("rollouts", t.rollouts);
  train.read("snapshot_temperature", t.snapshot_temperature);
  train.read("teacher_temperature", t.teacher_temperature);
  train.read("rollout_temperature", t.rollout_temperature);
  train.read("corrupted_temperature", t.corrupted_temperature);
  train.read("lr_sft", t.lr_sft);
  train.read("lr_dpo", t.lr_dpo);
  train.read("lr_gad", t.lr_gad);
  train.read("gad_lr_ratio", t.gad_lr_ratio);
  train.read("momentum", t.momentum);
  train.read("batch_size", t.batch_size);
  train.read("max_len", t.max_len);
  std::string source = std::string(source_name(t.rejection_source));
  train.read("rejection_source", source);
  if (source == "base_student" || source == "cross_student" || source == "corrupted") {
    t.rejection_source = parse_source(source);
  } else {
    train.check(false, "rejection_source", "one of base_student, cross_student, corrupted");
  }
  for (const std::string& p : t.problems()) issues.push_back("train." + p);
  train.reject_unknown();

  Section eval = top.child("eval");
  eval.read("mc_samples", spec.eval.mc_samples);
  eval.read("max_prompts", spec.eval.max_prompts);
  eval.check(spec.eval.mc_samples >= 1, "mc_samples", "mc_samples >= 1");
  eval.check(spec.eval.max_prompts >= 2, "max_prompts", "max_prompts >= 2");
  eval.reject_unknown();

  if (spec.setup.architecture == Architecture::TinyTransformer) {
    top.check(spec.setup.prompt_len + t.max_len <= spec.setup.dims.context, "student.context",
              "context >= prompt_len + train.max_len");
  }
  top.reject_unknown();

  if (!issues.empty()) {
    std::string msg = "invalid config: " + issues.front();
    for (std::size_t i = 1; i < issues.size(); ++i) msg += "; " + issues[i];
    fail(ErrorCode::InvalidConfig, msg);
  }
  return spec;
}

ExperimentSpec parse_config_text(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return parse_config(json::object());
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::InvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  return parse_config(root);
}

ExperimentSpec load_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorCode::ConfigNotFound, "config file not found: " + path.string());
  }
  return parse_config_text(read_file(path));
}

json train_config_to_json(const TrainConfig& t) {
  return json{{"beta", t.beta},
              {"warmup_epochs", t.warmup_epochs},
              {"dpo_epochs", t.dpo_epochs},
              {"gad_epochs", t.gad_epochs},
              {"gad_warmup_epochs", t.gad_warmup_epochs},
              {"rollouts", t.rollouts},
              {"snapshot_temperature", t.snapshot_temperature},
              {"teacher_temperature", t.teacher_temperature},
              {"rollout_temperature", t.rollout_temperature},
              {"corrupted_temperature", t.corrupted_temperature},
              {"lr_sft", t.lr_sft},
              {"lr_dpo", t.lr_dpo},
              {"lr_gad", t.lr_gad},
              {"gad_lr_ratio", t.gad_lr_ratio},
              {"momentum", t.momentum},
              {"batch_size", t.batch_size},
              {"max_len", t.max_len},
              {"rejection_source", source_name(t.rejection_source)}};
}

json spec_to_json(const ExperimentSpec& spec) {
  return json{
      {"method", method_name(spec.method)},
      {"vocab_size", spec.setup.vocab_size},
      {"architecture", architecture_name(spec.setup.architecture)},
      {"n_prompts", spec.setup.n_prompts},
      {"seeds", spec.seeds},
      {"n_heldout", spec.setup.n_heldout},
      {"prompt_len", spec.setup.prompt_len},
      {"output_dir", spec.output_dir},
      {"threads", spec.threads},
      {"teacher", {{"sharpness", spec.setup.teacher_sharpness}}},
      {"student",
       {{"init_scale", spec.setup.student_scale},
        {"dim", spec.setup.dims.dim},
        {"hidden", spec.setup.dims.hidden},
        {"context", spec.setup.dims.context},
        {"output_scale", spec.setup.output_scale}}},
      {"train", train_config_to_json(spec.train)},
      {"eval", {{"mc_samples", spec.eval.mc_samples}, {"max_prompts", spec.eval.max_prompts}}},
  };
}

}  // namespace soda
