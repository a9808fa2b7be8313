#include <algorithm>
#include <cmath>

#include "soda/error.hpp"
#include "soda/kernels.hpp"
#include "soda/lm.hpp"
#include "soda/rng.hpp"

namespace soda {

std::string_view architecture_name(Architecture arch) {
  return arch == Architecture::Tabular ? "tabular" : "transformer";
}

Architecture parse_architecture(std::string_view name) {
  if (name == "tabular") return Architecture::Tabular;
  if (name == "transformer") return Architecture::TinyTransformer;
  fail(ErrorCode::InvalidConfig, "unknown architecture '" + std::string(name) +
                                     "' (expected tabular|transformer)");
}

std::vector<TensorSlot> transformer_layout(int vocab, const TransformerDims& dims) {
  const auto v = static_cast<std::size_t>(vocab);
  const auto d = static_cast<std::size_t>(dims.dim);
  const auto h = static_cast<std::size_t>(dims.hidden);
  const auto c = static_cast<std::size_t>(dims.context);
  std::vector<TensorSlot> slots;
  std::size_t offset = 0;
  auto add = [&](std::string name, std::size_t rows, std::size_t cols) {
    slots.push_back({std::move(name), offset, rows, cols});
    offset += rows * cols;
  };
  add("tok_emb", v, d);
  add("pos_emb", c, d);
  add("wq", d, d);
  add("wk", d, d);
  add("wv", d, d);
  add("wo", d, d);
  add("w1", h, d);
  add("b1", 1, h);
  add("w2", d, h);
  add("b2", 1, d);
  add("w_out", v, d);
  add("b_out", 1, v);
  return slots;
}

std::size_t transformer_param_count(int vocab, const TransformerDims& dims) {
  const auto slots = transformer_layout(vocab, dims);
  return slots.back().offset + slots.back().size();
}

namespace {

void check_vocab(int vocab) {
  if (vocab < 2) fail(ErrorCode::InvalidConfig, "vocabulary size must be >= 2");
}

void check_dims(const TransformerDims& dims) {
  if (dims.dim < 1 || dims.hidden < 1 || dims.context < 2) {
    fail(ErrorCode::InvalidConfig, "transformer dims must be positive (context >= 2)");
  }
}

}  // namespace

ModelParams ModelParams::tabular(int vocab, std::vector<double> logits) {
  check_vocab(vocab);
  if (logits.size() != static_cast<std::size_t>(vocab) * vocab) {
    fail(ErrorCode::InvalidInput, "tabular logits must have V*V entries");
  }
  ModelParams m;
  m.arch_ = Architecture::Tabular;
  m.vocab_ = vocab;
  m.values_ = std::move(logits);
  m.refresh_finite();
  return m;
}

ModelParams ModelParams::random_tabular(int vocab, double scale, std::uint64_t seed) {
  check_vocab(vocab);
  Rng rng(seed);
  std::vector<double> logits(static_cast<std::size_t>(vocab) * vocab);
  for (double& l : logits) l = scale * rng.normal();
  return tabular(vocab, std::move(logits));
}

ModelParams ModelParams::random_transformer(int vocab, const TransformerDims& dims,
                                            double output_scale, std::uint64_t seed) {
  check_vocab(vocab);
  check_dims(dims);
  ModelParams m;
  m.arch_ = Architecture::TinyTransformer;
  m.vocab_ = vocab;
  m.dims_ = dims;
  m.values_.assign(transformer_param_count(vocab, dims), 0.0);
  Rng rng(seed);
  for (const TensorSlot& slot : transformer_layout(vocab, dims)) {
    double stddev = 1.0 / std::sqrt(static_cast<double>(slot.cols));
    if (slot.name == "tok_emb" || slot.name == "pos_emb") stddev = 1.0;
    if (slot.name == "w_out") stddev *= output_scale;
    if (slot.rows == 1) stddev = 0.0;  // biases start at zero
    for (std::size_t i = 0; i < slot.size(); ++i) {
      m.values_[slot.offset + i] = stddev * rng.normal();
    }
  }
  m.refresh_finite();
  return m;
}

ModelParams ModelParams::from_parts(Architecture arch, int vocab,
                                    const TransformerDims& dims,
                                    std::vector<double> values, std::uint64_t version) {
  ModelParams m;
  if (arch == Architecture::Tabular) {
    m = tabular(vocab, std::move(values));
  } else {
    check_vocab(vocab);
    check_dims(dims);
    if (values.size() != transformer_param_count(vocab, dims)) {
      fail(ErrorCode::InvalidInput, "transformer parameter count does not match dims");
    }
    m.arch_ = arch;
    m.vocab_ = vocab;
    m.dims_ = dims;
    m.values_ = std::move(values);
    m.refresh_finite();
  }
  m.version_ = version;
  return m;
}

std::vector<TensorSlot> ModelParams::layout() const {
  if (arch_ == Architecture::Tabular) {
    const auto v = static_cast<std::size_t>(vocab_);
    return {TensorSlot{"logits", 0, v, v}};
  }
  return transformer_layout(vocab_, dims_);
}

std::span<const double> ModelParams::tensor(std::string_view name) const {
  for (const TensorSlot& slot : layout()) {
    if (slot.name == name) return {values_.data() + slot.offset, slot.size()};
  }
  fail(ErrorCode::InvalidInput, "no tensor named '" + std::string(name) + "'");
}

ModelParams ModelParams::with_values(std::vector<double> values) const {
  if (values.size() != values_.size()) {
    fail(ErrorCode::InvalidInput, "parameter vector size mismatch");
  }
  ModelParams m = *this;
  m.values_ = std::move(values);
  m.refresh_finite();
  return m;
}

bool ModelParams::operator==(const ModelParams& other) const {
  return arch_ == other.arch_ && vocab_ == other.vocab_ &&
         (arch_ == Architecture::Tabular || dims_ == other.dims_) &&
         values_ == other.values_;
}

void ModelParams::refresh_finite() {
  finite_ = std::all_of(values_.begin(), values_.end(),
                        [](double x) { return std::isfinite(x); });
}

double log_sum_exp(std::span<const double> logits) {
  const double m = kernels::max_value(logits);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double l : logits) s += std::exp(l - m);
  return m + std::log(s);
}

void log_softmax(std::span<const double> logits, std::span<double> out) {
  const double lse = log_sum_exp(logits);
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
}

void softmax(std::span<const double> logits, std::span<double> out) {
  const double m = kernels::max_value(logits);
  double s = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - m);
    s += out[i];
  }
  kernels::scale(1.0 / s, out.first(logits.size()));
}

}  // namespace soda
