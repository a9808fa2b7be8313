#pragma once

// Tiny autoregressive language models over an integer vocabulary.
//
// Two architectures share one flat parameter vector representation:
//   Tabular          a V x V bigram logits table (row = previous token).
//   TinyTransformer  token + position embeddings, one causal single-head
//                    attention block with a tanh MLP, and an output head.
//
// The last vocabulary id (V - 1) is the end-of-sequence token. A response
// either ends with EOS or is truncated at max_len; log-probabilities include
// the EOS step when it is present.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace soda {

using Token = int;
using Tokens = std::vector<Token>;

struct Vocab {
  int size = 0;

  int eos() const { return size - 1; }
  bool contains(Token t) const { return t >= 0 && t < size; }
};

enum class Architecture { Tabular, TinyTransformer };

std::string_view architecture_name(Architecture arch);
Architecture parse_architecture(std::string_view name);

struct TransformerDims {
  int dim = 16;
  int hidden = 32;
  int context = 16;  // maximum number of positions

  bool operator==(const TransformerDims&) const = default;
};

/// Named view into the flat parameter vector (row-major rows x cols).
struct TensorSlot {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
};

class GradientDescent;

/// Parameters of a tiny LM. Value type: copies are independent snapshots.
/// Only the optimizer mutates parameters in place; every in-place update
/// bumps the version counter, so a version of 0 identifies an untouched
/// base model.
class ModelParams {
 public:
  ModelParams() = default;

  static ModelParams tabular(int vocab, std::vector<double> logits);
  /// Logits drawn i.i.d. from N(0, scale^2).
  static ModelParams random_tabular(int vocab, double scale, std::uint64_t seed);
  /// Embeddings ~ N(0, 1); square weights ~ N(0, 1/dim); output head scaled
  /// by `output_scale`.
  static ModelParams random_transformer(int vocab, const TransformerDims& dims,
                                        double output_scale, std::uint64_t seed);
  /// Reassembles a model from serialized parts; validates sizes.
  static ModelParams from_parts(Architecture arch, int vocab, const TransformerDims& dims,
                                std::vector<double> values, std::uint64_t version);

  Architecture architecture() const { return arch_; }
  int vocab_size() const { return vocab_; }
  Vocab vocab() const { return Vocab{vocab_}; }
  Token eos() const { return vocab_ - 1; }
  const TransformerDims& dims() const { return dims_; }
  std::size_t size() const { return values_.size(); }
  std::span<const double> values() const { return values_; }
  std::uint64_t version() const { return version_; }
  bool finite() const { return finite_; }

  std::vector<TensorSlot> layout() const;
  std::span<const double> tensor(std::string_view name) const;

  /// Tabular only: next-token logits after `prev`.
  std::span<const double> tabular_row(Token prev) const {
    return {values_.data() + static_cast<std::size_t>(prev) * vocab_,
            static_cast<std::size_t>(vocab_)};
  }

  /// Same architecture and version, new values (sizes must match).
  ModelParams with_values(std::vector<double> values) const;

  bool operator==(const ModelParams& other) const;

 private:
  friend class GradientDescent;

  void refresh_finite();

  Architecture arch_ = Architecture::Tabular;
  int vocab_ = 0;
  TransformerDims dims_{};
  std::vector<double> values_;
  std::uint64_t version_ = 0;
  bool finite_ = true;
};

std::size_t transformer_param_count(int vocab, const TransformerDims& dims);
std::vector<TensorSlot> transformer_layout(int vocab, const TransformerDims& dims);

/// Prompt plus response; loss_mask covers the concatenated sequence and is
/// true exactly on response positions.
struct SequenceExample {
  Tokens prompt;
  Tokens response;
  std::vector<bool> loss_mask;

  static SequenceExample make(Tokens prompt, Tokens response);

  Tokens tokens() const;
  /// Throws InvalidToken / InvalidInput on contract violations.
  void validate(const Vocab& vocab) const;

  bool operator==(const SequenceExample&) const = default;
};

/// n x d row-major matrix of hidden states (one row per prompt).
struct HiddenStateMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols, cols};
  }
};

double log_sum_exp(std::span<const double> logits);
void log_softmax(std::span<const double> logits, std::span<double> out);
void softmax(std::span<const double> logits, std::span<double> out);

/// Sum over response positions of log q(y_t | x, y_<t).
double logprob_sequence(const ModelParams& params, const SequenceExample& ex);

/// log q(. | context) for the token following `context`.
std::vector<double> next_token_log_probs(const ModelParams& params,
                                         std::span<const Token> context);

/// Samples up to max_len tokens at the given temperature; stops after EOS.
/// Deterministic in (params, prompt, temperature, max_len, seed).
Tokens sample_response(const ModelParams& params, std::span<const Token> prompt,
                       double temperature, int max_len, std::uint64_t seed);

Tokens greedy_response(const ModelParams& params, std::span<const Token> prompt,
                       int max_len);

/// Number of layers exposed to extract_hidden_states (embedding layer = 0,
/// final layer = count - 1).
int hidden_layer_count(const ModelParams& params);

/// Last-token hidden states. Prompts are left-padded so that every last
/// token sits at the same position.
HiddenStateMatrix extract_hidden_states(const ModelParams& params,
                                        const std::vector<Tokens>& prompts, int layer);

/// Visits every response in the length-capped space (EOS-terminated with
/// length <= max_len, or exactly max_len tokens without EOS) with its
/// log-probability under `params`.
template <typename Visitor>
void enumerate_responses(const ModelParams& params, std::span<const Token> prompt,
                         int max_len, Visitor&& visit);

}  // namespace soda

#include "soda/detail/enumerate.hpp"
