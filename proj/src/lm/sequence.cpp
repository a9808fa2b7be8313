#include <algorithm>
#include <cmath>

#include "soda/error.hpp"
#include "soda/forward.hpp"
#include "soda/lm.hpp"
#include "soda/rng.hpp"

namespace soda {

SequenceExample SequenceExample::make(Tokens prompt, Tokens response) {
  SequenceExample ex;
  ex.loss_mask.assign(prompt.size(), false);
  ex.loss_mask.resize(prompt.size() + response.size(), true);
  ex.prompt = std::move(prompt);
  ex.response = std::move(response);
  return ex;
}

Tokens SequenceExample::tokens() const {
  Tokens all = prompt;
  all.insert(all.end(), response.begin(), response.end());
  return all;
}

void SequenceExample::validate(const Vocab& vocab) const {
  if (prompt.empty()) fail(ErrorCode::InvalidInput, "prompt must be non-empty");
  if (response.empty()) fail(ErrorCode::InvalidInput, "response must be non-empty");
  if (loss_mask.size() != prompt.size() + response.size()) {
    fail(ErrorCode::InvalidInput, "loss mask length does not match prompt + response");
  }
  for (std::size_t i = 0; i < loss_mask.size(); ++i) {
    if (loss_mask[i] != (i >= prompt.size())) {
      fail(ErrorCode::InvalidInput, "loss mask must be true exactly on response tokens");
    }
  }
  for (Token t : prompt) {
    if (!vocab.contains(t)) {
      fail(ErrorCode::InvalidToken, "prompt token " + std::to_string(t) + " out of range");
    }
  }
  for (std::size_t i = 0; i < response.size(); ++i) {
    if (!vocab.contains(response[i])) {
      fail(ErrorCode::InvalidToken,
           "response token " + std::to_string(response[i]) + " out of range");
    }
    if (response[i] == vocab.eos() && i + 1 != response.size()) {
      fail(ErrorCode::InvalidInput, "EOS may only terminate a response");
    }
  }
}

double logprob_sequence(const ModelParams& params, const SequenceExample& ex) {
  ex.validate(params.vocab());
  const Tokens all = ex.tokens();
  // The final token is never an input.
  const SequenceForward fwd(params, std::span<const Token>(all).first(all.size() - 1));
  double total = 0.0;
  for (std::size_t i = ex.prompt.size(); i < all.size(); ++i) {
    const std::span<const double> logits = fwd.logits(i - 1);
    total += logits[static_cast<std::size_t>(all[i])] - log_sum_exp(logits);
  }
  return total;
}

std::vector<double> next_token_log_probs(const ModelParams& params,
                                         std::span<const Token> context) {
  if (context.empty()) fail(ErrorCode::InvalidInput, "context must be non-empty");
  std::vector<double> out(static_cast<std::size_t>(params.vocab_size()));
  if (params.architecture() == Architecture::Tabular) {
    if (!params.finite()) fail(ErrorCode::NumericalError, "model parameters are not finite");
    if (!params.vocab().contains(context.back())) {
      fail(ErrorCode::InvalidToken, "context token out of range");
    }
    log_softmax(params.tabular_row(context.back()), out);
    return out;
  }
  const SequenceForward fwd(params, context);
  log_softmax(fwd.logits(context.size() - 1), out);
  return out;
}

namespace {

Token draw(std::span<const double> logits, double temperature, Rng& rng,
           std::vector<double>& scratch) {
  scratch.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) scratch[i] = logits[i] / temperature;
  softmax(scratch, scratch);
  const double u = rng.uniform();
  double cumulative = 0.0;
  Token last_nonzero = 0;
  for (std::size_t i = 0; i < scratch.size(); ++i) {
    if (scratch[i] > 0.0) last_nonzero = static_cast<Token>(i);
    cumulative += scratch[i];
    if (u < cumulative) return static_cast<Token>(i);
  }
  return last_nonzero;  // u landed in the rounding gap above the final cumulative sum
}

}  // namespace

Tokens sample_response(const ModelParams& params, std::span<const Token> prompt,
                       double temperature, int max_len, std::uint64_t seed) {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) {
    fail(ErrorCode::InvalidConfig, "sampling temperature must be > 0");
  }
  if (max_len < 1) fail(ErrorCode::InvalidConfig, "max_len must be >= 1");
  if (prompt.empty()) fail(ErrorCode::InvalidInput, "prompt must be non-empty");
  Rng rng(seed);
  Tokens context(prompt.begin(), prompt.end());
  Tokens response;
  std::vector<double> scratch;
  const Token eos = params.eos();
  while (static_cast<int>(response.size()) < max_len) {
    Token next;
    if (params.architecture() == Architecture::Tabular) {
      if (!params.vocab().contains(context.back())) {
        fail(ErrorCode::InvalidToken, "prompt token out of range");
      }
      if (!params.finite()) fail(ErrorCode::NumericalError, "model parameters are not finite");
      next = draw(params.tabular_row(context.back()), temperature, rng, scratch);
    } else {
      const SequenceForward fwd(params, context);
      next = draw(fwd.logits(context.size() - 1), temperature, rng, scratch);
    }
    response.push_back(next);
    context.push_back(next);
    if (next == eos) break;
  }
  return response;
}

Tokens greedy_response(const ModelParams& params, std::span<const Token> prompt,
                       int max_len) {
  if (max_len < 1) fail(ErrorCode::InvalidConfig, "max_len must be >= 1");
  Tokens context(prompt.begin(), prompt.end());
  Tokens response;
  while (static_cast<int>(response.size()) < max_len) {
    const std::vector<double> lp = next_token_log_probs(params, context);
    const auto best = static_cast<Token>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    response.push_back(best);
    context.push_back(best);
    if (best == params.eos()) break;
  }
  return response;
}

int hidden_layer_count(const ModelParams& params) {
  return params.architecture() == Architecture::TinyTransformer ? 3 : 0;
}

HiddenStateMatrix extract_hidden_states(const ModelParams& params,
                                        const std::vector<Tokens>& prompts, int layer) {
  if (params.architecture() != Architecture::TinyTransformer) {
    fail(ErrorCode::UnsupportedArchitecture,
         "hidden-state extraction requires the transformer architecture");
  }
  if (layer < 0 || layer >= hidden_layer_count(params)) {
    fail(ErrorCode::InvalidInput, "hidden layer index out of range: " + std::to_string(layer));
  }
  std::size_t width = 0;
  for (const Tokens& p : prompts) {
    if (p.empty()) fail(ErrorCode::InvalidInput, "prompt must be non-empty");
    width = std::max(width, p.size());
  }
  HiddenStateMatrix out;
  out.rows = prompts.size();
  out.cols = static_cast<std::size_t>(params.dims().dim);
  out.values.reserve(out.rows * out.cols);
  for (const Tokens& p : prompts) {
    const SequenceForward fwd(params, p, static_cast<int>(width - p.size()));
    const std::span<const double> h = fwd.hidden(layer, p.size() - 1);
    out.values.insert(out.values.end(), h.begin(), h.end());
  }
  return out;
}

}  // namespace soda
