#pragma once

#include <functional>

namespace soda {

namespace detail {

template <typename Visitor>
void enumerate_from(const ModelParams& params, Tokens& context, Tokens& response,
                    double logprob, int max_len, Visitor& visit) {
  const std::vector<double> lp = next_token_log_probs(params, context);
  const Token eos = params.eos();
  for (Token t = 0; t < params.vocab_size(); ++t) {
    const double next = logprob + lp[static_cast<std::size_t>(t)];
    response.push_back(t);
    if (t == eos || static_cast<int>(response.size()) == max_len) {
      visit(static_cast<const Tokens&>(response), next);
    } else {
      context.push_back(t);
      enumerate_from(params, context, response, next, max_len, visit);
      context.pop_back();
    }
    response.pop_back();
  }
}

}  // namespace detail

template <typename Visitor>
void enumerate_responses(const ModelParams& params, std::span<const Token> prompt,
                         int max_len, Visitor&& visit) {
  Tokens context(prompt.begin(), prompt.end());
  Tokens response;
  detail::enumerate_from(params, context, response, 0.0, max_len, visit);
}

}  // namespace soda
