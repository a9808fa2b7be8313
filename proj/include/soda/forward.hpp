#pragma once

#include <span>
#include <vector>

#include "soda/lm.hpp"

namespace soda {

/// One forward pass over a token sequence, keeping the activations needed
/// for backpropagation. logits(i) is the next-token distribution after
/// tokens[0..i]. Positions start at `position_offset` (used for left
/// padding). Holds a reference to `params`, which must outlive it.
class SequenceForward {
 public:
  SequenceForward(const ModelParams& params, std::span<const Token> tokens,
                  int position_offset = 0);

  std::size_t length() const { return tokens_.size(); }
  std::span<const double> logits(std::size_t pos) const;

  /// Transformer only: layer 0 = embeddings, 1 = after attention,
  /// 2 = after the MLP (final).
  std::span<const double> hidden(int layer, std::size_t pos) const;

  /// grad += d(sum_i <dlogits_i, logits_i>)/d(params). dlogits is
  /// length() x V row-major.
  void backward(std::span<const double> dlogits, std::span<double> grad) const;

 private:
  void forward_transformer();
  void backward_transformer(std::span<const double> dlogits, std::span<double> grad) const;

  const ModelParams* params_;
  Tokens tokens_;
  int offset_;

  // Transformer activations, each length() x width, row-major.
  std::vector<double> x0_, q_, k_, v_, attn_, ctx_, x1_, u_, g_, x2_, z_;
};

}  // namespace soda
