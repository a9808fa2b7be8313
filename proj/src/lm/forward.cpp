#include <cmath>

#include "soda/error.hpp"
#include "soda/forward.hpp"
#include "soda/kernels.hpp"

namespace soda {
namespace {

struct Offsets {
  std::size_t tok_emb, pos_emb, wq, wk, wv, wo, w1, b1, w2, b2, w_out, b_out;
};

Offsets offsets_for(int vocab, const TransformerDims& dims) {
  const auto v = static_cast<std::size_t>(vocab);
  const auto d = static_cast<std::size_t>(dims.dim);
  const auto h = static_cast<std::size_t>(dims.hidden);
  const auto c = static_cast<std::size_t>(dims.context);
  Offsets o{};
  o.tok_emb = 0;
  o.pos_emb = o.tok_emb + v * d;
  o.wq = o.pos_emb + c * d;
  o.wk = o.wq + d * d;
  o.wv = o.wk + d * d;
  o.wo = o.wv + d * d;
  o.w1 = o.wo + d * d;
  o.b1 = o.w1 + h * d;
  o.w2 = o.b1 + h;
  o.b2 = o.w2 + d * h;
  o.w_out = o.b2 + d;
  o.b_out = o.w_out + v * d;
  return o;
}

// y = W x (+ y if accumulate), W is rows x cols row-major.
void matvec(const double* w, std::size_t rows, std::size_t cols, const double* x,
            double* y) {
  const std::span<const double> xs(x, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    y[r] = kernels::dot(std::span<const double>(w + r * cols, cols), xs);
  }
}

// y += W^T dy
void matvec_t_acc(const double* w, std::size_t rows, std::size_t cols, const double* dy,
                  double* y) {
  const std::span<double> ys(y, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (dy[r] != 0.0) kernels::axpy(dy[r], std::span<const double>(w + r * cols, cols), ys);
  }
}

// dW += dy x^T
void outer_acc(double* dw, std::size_t rows, std::size_t cols, const double* dy,
               const double* x) {
  const std::span<const double> xs(x, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    if (dy[r] != 0.0) kernels::axpy(dy[r], xs, std::span<double>(dw + r * cols, cols));
  }
}

}  // namespace

SequenceForward::SequenceForward(const ModelParams& params, std::span<const Token> tokens,
                                 int position_offset)
    : params_(&params), tokens_(tokens.begin(), tokens.end()), offset_(position_offset) {
  if (!params.finite()) fail(ErrorCode::NumericalError, "model parameters are not finite");
  const Vocab vocab = params.vocab();
  for (Token t : tokens_) {
    if (!vocab.contains(t)) {
      fail(ErrorCode::InvalidToken, "token id " + std::to_string(t) +
                                        " outside vocabulary of size " +
                                        std::to_string(vocab.size));
    }
  }
  if (params.architecture() == Architecture::TinyTransformer) {
    if (offset_ < 0 ||
        offset_ + static_cast<int>(tokens_.size()) > params.dims().context) {
      fail(ErrorCode::InvalidInput, "sequence exceeds transformer context length");
    }
    forward_transformer();
  }
}

std::span<const double> SequenceForward::logits(std::size_t pos) const {
  const auto v = static_cast<std::size_t>(params_->vocab_size());
  if (params_->architecture() == Architecture::Tabular) {
    return params_->tabular_row(tokens_[pos]);
  }
  return {z_.data() + pos * v, v};
}

std::span<const double> SequenceForward::hidden(int layer, std::size_t pos) const {
  if (params_->architecture() != Architecture::TinyTransformer) {
    fail(ErrorCode::UnsupportedArchitecture, "tabular models have no hidden states");
  }
  const auto d = static_cast<std::size_t>(params_->dims().dim);
  switch (layer) {
    case 0: return {x0_.data() + pos * d, d};
    case 1: return {x1_.data() + pos * d, d};
    case 2: return {x2_.data() + pos * d, d};
    default: break;
  }
  fail(ErrorCode::InvalidInput, "hidden layer index out of range: " + std::to_string(layer));
}

void SequenceForward::backward(std::span<const double> dlogits,
                               std::span<double> grad) const {
  const auto v = static_cast<std::size_t>(params_->vocab_size());
  if (params_->architecture() == Architecture::Tabular) {
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      const std::span<const double> d = dlogits.subspan(i * v, v);
      kernels::axpy(1.0, d,
                    grad.subspan(static_cast<std::size_t>(tokens_[i]) * v, v));
    }
    return;
  }
  backward_transformer(dlogits, grad);
}

void SequenceForward::forward_transformer() {
  const ModelParams& p = *params_;
  const TransformerDims& dims = p.dims();
  const auto n = tokens_.size();
  const auto v = static_cast<std::size_t>(p.vocab_size());
  const auto d = static_cast<std::size_t>(dims.dim);
  const auto h = static_cast<std::size_t>(dims.hidden);
  const Offsets o = offsets_for(p.vocab_size(), dims);
  const double* w = p.values().data();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  x0_.assign(n * d, 0.0);
  q_.assign(n * d, 0.0);
  k_.assign(n * d, 0.0);
  v_.assign(n * d, 0.0);
  attn_.assign(n * n, 0.0);
  ctx_.assign(n * d, 0.0);
  x1_.assign(n * d, 0.0);
  u_.assign(n * h, 0.0);
  g_.assign(n * h, 0.0);
  x2_.assign(n * d, 0.0);
  z_.assign(n * v, 0.0);

  for (std::size_t i = 0; i < n; ++i) {
    const double* te = w + o.tok_emb + static_cast<std::size_t>(tokens_[i]) * d;
    const double* pe = w + o.pos_emb + (static_cast<std::size_t>(offset_) + i) * d;
    double* x0 = &x0_[i * d];
    for (std::size_t c = 0; c < d; ++c) x0[c] = te[c] + pe[c];
    matvec(w + o.wq, d, d, x0, &q_[i * d]);
    matvec(w + o.wk, d, d, x0, &k_[i * d]);
    matvec(w + o.wv, d, d, x0, &v_[i * d]);
  }

  std::vector<double> scores(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::span<const double> qi(&q_[i * d], d);
    for (std::size_t j = 0; j <= i; ++j) {
      scores[j] = kernels::dot(qi, std::span<const double>(&k_[j * d], d)) * inv_sqrt_d;
    }
    softmax(std::span<const double>(scores.data(), i + 1),
            std::span<double>(&attn_[i * n], i + 1));
    double* ctx = &ctx_[i * d];
    for (std::size_t j = 0; j <= i; ++j) {
      kernels::axpy(attn_[i * n + j], std::span<const double>(&v_[j * d], d),
                    std::span<double>(ctx, d));
    }

    double* x1 = &x1_[i * d];
    matvec(w + o.wo, d, d, ctx, x1);
    kernels::axpy(1.0, std::span<const double>(&x0_[i * d], d), std::span<double>(x1, d));

    double* u = &u_[i * h];
    double* g = &g_[i * h];
    matvec(w + o.w1, h, d, x1, u);
    for (std::size_t c = 0; c < h; ++c) {
      u[c] += w[o.b1 + c];
      g[c] = std::tanh(u[c]);
    }

    double* x2 = &x2_[i * d];
    matvec(w + o.w2, d, h, g, x2);
    for (std::size_t c = 0; c < d; ++c) x2[c] += x1[c] + w[o.b2 + c];

    double* z = &z_[i * v];
    matvec(w + o.w_out, v, d, x2, z);
    for (std::size_t c = 0; c < v; ++c) z[c] += w[o.b_out + c];
  }
}

void SequenceForward::backward_transformer(std::span<const double> dlogits,
                                           std::span<double> grad) const {
  const ModelParams& p = *params_;
  const TransformerDims& dims = p.dims();
  const auto n = tokens_.size();
  const auto v = static_cast<std::size_t>(p.vocab_size());
  const auto d = static_cast<std::size_t>(dims.dim);
  const auto h = static_cast<std::size_t>(dims.hidden);
  const Offsets o = offsets_for(p.vocab_size(), dims);
  const double* w = p.values().data();
  double* gw = grad.data();
  const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));

  std::vector<double> dx0(n * d, 0.0), dq(n * d, 0.0), dk(n * d, 0.0), dv(n * d, 0.0);
  std::vector<double> dx2(d), dx1(d), dg(h), du(h), dctx(d), da(n), ds(n);

  for (std::size_t i = 0; i < n; ++i) {
    const double* dz = &dlogits[i * v];
    // Output head.
    outer_acc(gw + o.w_out, v, d, dz, &x2_[i * d]);
    for (std::size_t c = 0; c < v; ++c) gw[o.b_out + c] += dz[c];
    std::fill(dx2.begin(), dx2.end(), 0.0);
    matvec_t_acc(w + o.w_out, v, d, dz, dx2.data());

    // MLP with residual.
    for (std::size_t c = 0; c < d; ++c) gw[o.b2 + c] += dx2[c];
    outer_acc(gw + o.w2, d, h, dx2.data(), &g_[i * h]);
    std::fill(dg.begin(), dg.end(), 0.0);
    matvec_t_acc(w + o.w2, d, h, dx2.data(), dg.data());
    for (std::size_t c = 0; c < h; ++c) {
      const double gc = g_[i * h + c];
      du[c] = dg[c] * (1.0 - gc * gc);
      gw[o.b1 + c] += du[c];
    }
    outer_acc(gw + o.w1, h, d, du.data(), &x1_[i * d]);
    dx1 = dx2;
    matvec_t_acc(w + o.w1, h, d, du.data(), dx1.data());

    // Attention output projection with residual.
    kernels::axpy(1.0, dx1, std::span<double>(&dx0[i * d], d));
    outer_acc(gw + o.wo, d, d, dx1.data(), &ctx_[i * d]);
    std::fill(dctx.begin(), dctx.end(), 0.0);
    matvec_t_acc(w + o.wo, d, d, dx1.data(), dctx.data());

    // Attention weights.
    double weighted = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      da[j] = kernels::dot(dctx, std::span<const double>(&v_[j * d], d));
      weighted += attn_[i * n + j] * da[j];
      kernels::axpy(attn_[i * n + j], dctx, std::span<double>(&dv[j * d], d));
    }
    for (std::size_t j = 0; j <= i; ++j) {
      ds[j] = attn_[i * n + j] * (da[j] - weighted) * inv_sqrt_d;
      kernels::axpy(ds[j], std::span<const double>(&k_[j * d], d),
                    std::span<double>(&dq[i * d], d));
      kernels::axpy(ds[j], std::span<const double>(&q_[i * d], d),
                    std::span<double>(&dk[j * d], d));
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double* x0 = &x0_[i * d];
    double* dxi = &dx0[i * d];
    outer_acc(gw + o.wq, d, d, &dq[i * d], x0);
    outer_acc(gw + o.wk, d, d, &dk[i * d], x0);
    outer_acc(gw + o.wv, d, d, &dv[i * d], x0);
    matvec_t_acc(w + o.wq, d, d, &dq[i * d], dxi);
    matvec_t_acc(w + o.wk, d, d, &dk[i * d], dxi);
    matvec_t_acc(w + o.wv, d, d, &dv[i * d], dxi);
    const std::span<const double> dx(dxi, d);
    kernels::axpy(1.0, dx,
                  grad.subspan(o.tok_emb + static_cast<std::size_t>(tokens_[i]) * d, d));
    kernels::axpy(1.0, dx,
                  grad.subspan(o.pos_emb + (static_cast<std::size_t>(offset_) + i) * d, d));
  }
}

}  // namespace soda
