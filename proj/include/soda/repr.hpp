#pragma once

// Representation diagnostics: linear CKA between hidden-state matrices,
// histogram entropy and Pearson kurtosis of activations.

#include <span>
#include <string>
#include <vector>

#include "soda/lm.hpp"

namespace soda {

/// ||Xc^T Yc||_F^2 / (||Xc^T Xc||_F * ||Yc^T Yc||_F), with Xc, Yc the
/// column-centered inputs. Throws DegenerateInput if either centered matrix
/// is zero, InvalidInput on row-count mismatch or fewer than 2 rows.
double linear_cka(const HiddenStateMatrix& x, const HiddenStateMatrix& y);

/// Shannon entropy (nats) of an equal-width histogram over [min, max].
double activation_entropy(std::span<const double> values, int n_bins = 100);

/// Pearson kurtosis m4 / m2^2 (normal = 3).
double activation_kurtosis(std::span<const double> values);

/// Sample Pearson correlation of two equally long series.
double pearson_correlation(std::span<const double> a, std::span<const double> b);

struct ReprReport {
  std::string candidate_id;
  std::vector<double> cka_to_base;  // one per exposed layer
  double last_layer_entropy = 0.0;  // nats
  double last_layer_kurtosis = 0.0; // Pearson
};

/// Per candidate: CKA to `base` at every layer, plus entropy / kurtosis of
/// the final-layer last-token states.
std::vector<ReprReport> repr_report(const ModelParams& base,
                                    const std::vector<ModelParams>& candidates,
                                    const std::vector<std::string>& candidate_ids,
                                    const std::vector<Tokens>& prompts, int n_bins = 100);

}  // namespace soda
