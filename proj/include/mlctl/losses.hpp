#pragma once

// Contrastive objectives over CCE vectors.
//
// With s(x, y) = cos(x, y) / t, an anchor with positive score s+ and negative
// scores s-_j has
//
//   infoNCE  = -log( e^{s+} / (e^{s+} + sum_j e^{s-_j}) )      >= 0
//   CZ-NCE   = -log( e^{s+} / sum_j e^{s-_j} )                 unbounded below
//   rho      = phi / sg(phi),   phi = sum_j e^{s-_j - s+}      == 1 forward
//
// CZ-NCE = log(phi), so grad(CZ-NCE) = grad(phi) / phi = grad(rho).
//
// In Precision::Double the two NCE losses go through log-sum-exp. In
// Precision::EmulatedSingle they are evaluated in the literal ratio form with
// every intermediate rounded to binary32.

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlctl/autodiff.hpp"
#include "mlctl/encoder.hpp"

namespace mlctl {

enum class LossKind { InfoNce, CzNce };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct LossConfig {
  double temperature = 0.07;
  double alpha = 0.1;
  LossKind kind = LossKind::CzNce;
  ad::Precision precision = ad::Precision::Double;
  double mask_rate = 0.15;

  void validate() const;
};

void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

struct CceBatch {
  std::vector<ad::Tensor> x;  // language-A anchors
  std::vector<ad::Tensor> y;  // aligned language-B positives

  std::size_t size() const noexcept { return x.size(); }
};

ad::Tensor cosine_sim_scaled(const ad::Tensor& x, const ad::Tensor& y, double t);

ad::Tensor info_nce_anchor(const ad::Tensor& anchor, const ad::Tensor& positive, const std::vector<ad::Tensor>& negatives,
                           double t, ad::Precision precision = ad::Precision::Double);
ad::Tensor cz_nce_anchor(const ad::Tensor& anchor, const ad::Tensor& positive, const std::vector<ad::Tensor>& negatives,
                         double t, ad::Precision precision = ad::Precision::Double);
ad::Tensor rho_loss(const ad::Tensor& anchor, const ad::Tensor& positive, const std::vector<ad::Tensor>& negatives,
                    double t);

// The same three losses from precomputed scores.
ad::Tensor info_nce_from_scores(const ad::Tensor& s_pos, const std::vector<ad::Tensor>& s_neg,
                                ad::Precision precision = ad::Precision::Double);
ad::Tensor cz_nce_from_scores(const ad::Tensor& s_pos, const std::vector<ad::Tensor>& s_neg,
                              ad::Precision precision = ad::Precision::Double);
ad::Tensor rho_from_scores(const ad::Tensor& s_pos, const std::vector<ad::Tensor>& s_neg);

// Mean over the 2n anchors x_i and y_i. The negatives of x_i are
// {x_j : j != i} followed by {y_j : j != i}; the negatives of y_i are
// {y_j : j != i} followed by {x_j : j != i}.
ad::Tensor batch_contrastive_loss(const CceBatch& batch, const LossConfig& config);
ad::Tensor batch_contrastive_loss(const CceBatch& batch, LossKind kind, double t,
                                  ad::Precision precision = ad::Precision::Double);
// Batch mean of rho; its gradient equals that of the CZ-NCE batch loss.
ad::Tensor batch_rho_loss(const CceBatch& batch, double t);

// Per-anchor similarity scores in plain doubles, in the order used above.
struct SimilarityScores {
  double s_pos = 0.0;
  std::vector<double> s_neg;
};
std::vector<SimilarityScores> batch_scores(const CceBatch& batch, double t);

// --- masked language modelling ---------------------------------------------

struct MaskedSequence {
  std::vector<TokenId> input;
  std::vector<std::size_t> positions;
  std::vector<TokenId> targets;
};

// Selects each non-special position with probability `rate`; selected
// positions become [MASK] 80%, a random non-special token 10%, unchanged 10%.
MaskedSequence apply_mlm_mask(std::span<const TokenId> ids, std::size_t vocab_size, double rate, std::mt19937_64& rng);

// Mean cross-entropy over every masked position of every sequence (each
// already wrapped in [CLS] ... [SEP]); 0 when nothing was masked.
ad::Tensor mlm_loss(const std::vector<std::vector<TokenId>>& sequences, const Model& model, double mask_rate,
                    std::mt19937_64& rng);

struct LossBreakdown {
  ad::Tensor total;
  ad::Tensor contrastive;
  ad::Tensor mlm;  // scalar 0 when alpha == 0
};

// contrastive + alpha * mlm. The MLM term is skipped (and consumes no
// randomness) when alpha == 0.
LossBreakdown total_loss(const CceBatch& batch, const std::vector<std::vector<TokenId>>& mlm_sequences,
                         const LossConfig& config, const Model& model, std::mt19937_64& rng);

inline double combine_total(double contrastive, double mlm, double alpha) { return contrastive + alpha * mlm; }

}  // namespace mlctl
