#include "mlctl/losses.hpp"

#include <cmath>

#include "mlctl/error.hpp"

namespace mlctl {
namespace {

using ad::Precision;
using ad::Tensor;

double norm_of(const Tensor& v) {
  double s = 0.0;
  for (double x : v.data()) s += x * x;
  return std::sqrt(s);
}

void require_nonzero(const Tensor& v, const char* what) {
  if (!(norm_of(v) > 0.0)) throw ContractError(std::string(what) + ": zero-norm vector");
}

Tensor unit(const Tensor& v) {
  const auto n = ad::sqrt(ad::dot(v, v));
  std::vector<Tensor> rep(v.numel(), n);
  return ad::div(v, ad::concat(rep));
}

Tensor stack(const std::vector<Tensor>& scalars) { return ad::concat(scalars); }

Tensor literal_nce(const Tensor& s_pos, const std::vector<Tensor>& s_neg, bool include_positive) {
  const auto e_pos = ad::exp(s_pos);
  Tensor denom = e_pos;
  if (!s_neg.empty()) {
    const auto e_neg = ad::sum(ad::exp(stack(s_neg)));
    denom = include_positive ? ad::add(e_pos, e_neg) : e_neg;
  }
  return ad::neg(ad::log(ad::div(e_pos, denom)));
}

std::vector<Tensor> to_single_all(const std::vector<Tensor>& v) {
  std::vector<Tensor> out;
  out.reserve(v.size());
  for (const auto& t : v) out.push_back(ad::to_single(t));
  return out;
}

std::vector<Tensor> anchor_negatives(const std::vector<Tensor>& same, const std::vector<Tensor>& other, std::size_t i) {
  std::vector<Tensor> neg;
  neg.reserve(2 * same.size());
  for (std::size_t j = 0; j < same.size(); ++j)
    if (j != i) neg.push_back(same[j]);
  for (std::size_t j = 0; j < other.size(); ++j)
    if (j != i) neg.push_back(other[j]);
  return neg;
}

void validate_batch(const CceBatch& batch) {
  if (batch.x.size() != batch.y.size()) throw ContractError("CceBatch: |X| != |Y|");
  if (batch.x.empty()) throw ContractError("CceBatch: empty batch");
  for (const auto& v : batch.x) require_nonzero(v, "batch_contrastive_loss");
  for (const auto& v : batch.y) require_nonzero(v, "batch_contrastive_loss");
}

}  // namespace

std::string to_string(LossKind k) { return k == LossKind::InfoNce ? "infonce" : "cz-nce"; }

LossKind loss_kind_from_string(const std::string& s) {
  if (s == "infonce" || s == "info-nce") return LossKind::InfoNce;
  if (s == "cz-nce" || s == "cznce") return LossKind::CzNce;
  throw ContractError("unknown loss '" + s + "' (expected infonce or cz-nce)");
}

void LossConfig::validate() const {
  if (!(temperature > 0.0)) throw ContractError("LossConfig: temperature must be positive");
  if (!(alpha >= 0.0)) throw ContractError("LossConfig: alpha must be non-negative");
  if (!(mask_rate >= 0.0 && mask_rate <= 1.0)) throw ContractError("LossConfig: mask_rate must lie in [0, 1]");
}

void to_json(nlohmann::json& j, const LossConfig& c) {
  j = {{"temperature", c.temperature},
       {"alpha", c.alpha},
       {"kind", to_string(c.kind)},
       {"precision", ad::to_string(c.precision)},
       {"mask_rate", c.mask_rate}};
}

void from_json(const nlohmann::json& j, LossConfig& c) {
  c.temperature = j.value("temperature", c.temperature);
  c.alpha = j.value("alpha", c.alpha);
  if (j.contains("kind")) c.kind = loss_kind_from_string(j.at("kind").get<std::string>());
  if (j.contains("precision")) c.precision = ad::precision_from_string(j.at("precision").get<std::string>());
  c.mask_rate = j.value("mask_rate", c.mask_rate);
}

Tensor cosine_sim_scaled(const Tensor& x, const Tensor& y, double t) {
  require_nonzero(x, "cosine_sim_scaled");
  require_nonzero(y, "cosine_sim_scaled");
  if (!(t > 0.0)) throw ContractError("cosine_sim_scaled: temperature must be positive");
  const auto nx = ad::sqrt(ad::dot(x, x));
  const auto ny = ad::sqrt(ad::dot(y, y));
  return ad::div(ad::dot(x, y), ad::scale(ad::mul(nx, ny), t));
}

Tensor info_nce_from_scores(const Tensor& s_pos, const std::vector<Tensor>& s_neg, Precision precision) {
  if (precision == Precision::EmulatedSingle) {
    ad::PrecisionScope scope(precision);
    return literal_nce(ad::to_single(s_pos), to_single_all(s_neg), true);
  }
  std::vector<Tensor> all{s_pos};
  all.insert(all.end(), s_neg.begin(), s_neg.end());
  return ad::sub(ad::logsumexp(stack(all)), s_pos);
}

Tensor cz_nce_from_scores(const Tensor& s_pos, const std::vector<Tensor>& s_neg, Precision precision) {
  if (s_neg.empty()) throw ContractError("cz_nce: the negative set must be non-empty");
  if (precision == Precision::EmulatedSingle) {
    ad::PrecisionScope scope(precision);
    return literal_nce(ad::to_single(s_pos), to_single_all(s_neg), false);
  }
  return ad::sub(ad::logsumexp(stack(s_neg)), s_pos);
}

Tensor rho_from_scores(const Tensor& s_pos, const std::vector<Tensor>& s_neg) {
  if (s_neg.empty()) throw ContractError("rho_loss: the negative set must be non-empty");
  std::vector<Tensor> rep(s_neg.size(), s_pos);
  const auto phi = ad::sum(ad::exp(ad::sub(stack(s_neg), stack(rep))));
  return ad::div(phi, ad::stop_gradient(phi));
}

namespace {

std::vector<Tensor> negative_scores(const Tensor& anchor, const std::vector<Tensor>& negatives, double t) {
  std::vector<Tensor> s;
  s.reserve(negatives.size());
  for (const auto& k : negatives) s.push_back(cosine_sim_scaled(anchor, k, t));
  return s;
}

}  // namespace

Tensor info_nce_anchor(const Tensor& anchor, const Tensor& positive, const std::vector<Tensor>& negatives, double t,
                       Precision precision) {
  if (precision == Precision::EmulatedSingle) {
    ad::PrecisionScope scope(precision);
    const auto a = ad::to_single(anchor);
    return info_nce_from_scores(cosine_sim_scaled(a, ad::to_single(positive), t),
                                negative_scores(a, to_single_all(negatives), t), precision);
  }
  return info_nce_from_scores(cosine_sim_scaled(anchor, positive, t), negative_scores(anchor, negatives, t));
}

Tensor cz_nce_anchor(const Tensor& anchor, const Tensor& positive, const std::vector<Tensor>& negatives, double t,
                     Precision precision) {
  if (negatives.empty()) throw ContractError("cz_nce_anchor: the negative set must be non-empty");
  if (precision == Precision::EmulatedSingle) {
    ad::PrecisionScope scope(precision);
    const auto a = ad::to_single(anchor);
    return cz_nce_from_scores(cosine_sim_scaled(a, ad::to_single(positive), t),
                              negative_scores(a, to_single_all(negatives), t), precision);
  }
  return cz_nce_from_scores(cosine_sim_scaled(anchor, positive, t), negative_scores(anchor, negatives, t));
}

Tensor rho_loss(const Tensor& anchor, const Tensor& positive, const std::vector<Tensor>& negatives, double t) {
  if (negatives.empty()) throw ContractError("rho_loss: the negative set must be non-empty");
  return rho_from_scores(cosine_sim_scaled(anchor, positive, t), negative_scores(anchor, negatives, t));
}

namespace {

// Every anchor's scores: unit vectors are formed once per batch member.
template <typename AnchorLoss>
Tensor batch_mean(const CceBatch& batch, double t, Precision precision, AnchorLoss&& loss) {
  validate_batch(batch);
  ad::PrecisionScope scope(precision);
  const std::size_t n = batch.size();
  std::vector<Tensor> ux;
  std::vector<Tensor> uy;
  for (std::size_t i = 0; i < n; ++i) {
    ux.push_back(unit(precision == Precision::EmulatedSingle ? ad::to_single(batch.x[i]) : batch.x[i]));
    uy.push_back(unit(precision == Precision::EmulatedSingle ? ad::to_single(batch.y[i]) : batch.y[i]));
  }
  auto score = [t](const Tensor& a, const Tensor& b) { return ad::scale(ad::dot(a, b), 1.0 / t); };
  std::vector<Tensor> terms;
  terms.reserve(2 * n);
  for (int side = 0; side < 2; ++side) {
    const auto& same = side == 0 ? ux : uy;
    const auto& other = side == 0 ? uy : ux;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<Tensor> s_neg;
      for (const auto& k : anchor_negatives(same, other, i)) s_neg.push_back(score(same[i], k));
      terms.push_back(loss(score(same[i], other[i]), s_neg));
    }
  }
  return ad::scale(ad::sum(stack(terms)), 1.0 / static_cast<double>(2 * n));
}

}  // namespace

Tensor batch_contrastive_loss(const CceBatch& batch, LossKind kind, double t, Precision precision) {
  if (kind == LossKind::CzNce && batch.size() < 2) {
    throw ContractError("batch_contrastive_loss: CZ-NCE needs a batch of at least 2 pairs");
  }
  return batch_mean(batch, t, precision, [&](const Tensor& s_pos, const std::vector<Tensor>& s_neg) {
    return kind == LossKind::InfoNce ? info_nce_from_scores(s_pos, s_neg, precision)
                                     : cz_nce_from_scores(s_pos, s_neg, precision);
  });
}

Tensor batch_contrastive_loss(const CceBatch& batch, const LossConfig& config) {
  config.validate();
  return batch_contrastive_loss(batch, config.kind, config.temperature, config.precision);
}

Tensor batch_rho_loss(const CceBatch& batch, double t) {
  if (batch.size() < 2) throw ContractError("batch_rho_loss: needs a batch of at least 2 pairs");
  return batch_mean(batch, t, Precision::Double,
                    [](const Tensor& s_pos, const std::vector<Tensor>& s_neg) { return rho_from_scores(s_pos, s_neg); });
}

std::vector<SimilarityScores> batch_scores(const CceBatch& batch, double t) {
  validate_batch(batch);
  const std::size_t n = batch.size();
  auto cos = [t](const Tensor& a, const Tensor& b) {
    double d = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) d += a.at(i) * b.at(i);
    return d / (norm_of(a) * norm_of(b) * t);
  };
  std::vector<SimilarityScores> out;
  for (int side = 0; side < 2; ++side) {
    const auto& same = side == 0 ? batch.x : batch.y;
    const auto& other = side == 0 ? batch.y : batch.x;
    for (std::size_t i = 0; i < n; ++i) {
      SimilarityScores s;
      s.s_pos = cos(same[i], other[i]);
      for (const auto& k : anchor_negatives(same, other, i)) s.s_neg.push_back(cos(same[i], k));
      out.push_back(std::move(s));
    }
  }
  return out;
}

MaskedSequence apply_mlm_mask(std::span<const TokenId> ids, std::size_t vocab_size, double rate, std::mt19937_64& rng) {
  if (vocab_size <= special::kCount) throw ContractError("apply_mlm_mask: vocabulary has no ordinary tokens");
  MaskedSequence m;
  m.input.assign(ids.begin(), ids.end());
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<TokenId> random_tok(special::kCount, vocab_size - 1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < special::kCount) continue;
    if (!(u(rng) < rate)) continue;
    m.positions.push_back(i);
    m.targets.push_back(ids[i]);
    const double r = u(rng);
    if (r < 0.8) {
      m.input[i] = special::kMask;
    } else if (r < 0.9) {
      m.input[i] = random_tok(rng);
    }
  }
  return m;
}

Tensor mlm_loss(const std::vector<std::vector<TokenId>>& sequences, const Model& model, double mask_rate,
                std::mt19937_64& rng) {
  if (sequences.empty()) throw ContractError("mlm_loss: empty batch");
  std::vector<Tensor> rows;
  std::vector<std::size_t> targets;
  for (const auto& seq : sequences) {
    auto m = apply_mlm_mask(seq, model.config.vocab_size, mask_rate, rng);
    if (m.positions.empty()) continue;
    const auto out = encode_tokens(m.input, model);
    rows.push_back(ad::gather_rows(out.last(), m.positions));
    targets.insert(targets.end(), m.targets.begin(), m.targets.end());
  }
  if (targets.empty()) return Tensor::scalar(0.0);
  const auto hidden = rows.size() == 1 ? rows.front() : ad::concat(rows, 0);
  return ad::softmax_cross_entropy(mlm_logits(hidden, model), targets);
}

LossBreakdown total_loss(const CceBatch& batch, const std::vector<std::vector<TokenId>>& mlm_sequences,
                         const LossConfig& config, const Model& model, std::mt19937_64& rng) {
  config.validate();
  LossBreakdown out;
  out.contrastive = batch_contrastive_loss(batch, config);
  if (config.alpha == 0.0) {
    out.mlm = Tensor::scalar(0.0);
    out.total = out.contrastive;
    return out;
  }
  out.mlm = mlm_loss(mlm_sequences, model, config.mask_rate, rng);
  out.total = ad::add(out.contrastive, ad::scale(out.mlm, config.alpha));
  return out;
}

}  // namespace mlctl
