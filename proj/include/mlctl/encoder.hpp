#pragma once

// Small post-norm bidirectional transformer and the concatenated contextual
// embedding (CCE) head: avg-first-last sentence pooling, avg-first-last word
// pooling over a token span, concatenation, and one affine layer.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlctl/autodiff.hpp"
#include "mlctl/optim.hpp"
#include "mlctl/tokenizer.hpp"
#include "mlctl/wps.hpp"

namespace mlctl {

// MultiLevel: CCE = FC([sentence; word]). SentenceOnly: CCE = FC(sentence).
enum class CceMode { MultiLevel, SentenceOnly };

std::string to_string(CceMode m);
CceMode cce_mode_from_string(const std::string& s);

struct EncoderConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t hidden = 128;
  std::size_t ffn = 512;
  std::size_t max_len = 64;
  std::size_t vocab_size = 0;
  std::size_t cce_dim = 128;
  CceMode mode = CceMode::MultiLevel;
  // Leave [CLS]/[SEP] out of the sentence average.
  bool exclude_specials = false;
  double init_std = 0.02;
  // The position table starts at zero by default: on word-order preserving
  // bitext a random table alone aligns translations before any training.
  double position_init_std = 0.0;
  double fc_init_noise = 0.01;

  void validate() const;
  std::size_t head_input_dim() const { return mode == CceMode::MultiLevel ? 2 * hidden : hidden; }
};

void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

struct Model {
  EncoderConfig config;
  ParamSet params;
};

// Gaussian(0, init_std) weights, a Gaussian(0, position_init_std) position
// table, unit layer-norm gains, zero biases, and an FC head that starts at stacked identity blocks (averaging the sentence and
// word halves) plus N(0, fc_init_noise) noise. Deterministic in `seed`; the
// transformer body does not depend on `mode`.
Model init_model(const EncoderConfig& config, std::uint64_t seed);

// Index 0 is the embedding-layer output, index `layers` the last block.
struct LayerOutputs {
  std::vector<ad::Tensor> layers;  // each (seq_len, hidden)

  const ad::Tensor& first() const { return layers.front(); }
  const ad::Tensor& last() const { return layers.back(); }
  std::size_t seq_len() const { return layers.front().rows(); }
};

// [CLS] ids [SEP]
std::vector<TokenId> wrap_special(const TokenSeq& seq);

LayerOutputs encode_tokens(std::span<const TokenId> ids, const Model& model);

// Mean over positions of (first + last) / 2.
ad::Tensor sentence_embedding(const LayerOutputs& out, bool exclude_specials = false);
// Same pooling restricted to `span` (unwrapped token indices; [CLS] is
// skipped internally).
ad::Tensor word_embedding(const LayerOutputs& out, Span span);

ad::Tensor cce_from_outputs(const LayerOutputs& out, Span span, const Model& model);
ad::Tensor cce(const WPS& wps, const Model& model, const Vocab& vocab);

// Encodes each distinct sentence once per instance.
class EncodingCache {
 public:
  EncodingCache(const Model& model, const Vocab& vocab) : model_(model), vocab_(vocab) {}
  const LayerOutputs& get(const std::string& text);
  ad::Tensor cce(const WPS& wps);

 private:
  const Model& model_;
  const Vocab& vocab_;
  std::unordered_map<std::string, LayerOutputs> cache_;
};

// (rows, vocab) logits of the tied-embedding MLM output layer.
ad::Tensor mlm_logits(const ad::Tensor& hidden_rows, const Model& model);

}  // namespace mlctl
