#include "mlctl/encoder.hpp"

#include <cmath>
#include <random>

#include "mlctl/error.hpp"

namespace mlctl {
namespace {

std::string layer_name(std::size_t l, const char* suffix) { return "layer" + std::to_string(l) + "." + suffix; }

ad::Tensor gaussian(ad::Shape shape, double stddev, std::mt19937_64& rng) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = stddev * dist(rng);
  return ad::Tensor::from(std::move(shape), std::move(v), true);
}

ad::Tensor constant(ad::Shape shape, double value) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return ad::Tensor::from(std::move(shape), std::vector<double>(n, value), true);
}

// Stacked identity blocks: row i feeds output column (i mod out). With
// in = 2 * out each output averages one sentence and one word component.
ad::Tensor identity_blocks(std::size_t in, std::size_t out, double noise, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> w(in * out, 0.0);
  const double weight = in >= out ? static_cast<double>(out) / static_cast<double>(in) : 1.0;
  for (std::size_t i = 0; i < in; ++i) {
    for (std::size_t j = 0; j < out; ++j) {
      const bool on = in >= out ? (i % out == j) : (j % in == i);
      w[i * out + j] = (on ? weight : 0.0) + (noise > 0.0 ? noise * dist(rng) : 0.0);
    }
  }
  return ad::Tensor::from({in, out}, std::move(w), true);
}

ad::Tensor avg_first_last(const LayerOutputs& out) { return ad::scale(ad::add(out.first(), out.last()), 0.5); }

}  // namespace

std::string to_string(CceMode m) { return m == CceMode::MultiLevel ? "multi-level" : "snt-only"; }

CceMode cce_mode_from_string(const std::string& s) {
  if (s == "multi-level") return CceMode::MultiLevel;
  if (s == "snt-only") return CceMode::SentenceOnly;
  throw ContractError("unknown mode '" + s + "' (expected multi-level or snt-only)");
}

void EncoderConfig::validate() const {
  if (layers == 0) throw ContractError("EncoderConfig: layers must be positive");
  if (heads == 0 || hidden % heads != 0) throw ContractError("EncoderConfig: hidden must be divisible by heads");
  if (ffn == 0 || max_len < 3) throw ContractError("EncoderConfig: ffn must be positive and max_len at least 3");
  if (vocab_size <= special::kCount) throw ContractError("EncoderConfig: vocab_size must exceed the special tokens");
  if (cce_dim == 0) throw ContractError("EncoderConfig: cce_dim must be positive");
  if (!(init_std >= 0.0) || !(position_init_std >= 0.0) || !(fc_init_noise >= 0.0)) {
    throw ContractError("EncoderConfig: initialisation scales must be non-negative");
  }
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"layers", c.layers},         {"heads", c.heads},
       {"hidden", c.hidden},         {"ffn", c.ffn},
       {"max_len", c.max_len},       {"vocab_size", c.vocab_size},
       {"cce_dim", c.cce_dim},       {"mode", to_string(c.mode)},
       {"exclude_specials", c.exclude_specials}, {"init_std", c.init_std},
       {"position_init_std", c.position_init_std},
       {"fc_init_noise", c.fc_init_noise}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  c.layers = j.value("layers", c.layers);
  c.heads = j.value("heads", c.heads);
  c.hidden = j.value("hidden", c.hidden);
  c.ffn = j.value("ffn", c.ffn);
  c.max_len = j.value("max_len", c.max_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.cce_dim = j.value("cce_dim", c.cce_dim);
  if (j.contains("mode")) c.mode = cce_mode_from_string(j.at("mode").get<std::string>());
  c.exclude_specials = j.value("exclude_specials", c.exclude_specials);
  c.init_std = j.value("init_std", c.init_std);
  c.position_init_std = j.value("position_init_std", c.position_init_std);
  c.fc_init_noise = j.value("fc_init_noise", c.fc_init_noise);
}

Model init_model(const EncoderConfig& config, std::uint64_t seed) {
  config.validate();
  Model m{config, {}};
  const std::size_t d = config.hidden;
  std::mt19937_64 rng(seed);
  auto& p = m.params;
  p.add("embed.tokens", gaussian({config.vocab_size, d}, config.init_std, rng));
  p.add("embed.positions", gaussian({config.max_len, d}, config.position_init_std, rng));
  p.add("embed.ln.gain", constant({d}, 1.0));
  p.add("embed.ln.bias", constant({d}, 0.0));
  for (std::size_t l = 0; l < config.layers; ++l) {
    for (const char* w : {"attn.q", "attn.k", "attn.v", "attn.o"}) {
      p.add(layer_name(l, w) + ".w", gaussian({d, d}, config.init_std, rng));
      p.add(layer_name(l, w) + ".b", constant({d}, 0.0));
    }
    p.add(layer_name(l, "ln1.gain"), constant({d}, 1.0));
    p.add(layer_name(l, "ln1.bias"), constant({d}, 0.0));
    p.add(layer_name(l, "ffn.in.w"), gaussian({d, config.ffn}, config.init_std, rng));
    p.add(layer_name(l, "ffn.in.b"), constant({config.ffn}, 0.0));
    p.add(layer_name(l, "ffn.out.w"), gaussian({config.ffn, d}, config.init_std, rng));
    p.add(layer_name(l, "ffn.out.b"), constant({d}, 0.0));
    p.add(layer_name(l, "ln2.gain"), constant({d}, 1.0));
    p.add(layer_name(l, "ln2.bias"), constant({d}, 0.0));
  }
  p.add("mlm.bias", constant({config.vocab_size}, 0.0));
  // Separate stream so the body is identical across head shapes.
  std::mt19937_64 head_rng(seed ^ 0x9E3779B97F4A7C15ULL);
  p.add("head.fc.w", identity_blocks(config.head_input_dim(), config.cce_dim, config.fc_init_noise, head_rng));
  p.add("head.fc.b", constant({config.cce_dim}, 0.0));
  return m;
}

std::vector<TokenId> wrap_special(const TokenSeq& seq) {
  std::vector<TokenId> ids;
  ids.reserve(seq.ids.size() + 2);
  ids.push_back(special::kCls);
  ids.insert(ids.end(), seq.ids.begin(), seq.ids.end());
  ids.push_back(special::kSep);
  return ids;
}

LayerOutputs encode_tokens(std::span<const TokenId> ids, const Model& model) {
  const auto& cfg = model.config;
  const auto& p = model.params;
  if (ids.empty()) throw ContractError("encode_tokens: empty sequence");
  if (ids.size() > cfg.max_len) {
    throw ContractError("encode_tokens: sequence of " + std::to_string(ids.size()) + " tokens exceeds max_len " +
                        std::to_string(cfg.max_len));
  }
  for (auto id : ids) {
    if (id >= cfg.vocab_size) throw ContractError("encode_tokens: unknown token id " + std::to_string(id));
  }
  const std::size_t len = ids.size();
  const std::size_t d = cfg.hidden;
  const std::size_t dh = d / cfg.heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  LayerOutputs out;
  auto x = ad::add(ad::gather_rows(p.get("embed.tokens"), ids), ad::slice_rows(p.get("embed.positions"), 0, len));
  x = ad::layer_norm(x, p.get("embed.ln.gain"), p.get("embed.ln.bias"));
  out.layers.push_back(x);

  auto affine = [&](const ad::Tensor& in, const std::string& prefix) {
    return ad::add_row(ad::matmul(in, p.get(prefix + ".w")), p.get(prefix + ".b"));
  };
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto q = affine(x, layer_name(l, "attn.q"));
    const auto k = affine(x, layer_name(l, "attn.k"));
    const auto v = affine(x, layer_name(l, "attn.v"));
    std::vector<ad::Tensor> heads;
    for (std::size_t h = 0; h < cfg.heads; ++h) {
      const auto qh = ad::slice_cols(q, h * dh, (h + 1) * dh);
      const auto kh = ad::slice_cols(k, h * dh, (h + 1) * dh);
      const auto vh = ad::slice_cols(v, h * dh, (h + 1) * dh);
      const auto att = ad::softmax_rows(ad::scale(ad::matmul(qh, ad::transpose(kh)), att_scale));
      heads.push_back(ad::matmul(att, vh));
    }
    const auto ctx = cfg.heads == 1 ? heads.front() : ad::concat(heads, 1);
    x = ad::layer_norm(ad::add(x, affine(ctx, layer_name(l, "attn.o"))), p.get(layer_name(l, "ln1.gain")),
                       p.get(layer_name(l, "ln1.bias")));
    const auto ff = affine(ad::gelu(affine(x, layer_name(l, "ffn.in"))), layer_name(l, "ffn.out"));
    x = ad::layer_norm(ad::add(x, ff), p.get(layer_name(l, "ln2.gain")), p.get(layer_name(l, "ln2.bias")));
    out.layers.push_back(x);
  }
  return out;
}

ad::Tensor sentence_embedding(const LayerOutputs& out, bool exclude_specials) {
  if (out.layers.empty() || out.seq_len() == 0) throw ContractError("sentence_embedding: empty sequence");
  auto avg = avg_first_last(out);
  if (exclude_specials) {
    if (out.seq_len() < 3) throw ContractError("sentence_embedding: no tokens between [CLS] and [SEP]");
    avg = ad::slice_rows(avg, 1, out.seq_len() - 1);
  }
  return ad::mean_rows(avg);
}

ad::Tensor word_embedding(const LayerOutputs& out, Span span) {
  const auto [b, e] = span;
  if (b >= e) throw ContractError("word_embedding: empty span");
  // +1 for [CLS]; the span must end before [SEP].
  if (e + 1 > out.seq_len() - 1) {
    throw ContractError("word_embedding: span [" + std::to_string(b) + ", " + std::to_string(e) +
                        ") outside a sequence of " + std::to_string(out.seq_len()) + " positions");
  }
  return ad::mean_rows(ad::slice_rows(avg_first_last(out), b + 1, e + 1));
}

ad::Tensor cce_from_outputs(const LayerOutputs& out, Span span, const Model& model) {
  const auto& cfg = model.config;
  const auto sent = sentence_embedding(out, cfg.exclude_specials);
  const auto features = cfg.mode == CceMode::MultiLevel ? ad::concat({sent, word_embedding(out, span)}) : sent;
  const auto row = ad::reshape(features, {1, features.numel()});
  const auto y = ad::add_row(ad::matmul(row, model.params.get("head.fc.w")), model.params.get("head.fc.b"));
  return ad::reshape(y, {cfg.cce_dim});
}

ad::Tensor cce(const WPS& wps, const Model& model, const Vocab& vocab) {
  const auto ids = wrap_special(tokenize(wps.sentence.raw, vocab));
  return cce_from_outputs(encode_tokens(ids, model), wps.token_span, model);
}

const LayerOutputs& EncodingCache::get(const std::string& text) {
  auto it = cache_.find(text);
  if (it != cache_.end()) return it->second;
  const auto ids = wrap_special(tokenize(text, vocab_));
  return cache_.emplace(text, encode_tokens(ids, model_)).first->second;
}

ad::Tensor EncodingCache::cce(const WPS& wps) { return cce_from_outputs(get(wps.sentence.raw), wps.token_span, model_); }

ad::Tensor mlm_logits(const ad::Tensor& hidden_rows, const Model& model) {
  return ad::add_row(ad::matmul(hidden_rows, ad::transpose(model.params.get("embed.tokens"))),
                     model.params.get("mlm.bias"));
}

}  // namespace mlctl
