#include <cmath>

#include <gtest/gtest.h>

#include "mlctl/encoder.hpp"
#include "mlctl/error.hpp"

using namespace mlctl;

namespace {

EncoderConfig small(std::size_t vocab = 20) {
  EncoderConfig c;
  c.layers = 2;
  c.heads = 2;
  c.hidden = 8;
  c.ffn = 16;
  c.max_len = 12;
  c.vocab_size = vocab;
  c.cce_dim = 8;
  return c;
}

std::vector<double> values(const ad::Tensor& t) { return {t.data().begin(), t.data().end()}; }

void expect_close(const ad::Tensor& a, const std::vector<double>& b, double tol = 1e-12) {
  ASSERT_EQ(a.numel(), b.size());
  for (std::size_t i = 0; i < b.size(); ++i) EXPECT_NEAR(a.at(i), b[i], tol) << "index " << i;
}

}  // namespace

TEST(Encoder, ConfigValidation) {
  auto c = small();
  EXPECT_NO_THROW(c.validate());
  c.heads = 3;
  EXPECT_THROW(c.validate(), ContractError);
  c = small(special::kCount);
  EXPECT_THROW(c.validate(), ContractError);
  c = small();
  c.position_init_std = -1.0;
  EXPECT_THROW(c.validate(), ContractError);
}

TEST(Encoder, ConfigJsonRoundTrip) {
  auto c = small();
  c.mode = CceMode::SentenceOnly;
  c.position_init_std = 0.5;
  const nlohmann::json j = c;
  const auto back = j.get<EncoderConfig>();
  EXPECT_EQ(nlohmann::json(back), j);
  EXPECT_EQ(cce_mode_from_string(to_string(CceMode::MultiLevel)), CceMode::MultiLevel);
  EXPECT_THROW(cce_mode_from_string("both"), ContractError);
}

TEST(Encoder, OutputShapes) {
  const auto m = init_model(small(), 1);
  const std::vector<TokenId> ids{special::kCls, 7, 8, 9, special::kSep};
  const auto out = encode_tokens(ids, m);
  ASSERT_EQ(out.layers.size(), 3u);
  for (const auto& l : out.layers) EXPECT_EQ(l.shape(), (ad::Shape{5, 8}));
  EXPECT_EQ(sentence_embedding(out).shape(), (ad::Shape{8}));
  EXPECT_EQ(word_embedding(out, {0, 2}).shape(), (ad::Shape{8}));
  EXPECT_EQ(cce_from_outputs(out, {1, 2}, m).shape(), (ad::Shape{8}));
}

TEST(Encoder, InitIsDeterministicInSeed) {
  const auto a = init_model(small(), 5);
  const auto b = init_model(small(), 5);
  const auto c = init_model(small(), 6);
  EXPECT_EQ(values(a.params.get("layer0.attn.q.w")), values(b.params.get("layer0.attn.q.w")));
  EXPECT_NE(values(a.params.get("layer0.attn.q.w")), values(c.params.get("layer0.attn.q.w")));
}

TEST(Encoder, BodyDoesNotDependOnMode) {
  auto cfg = small();
  const auto a = init_model(cfg, 3);
  cfg.mode = CceMode::SentenceOnly;
  const auto b = init_model(cfg, 3);
  EXPECT_EQ(values(a.params.get("layer1.ffn.out.w")), values(b.params.get("layer1.ffn.out.w")));
  EXPECT_EQ(b.params.get("head.fc.w").shape(), (ad::Shape{8, 8}));
  EXPECT_EQ(a.params.get("head.fc.w").shape(), (ad::Shape{16, 8}));
}

TEST(Encoder, PositionTableStartsAtZero) {
  const auto m = init_model(small(), 1);
  for (double v : m.params.get("embed.positions").data()) EXPECT_EQ(v, 0.0);
}

TEST(Encoder, PermutationEquivariantWithoutPositions) {
  const auto m = init_model(small(), 2);
  const auto a = encode_tokens(std::vector<TokenId>{special::kCls, 7, 8, 9, special::kSep}, m);
  const auto b = encode_tokens(std::vector<TokenId>{special::kCls, 9, 7, 8, special::kSep}, m);
  // Token 7 moves from position 1 to 2.
  for (std::size_t k = 0; k < 8; ++k) {
    EXPECT_NEAR(a.last().at(1, k), b.last().at(2, k), 1e-12);
    EXPECT_NEAR(a.last().at(3, k), b.last().at(1, k), 1e-12);
  }
  expect_close(sentence_embedding(a), values(sentence_embedding(b)));
}

TEST(Encoder, PositionsBreakSymmetryWhenInitialised) {
  auto cfg = small();
  cfg.position_init_std = 0.5;
  const auto m = init_model(cfg, 2);
  const auto a = encode_tokens(std::vector<TokenId>{special::kCls, 7, 8, special::kSep}, m);
  const auto b = encode_tokens(std::vector<TokenId>{special::kCls, 8, 7, special::kSep}, m);
  EXPECT_GT(std::abs(a.last().at(1, 0) - b.last().at(2, 0)), 1e-6);
}

TEST(Encoder, SentencePoolingAveragesFirstAndLast) {
  const auto m = init_model(small(), 4);
  const auto out = encode_tokens(std::vector<TokenId>{special::kCls, 6, 10, special::kSep}, m);
  std::vector<double> expect(8, 0.0);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t k = 0; k < 8; ++k) expect[k] += (out.first().at(r, k) + out.last().at(r, k)) / 2.0 / 4.0;
  expect_close(sentence_embedding(out), expect);

  std::vector<double> inner(8, 0.0);
  for (std::size_t r = 1; r < 3; ++r)
    for (std::size_t k = 0; k < 8; ++k) inner[k] += (out.first().at(r, k) + out.last().at(r, k)) / 2.0 / 2.0;
  expect_close(sentence_embedding(out, true), inner);
}

TEST(Encoder, WordPoolingUsesSpanAfterCls) {
  const auto m = init_model(small(), 4);
  const auto out = encode_tokens(std::vector<TokenId>{special::kCls, 6, 10, 11, special::kSep}, m);
  std::vector<double> expect(8, 0.0);
  for (std::size_t r = 2; r < 4; ++r)
    for (std::size_t k = 0; k < 8; ++k) expect[k] += (out.first().at(r, k) + out.last().at(r, k)) / 2.0 / 2.0;
  expect_close(word_embedding(out, {1, 3}), expect);
}

TEST(Encoder, BadSpansAndInputsThrow) {
  const auto m = init_model(small(), 4);
  const auto out = encode_tokens(std::vector<TokenId>{special::kCls, 6, 10, special::kSep}, m);
  EXPECT_THROW(word_embedding(out, {1, 1}), ContractError);
  EXPECT_THROW(word_embedding(out, {1, 3}), ContractError);
  EXPECT_THROW(encode_tokens(std::vector<TokenId>{}, m), ContractError);
  EXPECT_THROW(encode_tokens(std::vector<TokenId>(13, 6), m), ContractError);
  EXPECT_THROW(encode_tokens(std::vector<TokenId>{special::kCls, 20, special::kSep}, m), ContractError);
}

TEST(Encoder, IdentityHeadGivesConcatenation) {
  auto cfg = small();
  cfg.cce_dim = 16;
  auto m = init_model(cfg, 8);
  auto w = m.params.get("head.fc.w").mutable_data();
  for (std::size_t i = 0; i < 16; ++i)
    for (std::size_t j = 0; j < 16; ++j) w[i * 16 + j] = i == j ? 1.0 : 0.0;
  const auto out = encode_tokens(std::vector<TokenId>{special::kCls, 6, 10, special::kSep}, m);
  auto expect = values(sentence_embedding(out));
  const auto word = values(word_embedding(out, {1, 2}));
  expect.insert(expect.end(), word.begin(), word.end());
  expect_close(cce_from_outputs(out, {1, 2}, m), expect);
}

TEST(Encoder, SentenceOnlyHeadIgnoresSpan) {
  auto cfg = small();
  cfg.mode = CceMode::SentenceOnly;
  const auto m = init_model(cfg, 8);
  const auto out = encode_tokens(std::vector<TokenId>{special::kCls, 6, 10, special::kSep}, m);
  expect_close(cce_from_outputs(out, {0, 1}, m), values(cce_from_outputs(out, {1, 2}, m)), 0.0);
}

TEST(Encoder, FreshHeadAveragesHalves) {
  auto cfg = small();
  cfg.fc_init_noise = 0.0;
  const auto m = init_model(cfg, 8);
  const auto out = encode_tokens(std::vector<TokenId>{special::kCls, 6, 10, special::kSep}, m);
  const auto s = values(sentence_embedding(out));
  const auto w = values(word_embedding(out, {0, 1}));
  std::vector<double> expect(8);
  for (std::size_t k = 0; k < 8; ++k) expect[k] = (s[k] + w[k]) / 2.0;
  expect_close(cce_from_outputs(out, {0, 1}, m), expect);
}

TEST(Encoder, CacheMatchesDirectEncoding) {
  const auto v = Vocab::from_tokens({"a", "b", "##a", "##b"});
  EncoderConfig cfg = small(v.size());
  const auto m = init_model(cfg, 9);
  EncodingCache cache(m, v);
  const WPS w{{"ab a", "x", 1}, "a", {2, 3}, {3, 4}};
  expect_close(cache.cce(w), values(cce(w, m, v)), 0.0);
  EXPECT_EQ(&cache.get("ab a"), &cache.get("ab a"));
}

TEST(Encoder, MlmLogitsShape) {
  const auto m = init_model(small(), 1);
  const auto out = encode_tokens(std::vector<TokenId>{special::kCls, 6, special::kSep}, m);
  EXPECT_EQ(mlm_logits(out.last(), m).shape(), (ad::Shape{3, 20}));
}
