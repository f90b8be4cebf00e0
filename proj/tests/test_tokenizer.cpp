#include <algorithm>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

#include "mlctl/error.hpp"
#include "mlctl/tokenizer.hpp"
#include "support.hpp"

using namespace mlctl;

namespace {

std::vector<Sentence> sentences(std::initializer_list<const char*> texts) {
  std::vector<Sentence> out;
  std::size_t i = 0;
  for (const char* t : texts) out.push_back({t, "x", ++i});
  return out;
}

Vocab cat_vocab() {
  return Vocab::from_tokens({"c", "a", "t", "l", "o", "g", "s", "##c", "##a", "##t", "##l", "##o", "##g", "##s", "cat",
                             "##alog", "##at"});
}

std::string strip_join(const TokenSeq& s) {
  std::string out;
  for (const auto& p : s.pieces) out += p.rfind("##", 0) == 0 ? p.substr(2) : p;
  return out;
}

}  // namespace

TEST(Vocab, SpecialsOccupyFirstIds) {
  const auto v = Vocab::from_tokens({"x"});
  EXPECT_EQ(v.token(special::kUnk), "[UNK]");
  EXPECT_EQ(v.token(special::kPad), "[PAD]");
  EXPECT_EQ(v.token(special::kMask), "[MASK]");
  EXPECT_EQ(v.token(special::kCls), "[CLS]");
  EXPECT_EQ(v.token(special::kSep), "[SEP]");
  EXPECT_EQ(v.id("x"), 5u);
  EXPECT_EQ(v.id("absent"), special::kUnk);
}

TEST(BuildVocab, FrequentWholeWordIsAToken) {
  const auto v = build_vocab(sentences({"aa aa"}), 20);
  EXPECT_TRUE(v.contains("aa"));
}

TEST(BuildVocab, Deterministic) {
  const auto c = sentences({"the cat sat on the mat", "a cat is a cat"});
  EXPECT_EQ(build_vocab(c, 40), build_vocab(c, 40));
}

TEST(BuildVocab, TooSmallLimitIsAnError) {
  // alphabet {a, b}: 5 specials + 2 initial + 2 continuation pieces
  EXPECT_THROW(build_vocab(sentences({"ab ba"}), 8), ContractError);
  EXPECT_NO_THROW(build_vocab(sentences({"ab ba"}), 9));
}

TEST(BuildVocab, EmptyCorpusIsAnError) {
  EXPECT_THROW(build_vocab({}, 100), ContractError);
}

TEST(BuildVocab, EveryCharacterPresent) {
  const auto c = sentences({"héllo wörld", "zebra"});
  const auto v = build_vocab(c, 200);
  for (const auto& s : c)
    for (const auto& w : split_whitespace(s.raw))
      for (const auto& ch : utf8_chars(w)) {
        EXPECT_TRUE(v.contains(ch)) << ch;
        EXPECT_TRUE(v.contains("##" + ch)) << ch;
      }
}

TEST(BuildVocab, FrequencyTiesAreLexicographic) {
  const auto v = build_vocab(sentences({"bb aa"}), 5 + 4 + 1);
  EXPECT_TRUE(v.contains("aa"));
  EXPECT_FALSE(v.contains("bb"));
}

TEST(Tokenize, WholeWordHit) {
  const auto v = cat_vocab();
  const auto s = tokenize("cat", v);
  EXPECT_EQ(s.ids, (std::vector<TokenId>{v.id("cat")}));
  ASSERT_EQ(s.word_spans.size(), 1u);
  EXPECT_EQ(s.word_spans[0], (Span{0, 1}));
}

TEST(Tokenize, GreedyLongestMatch) {
  const auto s = tokenize("catalog", cat_vocab());
  EXPECT_EQ(s.pieces, (std::vector<std::string>{"cat", "##alog"}));
}

TEST(Tokenize, EmptyInput) {
  const auto s = tokenize("", cat_vocab());
  EXPECT_TRUE(s.empty());
  EXPECT_TRUE(s.word_spans.empty());
  EXPECT_TRUE(tokenize("   \t ", cat_vocab()).empty());
}

TEST(Tokenize, UnknownCharacterBecomesUnk) {
  const auto s = tokenize("cXt", cat_vocab());
  EXPECT_EQ(s.pieces, (std::vector<std::string>{"c", "[UNK]", "##t"}));
  EXPECT_EQ(s.word_spans[0], (Span{0, 3}));
}

TEST(Tokenize, SpansAndCharOffsets) {
  const auto v = cat_vocab();
  const std::string text = "cat  catalog cats";
  const auto s = tokenize(text, v);
  ASSERT_EQ(s.word_spans.size(), 3u);
  EXPECT_EQ(s.word_spans[0], (Span{0, 1}));
  EXPECT_EQ(s.word_spans[1], (Span{1, 3}));
  EXPECT_EQ(s.word_spans[2], (Span{3, 5}));
  EXPECT_EQ(text.substr(s.word_chars[1].first, s.word_chars[1].second - s.word_chars[1].first), "catalog");
}

TEST(Tokenize, LowercaseOption) {
  const auto v = cat_vocab();
  EXPECT_EQ(tokenize("CAT", v).ids[0], special::kUnk);
  TokenizerOptions o;
  o.lowercase = true;
  EXPECT_EQ(tokenize("CAT", v, o).pieces, (std::vector<std::string>{"cat"}));
}

TEST(TokenizeProperty, PiecesReconstructWordsAndSpansPartition) {
  std::mt19937_64 rng(3);
  const std::string alphabet = "abcde";
  std::vector<Sentence> corpus;
  for (int i = 0; i < 30; ++i) {
    std::string s;
    for (int w = 0; w < 6; ++w) {
      std::string word;
      for (std::size_t k = 0, n = 1 + rng() % 6; k < n; ++k) word += alphabet[rng() % alphabet.size()];
      s += (w ? " " : "") + word;
    }
    corpus.push_back({s, "x", static_cast<std::size_t>(i + 1)});
  }
  const auto v = build_vocab(corpus, 40);
  for (const auto& sent : corpus) {
    const auto s = tokenize(sent.raw, v);
    ASSERT_EQ(s.ids.size(), s.pieces.size());
    const auto words = split_whitespace(sent.raw);
    ASSERT_EQ(s.word_spans.size(), words.size());
    std::size_t expect_begin = 0;
    for (std::size_t w = 0; w < words.size(); ++w) {
      const auto [b, e] = s.word_spans[w];
      EXPECT_EQ(b, expect_begin);
      EXPECT_LT(b, e);
      expect_begin = e;
      TokenSeq part;
      part.pieces.assign(s.pieces.begin() + static_cast<long>(b), s.pieces.begin() + static_cast<long>(e));
      EXPECT_EQ(strip_join(part), words[w]);
      EXPECT_EQ(part.pieces[0].rfind("##", 0), std::string::npos);
    }
    EXPECT_EQ(expect_begin, s.size());
  }
}

TEST(CountSpaced, Examples) {
  EXPECT_EQ(count_spaced_word("cat sat", "cat"), 1u);
  EXPECT_EQ(count_spaced_word("cat catalog", "cat"), 1u);
  EXPECT_EQ(count_spaced_word("cat cat", "cat"), 2u);
  EXPECT_EQ(count_spaced_word("concat", "cat"), 0u);
  EXPECT_EQ(count_spaced_word("", "cat"), 0u);
}

TEST(CountSpaced, SingleOccurrenceProperty) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::string w = "w" + std::to_string(trial);
    std::string s;
    const int n = 1 + static_cast<int>(rng() % 6);
    const int at = static_cast<int>(rng() % n);
    for (int k = 0; k < n; ++k) s += (k ? " " : "") + (k == at ? w : "x" + std::to_string(k));
    EXPECT_EQ(count_spaced_word(s, w), 1u) << s;
  }
}

TEST(CountTokens, Examples) {
  TokenSeq h;
  h.ids = {1, 2, 3, 1, 2};
  TokenSeq n;
  n.ids = {1, 2};
  EXPECT_EQ(count_token_subsequence(h, n), 2u);
  EXPECT_EQ(count_token_subsequence(h, h), 1u);
  n.ids = {9};
  EXPECT_EQ(count_token_subsequence(h, n), 0u);
  n.ids = {};
  EXPECT_THROW(count_token_subsequence(h, n), ContractError);
}

TEST(CountTokens, OverlapsAreCounted) {
  TokenSeq h;
  h.ids = {7, 7, 7};
  TokenSeq n;
  n.ids = {7, 7};
  EXPECT_EQ(count_token_subsequence(h, n), 2u);
  EXPECT_EQ(find_token_subsequence(h, n), (std::vector<std::size_t>{0, 1}));
}

TEST(CountTokens, MatchesBruteForce) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 300; ++trial) {
    TokenSeq h, n;
    for (std::size_t k = 0, len = rng() % 12; k < len; ++k) h.ids.push_back(rng() % 3);
    for (std::size_t k = 0, len = 1 + rng() % 3; k < len; ++k) n.ids.push_back(rng() % 3);
    std::size_t expect = 0;
    for (std::size_t s = 0; s + n.ids.size() <= h.ids.size(); ++s)
      expect += std::equal(n.ids.begin(), n.ids.end(), h.ids.begin() + static_cast<long>(s));
    EXPECT_EQ(count_token_subsequence(h, n), expect);
  }
}

TEST(VocabFile, RoundTrip) {
  test::TempDir dir("vocab");
  const auto v = build_vocab(sentences({"the cat sat", "le chat assis"}), 60);
  write_vocab(dir / "v.txt", v);
  EXPECT_EQ(read_vocab(dir / "v.txt"), v);
}

TEST(VocabFile, BadHeaderIsRejected) {
  test::TempDir dir("vocab");
  std::ofstream(dir / "v.txt") << "[PAD]\n[UNK]\n[MASK]\n[CLS]\n[SEP]\nx\n";
  EXPECT_THROW(read_vocab(dir / "v.txt"), ParseError);
}
