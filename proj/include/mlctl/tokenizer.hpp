#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "mlctl/corpus.hpp"

namespace mlctl {

using TokenId = std::size_t;

namespace special {
inline constexpr TokenId kUnk = 0;
inline constexpr TokenId kPad = 1;
inline constexpr TokenId kMask = 2;
inline constexpr TokenId kCls = 3;
inline constexpr TokenId kSep = 4;
inline constexpr std::size_t kCount = 5;
}  // namespace special

// Subword vocabulary. Ids 0..4 are [UNK] [PAD] [MASK] [CLS] [SEP];
// continuation pieces carry a "##" prefix.
class Vocab {
 public:
  Vocab();
  // Specials are prepended; duplicates and explicit specials are ignored.
  static Vocab from_tokens(const std::vector<std::string>& tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const { return tokens_.at(id); }
  bool contains(std::string_view tok) const;
  // Id of `tok`, or kUnk when absent.
  TokenId id(std::string_view tok) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  void push(std::string tok);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

using Span = std::pair<std::size_t, std::size_t>;  // half-open

struct TokenSeq {
  std::vector<TokenId> ids;
  std::vector<std::string> pieces;
  std::vector<Span> word_spans;  // token span of word i
  std::vector<Span> word_chars;  // byte span of word i in the input text

  std::size_t size() const noexcept { return ids.size(); }
  bool empty() const noexcept { return ids.empty(); }
};

struct TokenizerOptions {
  bool lowercase = false;
};

// Splits a word into UTF-8 characters (one string per code point).
std::vector<std::string> utf8_chars(std::string_view word);

// Specials, every character seen (in both initial and "##" form), then the
// most frequent whole words, then the most frequent suffix pieces, until
// `max_size` tokens. Frequency ties are broken lexicographically.
Vocab build_vocab(const std::vector<Sentence>& corpus, std::size_t max_size, const TokenizerOptions& opts = {});

// Greedy longest-match subword segmentation of each whitespace-separated
// word. A character with no matching piece becomes [UNK].
TokenSeq tokenize(std::string_view text, const Vocab& vocab, const TokenizerOptions& opts = {});

// Occurrences of `word` as a whole whitespace-delimited word in `text`
// (the text is treated as padded with a space on each side).
std::size_t count_spaced_word(std::string_view text, std::string_view word);

// Contiguous, possibly overlapping occurrences of needle.ids in haystack.ids.
std::size_t count_token_subsequence(const TokenSeq& haystack, const TokenSeq& needle);
// Start positions of those occurrences.
std::vector<std::size_t> find_token_subsequence(const TokenSeq& haystack, const TokenSeq& needle);

// One token per line; the first five lines are the special tokens.
void write_vocab(const std::filesystem::path& path, const Vocab& vocab);
Vocab read_vocab(const std::filesystem::path& path);

}  // namespace mlctl
