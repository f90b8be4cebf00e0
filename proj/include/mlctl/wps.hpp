#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "mlctl/corpus.hpp"
#include "mlctl/tokenizer.hpp"

namespace mlctl {

// A sentence plus the position of one of its words.
struct WPS {
  Sentence sentence;
  std::string word;
  Span token_span;  // into tokenize(sentence.raw), without [CLS]/[SEP]
  Span char_span;   // byte offsets into sentence.raw

  bool operator==(const WPS&) const = default;
};

struct ParallelWPSPair {
  WPS s;
  WPS t;

  bool operator==(const ParallelWPSPair&) const = default;
};

// Per-condition rejection counts, accumulated across calls. A dictionary
// word is charged to the first condition it fails.
struct WpsStats {
  std::size_t candidates = 0;
  std::size_t rejected_source_spaced = 0;
  std::size_t rejected_source_tokens = 0;
  std::size_t rejected_target_spaced = 0;
  std::size_t rejected_target_tokens = 0;
  std::size_t emitted = 0;
};

// Emits one pair per dictionary entry (in dictionary order) whose source word
// occurs exactly once in pair.a, both as a spaced word and as a token
// subsequence, and whose translation does the same in pair.b.
std::vector<ParallelWPSPair> build_parallel_wps(const SentencePair& pair, const BilingualDictionary& dict,
                                                const Vocab& vocab, WpsStats* stats = nullptr,
                                                const TokenizerOptions& opts = {});

std::vector<ParallelWPSPair> build_corpus_wps(const std::vector<SentencePair>& pairs, const BilingualDictionary& dict,
                                              const Vocab& vocab, WpsStats* stats = nullptr,
                                              const TokenizerOptions& opts = {});

// JSON Lines, one object per pair with keys a_text, a_word, a_token_span,
// b_text, b_word, b_token_span, a_lang, b_lang (plus index, a_char_span and
// b_char_span for a lossless reload).
void write_wps_jsonl(const std::filesystem::path& path, const std::vector<ParallelWPSPair>& pairs);
std::vector<ParallelWPSPair> read_wps_jsonl(const std::filesystem::path& path);

}  // namespace mlctl
