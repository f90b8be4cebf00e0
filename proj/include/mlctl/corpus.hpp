#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mlctl {

struct Sentence {
  std::string raw;
  std::string lang;
  std::size_t index = 0;

  bool operator==(const Sentence&) const = default;
};

struct SentencePair {
  Sentence a;
  Sentence b;

  bool operator==(const SentencePair&) const = default;
};

using StopWords = std::unordered_set<std::string>;

// Word-to-word translation map that keeps insertion order; one target per
// source word.
class BilingualDictionary {
 public:
  BilingualDictionary() = default;
  BilingualDictionary(std::string src_lang, std::string tgt_lang)
      : src_lang_(std::move(src_lang)), tgt_lang_(std::move(tgt_lang)) {}

  // Returns false (and leaves the map unchanged) when `src` is already present.
  bool insert(const std::string& src, const std::string& tgt);
  std::optional<std::string> lookup(const std::string& src) const;

  const std::vector<std::pair<std::string, std::string>>& entries() const noexcept { return entries_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::string& src_lang() const noexcept { return src_lang_; }
  const std::string& tgt_lang() const noexcept { return tgt_lang_; }
  void set_langs(std::string src, std::string tgt) {
    src_lang_ = std::move(src);
    tgt_lang_ = std::move(tgt);
  }

 private:
  std::string src_lang_;
  std::string tgt_lang_;
  std::vector<std::pair<std::string, std::string>> entries_;
  std::unordered_map<std::string, std::size_t> index_;
};

std::string trim(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);

// Two tab-separated columns per line. Blank lines are skipped; line numbers
// in errors and in Sentence::index are 1-based file lines.
std::vector<SentencePair> load_parallel_corpus(const std::filesystem::path& path, const std::string& lang_a = "a",
                                               const std::string& lang_b = "b");
void write_parallel_corpus(const std::filesystem::path& path, const std::vector<SentencePair>& pairs);

StopWords load_stopwords(const std::filesystem::path& path);

// Drops entries with a stop word on either side, and keeps the first target
// for a repeated source word (with a warning).
BilingualDictionary load_dictionary(const std::filesystem::path& path, const StopWords& stopwords,
                                    const std::string& src_lang = "a", const std::string& tgt_lang = "b");
void write_dictionary(const std::filesystem::path& path, const BilingualDictionary& dict);

struct SyntheticBitext {
  std::vector<SentencePair> pairs;
  BilingualDictionary dictionary;
};

// Random "synA" sentences over `vocab_size` invented words and their
// word-for-word "synB" images. Fully determined by the arguments.
SyntheticBitext make_synthetic_bitext(std::size_t vocab_size, std::size_t n_sentences, std::uint64_t seed);

}  // namespace mlctl
