#include "mlctl/corpus.hpp"

#include <cctype>
#include <fstream>
#include <random>
#include <set>

#include "mlctl/error.hpp"
#include "mlctl/log.hpp"

namespace mlctl {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find('\t', start);
    out.push_back(line.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open file");
  return in;
}

std::string strip_cr(std::string line) {
  if (!line.empty() && line.back() == '\r') line.pop_back();
  return line;
}

}  // namespace

bool BilingualDictionary::insert(const std::string& src, const std::string& tgt) {
  if (index_.count(src)) return false;
  index_.emplace(src, entries_.size());
  entries_.emplace_back(src, tgt);
  return true;
}

std::optional<std::string> BilingualDictionary::lookup(const std::string& src) const {
  auto it = index_.find(src);
  if (it == index_.end()) return std::nullopt;
  return entries_[it->second].second;
}

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) words.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return words;
}

std::vector<SentencePair> load_parallel_corpus(const std::filesystem::path& path, const std::string& lang_a,
                                               const std::string& lang_b) {
  if (lang_a.empty() || lang_b.empty() || lang_a == lang_b) {
    throw ContractError("load_parallel_corpus: language tags must be non-empty and distinct");
  }
  auto in = open_input(path);
  std::vector<SentencePair> pairs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(std::move(line));
    if (trim(line).empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 2) {
      throw ParseError(path.string(), lineno, "expected 2 tab-separated fields, found " + std::to_string(fields.size()));
    }
    auto a = trim(fields[0]);
    auto b = trim(fields[1]);
    if (a.empty() || b.empty()) throw ParseError(path.string(), lineno, "empty sentence");
    pairs.push_back({{std::move(a), lang_a, lineno}, {std::move(b), lang_b, lineno}});
  }
  return pairs;
}

void write_parallel_corpus(const std::filesystem::path& path, const std::vector<SentencePair>& pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open file for writing");
  for (const auto& p : pairs) {
    if (p.a.raw.find_first_of("\t\n") != std::string::npos || p.b.raw.find_first_of("\t\n") != std::string::npos) {
      throw ContractError("write_parallel_corpus: sentence contains a tab or newline");
    }
    out << p.a.raw << '\t' << p.b.raw << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

StopWords load_stopwords(const std::filesystem::path& path) {
  auto in = open_input(path);
  StopWords words;
  std::string line;
  while (std::getline(in, line)) {
    auto w = trim(line);
    if (!w.empty()) words.insert(std::move(w));
  }
  return words;
}

BilingualDictionary load_dictionary(const std::filesystem::path& path, const StopWords& stopwords,
                                    const std::string& src_lang, const std::string& tgt_lang) {
  auto in = open_input(path);
  BilingualDictionary dict(src_lang, tgt_lang);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = strip_cr(std::move(line));
    if (trim(line).empty()) continue;
    auto fields = split_tabs(line);
    if (fields.size() != 2) {
      throw ParseError(path.string(), lineno, "expected 2 tab-separated fields, found " + std::to_string(fields.size()));
    }
    auto src = trim(fields[0]);
    auto tgt = trim(fields[1]);
    if (src.empty() || tgt.empty()) throw ParseError(path.string(), lineno, "empty dictionary word");
    if (split_whitespace(src).size() != 1 || split_whitespace(tgt).size() != 1) {
      log::warn(path.string() + ":" + std::to_string(lineno) + ": multi-word entry skipped");
      continue;
    }
    if (stopwords.count(src) || stopwords.count(tgt)) continue;
    if (!dict.insert(src, tgt)) {
      log::warn(path.string() + ":" + std::to_string(lineno) + ": duplicate source word '" + src +
                "', keeping first translation");
    }
  }
  if (dict.empty()) log::warn(path.string() + ": dictionary is empty after stop-word filtering");
  return dict;
}

void write_dictionary(const std::filesystem::path& path, const BilingualDictionary& dict) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open file for writing");
  for (const auto& [s, t] : dict.entries()) out << s << '\t' << t << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

SyntheticBitext make_synthetic_bitext(std::size_t vocab_size, std::size_t n_sentences, std::uint64_t seed) {
  if (vocab_size < 10) throw ContractError("make_synthetic_bitext: vocab_size must be at least 10");
  if (n_sentences < 1) throw ContractError("make_synthetic_bitext: n_sentences must be at least 1");

  std::mt19937_64 rng(seed);
  // Disjoint consonant sets keep the two languages' surface forms apart.
  const std::string vowels = "aeiou";
  auto make_word = [&](const std::string& consonants) {
    std::uniform_int_distribution<std::size_t> syl(2, 3);
    std::uniform_int_distribution<std::size_t> cpick(0, consonants.size() - 1);
    std::uniform_int_distribution<std::size_t> vpick(0, vowels.size() - 1);
    std::string w;
    for (std::size_t i = 0, n = syl(rng); i < n; ++i) {
      w += consonants[cpick(rng)];
      w += vowels[vpick(rng)];
    }
    return w;
  };

  std::set<std::string> seen;
  auto fresh = [&](const std::string& consonants) {
    while (true) {
      auto w = make_word(consonants);
      if (seen.insert(w).second) return w;
    }
  };
  std::vector<std::string> words_a;
  std::vector<std::string> words_b;
  SyntheticBitext out;
  out.dictionary = BilingualDictionary("synA", "synB");
  for (std::size_t i = 0; i < vocab_size; ++i) {
    words_a.push_back(fresh("bdfgklmnprst"));
    words_b.push_back(fresh("chjqvwxyz"));
    out.dictionary.insert(words_a.back(), words_b.back());
  }

  std::uniform_int_distribution<std::size_t> len(4, 8);
  std::uniform_int_distribution<std::size_t> pick(0, vocab_size - 1);
  for (std::size_t s = 0; s < n_sentences; ++s) {
    std::string a;
    std::string b;
    for (std::size_t i = 0, n = len(rng); i < n; ++i) {
      const auto w = pick(rng);
      if (i) {
        a += ' ';
        b += ' ';
      }
      a += words_a[w];
      b += words_b[w];
    }
    out.pairs.push_back({{a, "synA", s + 1}, {b, "synB", s + 1}});
  }
  return out;
}

}  // namespace mlctl
