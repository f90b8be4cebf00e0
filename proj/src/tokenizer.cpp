#include "mlctl/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

#include "mlctl/error.hpp"

namespace mlctl {
namespace {

constexpr std::string_view kSpecials[special::kCount] = {"[UNK]", "[PAD]", "[MASK]", "[CLS]", "[SEP]"};

std::string maybe_lower(std::string_view s, const TokenizerOptions& opts) {
  std::string out(s);
  if (opts.lowercase) {
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

std::size_t utf8_len(unsigned char lead) {
  if (lead < 0x80) return 1;
  if ((lead >> 5) == 0x6) return 2;
  if ((lead >> 4) == 0xE) return 3;
  if ((lead >> 3) == 0x1E) return 4;
  return 1;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

std::vector<std::pair<std::size_t, std::size_t>> word_bounds(std::string_view s) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && is_space(s[i])) ++i;
    std::size_t j = i;
    while (j < s.size() && !is_space(s[j])) ++j;
    if (j > i) out.emplace_back(i, j);
    i = j;
  }
  return out;
}

using Ranked = std::vector<std::pair<std::string, std::size_t>>;

Ranked rank(const std::map<std::string, std::size_t>& counts) {
  Ranked r(counts.begin(), counts.end());
  std::stable_sort(r.begin(), r.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
  return r;
}

}  // namespace

Vocab::Vocab() {
  for (auto s : kSpecials) push(std::string(s));
}

void Vocab::push(std::string tok) {
  if (index_.count(tok)) return;
  index_.emplace(tok, tokens_.size());
  tokens_.push_back(std::move(tok));
}

Vocab Vocab::from_tokens(const std::vector<std::string>& tokens) {
  Vocab v;
  for (const auto& t : tokens) {
    if (t.empty()) continue;
    v.push(t);
  }
  return v;
}

bool Vocab::contains(std::string_view tok) const { return index_.count(std::string(tok)) > 0; }

TokenId Vocab::id(std::string_view tok) const {
  auto it = index_.find(std::string(tok));
  return it == index_.end() ? special::kUnk : it->second;
}

std::vector<std::string> utf8_chars(std::string_view word) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < word.size()) {
    const std::size_t n = std::min(utf8_len(static_cast<unsigned char>(word[i])), word.size() - i);
    out.emplace_back(word.substr(i, n));
    i += n;
  }
  return out;
}

Vocab build_vocab(const std::vector<Sentence>& corpus, std::size_t max_size, const TokenizerOptions& opts) {
  if (corpus.empty()) throw ContractError("build_vocab: corpus is empty");

  std::set<std::string> alphabet;
  std::map<std::string, std::size_t> word_counts;
  for (const auto& s : corpus) {
    for (const auto& w : split_whitespace(maybe_lower(s.raw, opts))) {
      ++word_counts[w];
      for (auto& c : utf8_chars(w)) alphabet.insert(std::move(c));
    }
  }
  const std::size_t required = special::kCount + 2 * alphabet.size();
  if (max_size < required) {
    throw ContractError("build_vocab: max_size " + std::to_string(max_size) + " is below the " +
                        std::to_string(required) + " special and single-character tokens");
  }

  Vocab v;
  std::vector<std::string> toks;
  for (const auto& c : alphabet) toks.push_back(c);
  for (const auto& c : alphabet) toks.push_back("##" + c);
  v = Vocab::from_tokens(toks);

  std::vector<std::string> extra;
  auto fill = [&](const Ranked& ranked) {
    for (const auto& [tok, n] : ranked) {
      if (v.size() + extra.size() >= max_size) return;
      if (!v.contains(tok) && std::find(extra.begin(), extra.end(), tok) == extra.end()) extra.push_back(tok);
    }
  };
  fill(rank(word_counts));

  std::map<std::string, std::size_t> suffix_counts;
  for (const auto& [w, n] : word_counts) {
    auto chars = utf8_chars(w);
    std::string suffix;
    // Proper suffixes of at least two characters.
    for (std::size_t k = chars.size(); k-- > 1;) {
      suffix.insert(0, chars[k]);
      if (chars.size() - k >= 2) suffix_counts["##" + suffix] += n;
    }
  }
  fill(rank(suffix_counts));

  toks.insert(toks.end(), extra.begin(), extra.end());
  return Vocab::from_tokens(toks);
}

TokenSeq tokenize(std::string_view text, const Vocab& vocab, const TokenizerOptions& opts) {
  TokenSeq seq;
  const std::string norm = maybe_lower(text, opts);
  for (auto [b, e] : word_bounds(norm)) {
    const std::string_view word(norm.data() + b, e - b);
    const std::size_t first = seq.ids.size();
    // Character boundaries as byte offsets.
    std::vector<std::size_t> cuts{0};
    for (const auto& c : utf8_chars(word)) cuts.push_back(cuts.back() + c.size());

    std::size_t ci = 0;
    while (ci + 1 < cuts.size()) {
      bool matched = false;
      for (std::size_t cj = cuts.size() - 1; cj > ci; --cj) {
        std::string piece(word.substr(cuts[ci], cuts[cj] - cuts[ci]));
        if (ci > 0) piece.insert(0, "##");
        if (vocab.contains(piece)) {
          seq.ids.push_back(vocab.id(piece));
          seq.pieces.push_back(std::move(piece));
          ci = cj;
          matched = true;
          break;
        }
      }
      if (!matched) {
        seq.ids.push_back(special::kUnk);
        seq.pieces.push_back(vocab.token(special::kUnk));
        ++ci;
      }
    }
    seq.word_spans.emplace_back(first, seq.ids.size());
    seq.word_chars.emplace_back(b, e);
  }
  return seq;
}

std::size_t count_spaced_word(std::string_view text, std::string_view word) {
  std::size_t n = 0;
  for (auto [b, e] : word_bounds(text)) {
    if (text.substr(b, e - b) == word) ++n;
  }
  return n;
}

std::vector<std::size_t> find_token_subsequence(const TokenSeq& haystack, const TokenSeq& needle) {
  if (needle.ids.empty()) throw ContractError("count_token_subsequence: empty needle");
  std::vector<std::size_t> hits;
  const auto& h = haystack.ids;
  const auto& n = needle.ids;
  if (n.size() > h.size()) return hits;
  for (std::size_t i = 0; i + n.size() <= h.size(); ++i) {
    if (std::equal(n.begin(), n.end(), h.begin() + static_cast<std::ptrdiff_t>(i))) hits.push_back(i);
  }
  return hits;
}

std::size_t count_token_subsequence(const TokenSeq& haystack, const TokenSeq& needle) {
  return find_token_subsequence(haystack, needle).size();
}

void write_vocab(const std::filesystem::path& path, const Vocab& vocab) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open file for writing");
  for (const auto& t : vocab.tokens()) out << t << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

Vocab read_vocab(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open file");
  std::vector<std::string> toks;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (lineno <= special::kCount) {
      if (line != kSpecials[lineno - 1]) {
        throw ParseError(path.string(), lineno, "expected special token " + std::string(kSpecials[lineno - 1]));
      }
      continue;
    }
    if (line.empty()) throw ParseError(path.string(), lineno, "empty token");
    toks.push_back(line);
  }
  if (lineno < special::kCount) throw ParseError(path.string(), lineno, "missing special-token header");
  auto v = Vocab::from_tokens(toks);
  if (v.size() != special::kCount + toks.size()) throw ParseError(path.string(), lineno, "duplicate token in vocabulary");
  return v;
}

}  // namespace mlctl
