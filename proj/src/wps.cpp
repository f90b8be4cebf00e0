#include "mlctl/wps.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

#include "mlctl/error.hpp"

namespace mlctl {
namespace {

// Location of the word if it passes both uniqueness tests in `sentence`.
std::optional<WPS> locate_unique(const Sentence& sentence, const TokenSeq& sent_tokens, const std::string& word,
                                 const Vocab& vocab, const TokenizerOptions& opts, std::size_t& spaced_fail,
                                 std::size_t& token_fail) {
  if (count_spaced_word(sentence.raw, word) != 1) {
    ++spaced_fail;
    return std::nullopt;
  }
  const TokenSeq word_tokens = tokenize(word, vocab, opts);
  if (word_tokens.empty()) {
    ++token_fail;
    return std::nullopt;
  }
  const auto hits = find_token_subsequence(sent_tokens, word_tokens);
  if (hits.size() != 1) {
    ++token_fail;
    return std::nullopt;
  }
  const Span token_span{hits[0], hits[0] + word_tokens.size()};
  // The unique token occurrence is the word's own segmentation.
  for (std::size_t w = 0; w < sent_tokens.word_spans.size(); ++w) {
    if (sent_tokens.word_spans[w] == token_span) {
      return WPS{sentence, word, token_span, sent_tokens.word_chars[w]};
    }
  }
  ++token_fail;
  return std::nullopt;
}

}  // namespace

std::vector<ParallelWPSPair> build_parallel_wps(const SentencePair& pair, const BilingualDictionary& dict,
                                                const Vocab& vocab, WpsStats* stats, const TokenizerOptions& opts) {
  if (!dict.src_lang().empty() && !dict.tgt_lang().empty() &&
      (dict.src_lang() != pair.a.lang || dict.tgt_lang() != pair.b.lang)) {
    throw ContractError("build_parallel_wps: sentence languages (" + pair.a.lang + ", " + pair.b.lang +
                        ") do not match dictionary (" + dict.src_lang() + ", " + dict.tgt_lang() + ")");
  }
  WpsStats local;
  WpsStats& st = stats ? *stats : local;
  std::vector<ParallelWPSPair> out;
  const TokenSeq tok_a = tokenize(pair.a.raw, vocab, opts);
  const TokenSeq tok_b = tokenize(pair.b.raw, vocab, opts);
  for (const auto& [src, tgt] : dict.entries()) {
    ++st.candidates;
    auto s = locate_unique(pair.a, tok_a, src, vocab, opts, st.rejected_source_spaced, st.rejected_source_tokens);
    if (!s) continue;
    auto t = locate_unique(pair.b, tok_b, tgt, vocab, opts, st.rejected_target_spaced, st.rejected_target_tokens);
    if (!t) continue;
    ++st.emitted;
    out.push_back({std::move(*s), std::move(*t)});
  }
  return out;
}

std::vector<ParallelWPSPair> build_corpus_wps(const std::vector<SentencePair>& pairs, const BilingualDictionary& dict,
                                              const Vocab& vocab, WpsStats* stats, const TokenizerOptions& opts) {
  std::vector<ParallelWPSPair> out;
  for (const auto& p : pairs) {
    auto v = build_parallel_wps(p, dict, vocab, stats, opts);
    out.insert(out.end(), std::make_move_iterator(v.begin()), std::make_move_iterator(v.end()));
  }
  return out;
}

void write_wps_jsonl(const std::filesystem::path& path, const std::vector<ParallelWPSPair>& pairs) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open file for writing");
  for (const auto& p : pairs) {
    nlohmann::ordered_json j;
    j["a_text"] = p.s.sentence.raw;
    j["a_word"] = p.s.word;
    j["a_token_span"] = {p.s.token_span.first, p.s.token_span.second};
    j["b_text"] = p.t.sentence.raw;
    j["b_word"] = p.t.word;
    j["b_token_span"] = {p.t.token_span.first, p.t.token_span.second};
    j["a_lang"] = p.s.sentence.lang;
    j["b_lang"] = p.t.sentence.lang;
    j["index"] = p.s.sentence.index;
    j["a_char_span"] = {p.s.char_span.first, p.s.char_span.second};
    j["b_char_span"] = {p.t.char_span.first, p.t.char_span.second};
    out << j.dump() << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

std::vector<ParallelWPSPair> read_wps_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open file");
  std::vector<ParallelWPSPair> out;
  std::string line;
  std::size_t lineno = 0;
  auto span_of = [](const nlohmann::json& j) {
    return Span{j.at(0).get<std::size_t>(), j.at(1).get<std::size_t>()};
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      ParallelWPSPair p;
      const std::size_t index = j.value("index", lineno);
      p.s.sentence = {j.at("a_text").get<std::string>(), j.at("a_lang").get<std::string>(), index};
      p.t.sentence = {j.at("b_text").get<std::string>(), j.at("b_lang").get<std::string>(), index};
      p.s.word = j.at("a_word").get<std::string>();
      p.t.word = j.at("b_word").get<std::string>();
      p.s.token_span = span_of(j.at("a_token_span"));
      p.t.token_span = span_of(j.at("b_token_span"));
      auto char_span = [&](const char* key, const WPS& w) {
        if (j.contains(key)) return span_of(j.at(key));
        const auto pos = w.sentence.raw.find(w.word);
        return pos == std::string::npos ? Span{0, 0} : Span{pos, pos + w.word.size()};
      };
      p.s.char_span = char_span("a_char_span", p.s);
      p.t.char_span = char_span("b_char_span", p.t);
      if (p.s.token_span.first >= p.s.token_span.second || p.t.token_span.first >= p.t.token_span.second) {
        throw ParseError(path.string(), lineno, "empty token span");
      }
      out.push_back(std::move(p));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string(), lineno, e.what());
    }
  }
  return out;
}

}  // namespace mlctl
