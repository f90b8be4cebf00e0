#include "mlctl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "mlctl/error.hpp"

namespace mlctl {
namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

long double ld_lse(const std::vector<long double>& v) {
  long double m = v.front();
  for (auto x : v) m = std::max(m, x);
  long double s = 0.0L;
  for (auto x : v) s += std::exp(x - m);
  return m + std::log(s);
}

long double ld_cos(const std::vector<long double>& a, const std::vector<long double>& b) {
  long double ab = 0.0L, aa = 0.0L, bb = 0.0L;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  return ab / std::sqrt(aa * bb);
}

std::vector<long double> to_ld(const ad::Tensor& t) {
  return std::vector<long double>(t.data().begin(), t.data().end());
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += a[k] * b[k];
    aa += a[k] * a[k];
    bb += b[k] * b[k];
  }
  if (aa == 0.0 || bb == 0.0) return 0.0;
  return ab / std::sqrt(aa * bb);
}

std::vector<double> values(const ad::Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); }

struct ProbeStepResult {
  double own = 0.0;
  double other = 0.0;
  double grad_norm = 0.0;
};

ProbeStepResult probe_step(TrainState& st, const std::vector<ParallelWPSPair>& pairs, const Vocab& vocab,
                           const TrainConfig& config, LossKind kind, ad::Precision precision) {
  const auto indices = batch_for_step(pairs.size(), config.batch_size, config.seed, st.step);
  st.model.params.zero_grad();
  EncodingCache cache(st.model, vocab);
  const auto batch = batch_cce(cache, pairs, indices);
  const double t = config.loss.temperature;
  const auto own = batch_contrastive_loss(batch, kind, t, precision);
  const LossKind other_kind = kind == LossKind::InfoNce ? LossKind::CzNce : LossKind::InfoNce;
  ProbeStepResult r;
  r.other = batch_contrastive_loss(batch, other_kind, t, precision).item();
  r.own = own.item();
  if (!std::isfinite(r.own)) {
    throw NumericError("probe step " + std::to_string(st.step) + ": non-finite " + to_string(kind) + " loss");
  }
  ad::backward(own);
  r.grad_norm = st.model.params.grad_norm();
  adam_step(st.model.params, st.adam);
  ++st.step;
  return r;
}

std::vector<RetrievalReport> score_model(const Model& model, const Vocab& vocab,
                                         const std::vector<ParallelWPSPair>& heldout, const std::string& tag) {
  return {retrieval_eval(model, vocab, heldout, RetrievalLevel::Sentence, tag),
          retrieval_eval(model, vocab, heldout, RetrievalLevel::Word, tag)};
}

}  // namespace

double relative_deviation(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  if (denom == 0.0) return 0.0;
  return std::abs(a - b) / denom;
}

std::vector<CceBatch> random_cce_batches(std::size_t count, const std::vector<std::size_t>& sizes, std::size_t dim,
                                         std::uint64_t seed) {
  if (sizes.empty()) throw ContractError("random_cce_batches: no batch sizes given");
  if (dim == 0) throw ContractError("random_cce_batches: dimension must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<CceBatch> out;
  for (std::size_t k = 0; k < count; ++k) {
    const std::size_t n = sizes[k % sizes.size()];
    CceBatch b;
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> x(dim), y(dim);
      for (auto& v : x) v = normal(rng);
      // Positives correlated with their anchors, as after some training.
      for (std::size_t j = 0; j < dim; ++j) y[j] = x[j] + 0.8 * normal(rng);
      b.x.push_back(ad::Tensor::vector(std::move(x), true));
      b.y.push_back(ad::Tensor::vector(std::move(y), true));
    }
    out.push_back(std::move(b));
  }
  return out;
}

long double reference_batch_loss(const std::vector<std::vector<long double>>& x,
                                 const std::vector<std::vector<long double>>& y, long double t, LossKind kind) {
  const std::size_t n = x.size();
  if (n != y.size() || n == 0) throw ContractError("reference_batch_loss: mismatched or empty batch");
  long double total = 0.0L;
  for (int side = 0; side < 2; ++side) {
    const auto& own = side == 0 ? x : y;
    const auto& other = side == 0 ? y : x;
    for (std::size_t i = 0; i < n; ++i) {
      const long double s_pos = ld_cos(own[i], other[i]) / t;
      std::vector<long double> s;
      if (kind == LossKind::InfoNce) s.push_back(s_pos);
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) s.push_back(ld_cos(own[i], own[j]) / t);
      for (std::size_t j = 0; j < n; ++j)
        if (j != i) s.push_back(ld_cos(own[i], other[j]) / t);
      total += ld_lse(s) - s_pos;
    }
  }
  return total / static_cast<long double>(2 * n);
}

GradReport grad_equivalence_check(const std::vector<CceBatch>& batches, const GradCheckOptions& options) {
  GradReport report;
  const double t = options.temperature;
  for (const auto& batch : batches) {
    const std::size_t n = batch.size();
    if (n < 2) throw ContractError("grad_equivalence_check: batches need at least 2 pairs");
    report.batch_sizes.push_back(n);
    report.dim = batch.x.front().numel();

    auto fresh = [&] {
      CceBatch b;
      for (std::size_t i = 0; i < n; ++i) {
        b.x.push_back(ad::Tensor::vector(values(batch.x[i]), true));
        b.y.push_back(ad::Tensor::vector(values(batch.y[i]), true));
      }
      return b;
    };

    CceBatch bc = fresh();
    ad::backward(batch_contrastive_loss(bc, LossKind::CzNce, t));
    CceBatch br = fresh();
    const auto rho = batch_rho_loss(br, t);
    report.max_abs_rho_minus_one = std::max(report.max_abs_rho_minus_one, std::abs(rho.item() - 1.0));
    ad::backward(rho);

    std::vector<std::vector<long double>> x, y;
    for (std::size_t i = 0; i < n; ++i) {
      x.push_back(to_ld(batch.x[i]));
      y.push_back(to_ld(batch.y[i]));
    }
    const long double h = options.fd_step;
    for (int side = 0; side < 2; ++side) {
      auto& vecs = side == 0 ? x : y;
      for (std::size_t i = 0; i < n; ++i) {
        const auto gc = side == 0 ? bc.x[i].grad() : bc.y[i].grad();
        const auto gr = side == 0 ? br.x[i].grad() : br.y[i].grad();
        for (std::size_t k = 0; k < vecs[i].size(); ++k) {
          const long double orig = vecs[i][k];
          vecs[i][k] = orig + h;
          const long double up = reference_batch_loss(x, y, t, LossKind::CzNce);
          vecs[i][k] = orig - h;
          const long double down = reference_batch_loss(x, y, t, LossKind::CzNce);
          vecs[i][k] = orig;
          const double fd = static_cast<double>((up - down) / (2.0L * h));
          const double a = gc.data()[k];
          report.max_rel_cz_vs_rho =
              std::max(report.max_rel_cz_vs_rho, relative_deviation(a, gr.data()[k], options.rel_floor));
          report.max_rel_cz_vs_fd = std::max(report.max_rel_cz_vs_fd, relative_deviation(a, fd, options.rel_floor));
          ++report.elements;
        }
      }
    }
    ++report.batches;
  }
  return report;
}

ProbeReport loss_floor_probe(const std::vector<ParallelWPSPair>& pairs, const Vocab& vocab, TrainConfig config,
                             std::size_t steps, ad::Precision precision) {
  if (steps == 0) throw ContractError("loss_floor_probe: steps must be positive");
  config.loss.alpha = 0.0;
  config.loss.precision = precision;
  config.loss.kind = LossKind::CzNce;
  config.steps = steps;
  config.validate();

  TrainState info = init_train_state(config, vocab);
  TrainState cz = init_train_state(config, vocab);

  ProbeReport report;
  report.precision = precision;
  for (std::size_t k = 0; k < steps; ++k) {
    const auto ri = probe_step(info, pairs, vocab, config, LossKind::InfoNce, precision);
    const auto rc = probe_step(cz, pairs, vocab, config, LossKind::CzNce, precision);
    ProbeStep s;
    s.step = k;
    s.info_loss = ri.own;
    s.info_grad_norm = ri.grad_norm;
    s.info_run_cz_loss = ri.other;
    s.cz_loss = rc.own;
    s.cz_grad_norm = rc.grad_norm;
    if (!(s.info_run_cz_loss < s.info_loss) || !(rc.own < rc.other)) report.cz_below_info_every_step = false;
    if (s.info_grad_norm == 0.0 && !report.underflow_step) report.underflow_step = k;
    if (s.info_loss < kProbeLossFloor && !report.floor_step) report.floor_step = k;
    if (s.info_grad_norm == 0.0 || s.cz_grad_norm == 0.0) report.any_zero_grad = true;
    report.steps.push_back(s);
  }
  report.final_info_loss = report.steps.back().info_loss;
  report.final_cz_on_info_geometry = report.steps.back().info_run_cz_loss;
  return report;
}

void write_probe_csv(const std::filesystem::path& path, const ProbeReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open file for writing");
  out << kTelemetryHeader << ",loss_kind\n";
  for (const auto& s : report.steps) {
    TelemetryRow row;
    row.step = s.step;
    row.precision = report.precision;
    row.kind = LossKind::InfoNce;
    row.contrastive = row.total = s.info_loss;
    row.grad_norm = s.info_grad_norm;
    out << telemetry_csv_row(row) << ',' << to_string(LossKind::InfoNce) << '\n';
    row.kind = LossKind::CzNce;
    row.contrastive = row.total = s.info_run_cz_loss;
    row.grad_norm = 0.0;
    out << telemetry_csv_row(row) << ',' << to_string(LossKind::InfoNce) << '\n';
    row.contrastive = row.total = s.cz_loss;
    row.grad_norm = s.cz_grad_norm;
    out << telemetry_csv_row(row) << ',' << to_string(LossKind::CzNce) << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

std::string to_string(RetrievalLevel level) { return level == RetrievalLevel::Sentence ? "sentence" : "word"; }

RetrievalLevel retrieval_level_from_string(const std::string& s) {
  if (s == "sentence") return RetrievalLevel::Sentence;
  if (s == "word") return RetrievalLevel::Word;
  throw InputError("unknown retrieval level '" + s + "' (expected sentence or word)");
}

double top1_accuracy(const std::vector<std::vector<double>>& queries,
                     const std::vector<std::vector<double>>& candidates) {
  if (queries.size() != candidates.size()) throw ContractError("top1_accuracy: query and candidate counts differ");
  if (queries.size() < 2) throw ContractError("top1_accuracy: retrieval needs at least 2 items");
  std::size_t hits = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::size_t best = 0;
    double best_sim = cosine(queries[q], candidates[0]);
    for (std::size_t c = 1; c < candidates.size(); ++c) {
      const double sim = cosine(queries[q], candidates[c]);
      if (sim > best_sim) {
        best_sim = sim;
        best = c;
      }
    }
    if (best == q) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(queries.size());
}

std::vector<double> embed_sentence(const Model& model, const Vocab& vocab, const std::string& text) {
  const auto ids = wrap_special(tokenize(text, vocab));
  return values(sentence_embedding(encode_tokens(ids, model), model.config.exclude_specials));
}

std::vector<double> embed_word(const Model& model, const Vocab& vocab, const WPS& wps) {
  const auto ids = wrap_special(tokenize(wps.sentence.raw, vocab));
  return values(word_embedding(encode_tokens(ids, model), wps.token_span));
}

RetrievalReport retrieval_eval(const Model& model, const Vocab& vocab, const std::vector<ParallelWPSPair>& heldout,
                               RetrievalLevel level, const std::string& tag) {
  if (heldout.size() < 2) throw ContractError("retrieval_eval: need at least 2 held-out pairs");
  std::vector<std::vector<double>> a, b;
  for (const auto& p : heldout) {
    if (level == RetrievalLevel::Sentence) {
      a.push_back(embed_sentence(model, vocab, p.s.sentence.raw));
      b.push_back(embed_sentence(model, vocab, p.t.sentence.raw));
    } else {
      a.push_back(embed_word(model, vocab, p.s));
      b.push_back(embed_word(model, vocab, p.t));
    }
  }
  RetrievalReport r;
  r.model_tag = tag;
  r.level = level;
  r.items = heldout.size();
  r.a_to_b = top1_accuracy(a, b);
  r.b_to_a = top1_accuracy(b, a);
  return r;
}

SyntheticSetup make_synthetic_setup(std::size_t vocab_size, std::size_t train_sentences, std::size_t heldout_items,
                                    std::uint64_t seed) {
  if (train_sentences == 0) throw ContractError("make_synthetic_setup: no training sentences requested");
  if (heldout_items < 2) throw ContractError("make_synthetic_setup: need at least 2 held-out items");
  // Over-generate; almost every synthetic sentence yields a WPS.
  std::size_t total = train_sentences + 2 * heldout_items;
  for (int attempt = 0; attempt < 4; ++attempt, total *= 2) {
    SyntheticSetup setup;
    setup.bitext = make_synthetic_bitext(vocab_size, total, seed);
    std::vector<Sentence> text;
    for (std::size_t i = 0; i < train_sentences; ++i) {
      text.push_back(setup.bitext.pairs[i].a);
      text.push_back(setup.bitext.pairs[i].b);
    }
    setup.vocab = build_vocab(text, 1000);
    const auto& dict = setup.bitext.dictionary;
    for (std::size_t i = 0; i < train_sentences; ++i) {
      auto w = build_parallel_wps(setup.bitext.pairs[i], dict, setup.vocab);
      setup.train_pairs.insert(setup.train_pairs.end(), w.begin(), w.end());
    }
    for (std::size_t i = train_sentences; i < setup.bitext.pairs.size() && setup.heldout_pairs.size() < heldout_items;
         ++i) {
      auto w = build_parallel_wps(setup.bitext.pairs[i], dict, setup.vocab);
      if (!w.empty()) setup.heldout_pairs.push_back(w.front());
    }
    if (setup.heldout_pairs.size() == heldout_items) return setup;
  }
  throw InputError("make_synthetic_setup: could not collect " + std::to_string(heldout_items) + " held-out pairs");
}

std::vector<AblationSystem> ablation_systems() {
  return {{"info-snt", LossKind::InfoNce, CceMode::SentenceOnly},
          {"CZ-snt", LossKind::CzNce, CceMode::SentenceOnly},
          {"ML-CTL-CZ", LossKind::CzNce, CceMode::MultiLevel}};
}

const RetrievalReport& AblationReport::find(const std::string& system, RetrievalLevel level) const {
  for (const auto& r : reports)
    if (r.model_tag == system && r.level == level) return r;
  throw ContractError("ablation report has no entry for " + system + "/" + to_string(level));
}

AblationReport ablation_suite(const SyntheticSetup& setup, const TrainConfig& base) { return ablation_suite(setup, base, {}); }

AblationReport ablation_suite(const SyntheticSetup& setup, const TrainConfig& base,
                              const std::vector<std::pair<std::string, const Model*>>& pretrained) {
  AblationReport report;
  {
    EncoderConfig ec = base.encoder;
    ec.vocab_size = setup.vocab.size();
    const Model untrained = init_model(ec, base.seed);
    for (auto& r : score_model(untrained, setup.vocab, setup.heldout_pairs, "baseline")) report.reports.push_back(r);
  }
  for (const auto& sys : ablation_systems()) {
    const auto it = std::find_if(pretrained.begin(), pretrained.end(), [&](const auto& p) { return p.first == sys.name; });
    std::vector<RetrievalReport> scored;
    if (it != pretrained.end()) {
      scored = score_model(*it->second, setup.vocab, setup.heldout_pairs, sys.name);
    } else {
      TrainConfig cfg = base;
      cfg.loss.kind = sys.kind;
      cfg.encoder.mode = sys.mode;
      const auto st = train(setup.train_pairs, setup.vocab, cfg);
      scored = score_model(st.model, setup.vocab, setup.heldout_pairs, sys.name);
    }
    for (auto& r : scored) report.reports.push_back(r);
  }
  for (const auto& r : report.reports) {
    report.rows.push_back({r.model_tag, r.level, "a2b", r.a_to_b});
    report.rows.push_back({r.model_tag, r.level, "b2a", r.b_to_a});
  }
  const auto W = RetrievalLevel::Word;
  const auto S = RetrievalLevel::Sentence;
  report.word_mlctl_ge_cz_snt = report.find("ML-CTL-CZ", W).mean() >= report.find("CZ-snt", W).mean();
  const double base_s = report.find("baseline", S).mean();
  report.sentence_trained_beat_baseline = true;
  for (const auto& sys : ablation_systems())
    if (!(report.find(sys.name, S).mean() > base_s)) report.sentence_trained_beat_baseline = false;
  report.soft_cz_snt_ge_info_snt = report.find("CZ-snt", S).mean() >= report.find("info-snt", S).mean();
  return report;
}

void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open file for writing");
  out << "system,level,direction,top1\n";
  for (const auto& r : report.rows) {
    out << r.system << ',' << to_string(r.level) << ',' << r.direction << ',' << fmt_double(r.accuracy) << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

void write_retrieval_csv(const std::filesystem::path& path, const std::vector<RetrievalReport>& reports) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open file for writing");
  out << "model,level,items,a2b,b2a\n";
  for (const auto& r : reports) {
    out << r.model_tag << ',' << to_string(r.level) << ',' << r.items << ',' << fmt_double(r.a_to_b) << ','
        << fmt_double(r.b_to_a) << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

std::vector<ExportItem> read_export_items(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string(), "cannot open file");
  std::vector<ExportItem> items;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string field; std::getline(ss, field, '\t');) f.push_back(field);
    if (f.size() != 4 && f.size() != 5) {
      throw ParseError(path.string(), lineno, "expected 4 or 5 tab-separated fields, got " + std::to_string(f.size()));
    }
    ExportItem item;
    item.label = f[0];
    item.lang = f[1];
    try {
      std::size_t used = 0;
      item.group = std::stoul(f[2], &used);
      if (used != f[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw ParseError(path.string(), lineno, "group id '" + f[2] + "' is not a non-negative integer");
    }
    item.text = f[3];
    if (f.size() == 5) {
      const auto colon = f[4].find(':');
      try {
        if (colon == std::string::npos) throw std::invalid_argument("colon");
        item.span = Span{std::stoul(f[4].substr(0, colon)), std::stoul(f[4].substr(colon + 1))};
      } catch (const std::exception&) {
        throw ParseError(path.string(), lineno, "span '" + f[4] + "' is not start:end");
      }
    }
    items.push_back(std::move(item));
  }
  return items;
}

void export_embeddings(const Model& model, const Vocab& vocab, const std::vector<ExportItem>& items,
                       const std::filesystem::path& path) {
  std::vector<std::vector<double>> vecs;
  for (const auto& item : items) {
    if (item.span) {
      WPS w;
      w.sentence.raw = item.text;
      w.token_span = *item.span;
      vecs.push_back(embed_word(model, vocab, w));
    } else {
      vecs.push_back(embed_sentence(model, vocab, item.text));
    }
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open file for writing");
  out << "label\tlang\tgroup";
  for (std::size_t k = 0; k < model.config.hidden; ++k) out << "\tv" << k;
  out << '\n';
  for (std::size_t i = 0; i < items.size(); ++i) {
    out << items[i].label << '\t' << items[i].lang << '\t' << items[i].group;
    for (double v : vecs[i]) out << '\t' << fmt_double(v);
    out << '\n';
  }
  if (!out) throw IoError(path.string(), "write failed");
}

}  // namespace mlctl
