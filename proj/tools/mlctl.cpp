// mlctl: command-line driver for the ML-CTL lab.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "mlctl/checkpoint.hpp"
#include "mlctl/corpus.hpp"
#include "mlctl/error.hpp"
#include "mlctl/eval.hpp"
#include "mlctl/log.hpp"
#include "mlctl/tokenizer.hpp"
#include "mlctl/trainer.hpp"
#include "mlctl/wps.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mlctl;

namespace {

constexpr int kExitThreshold = 1;
constexpr int kExitUsage = 2;

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError(p.string(), "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// SHA-1 of "blob <size>\0<content>", as `git hash-object` prints it.
std::string git_blob_hash(const fs::path& p) {
  const std::string body = read_file(p);
  const std::string header = "blob " + std::to_string(body.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr);
  EVP_DigestUpdate(ctx, header.data(), header.size());
  EVP_DigestUpdate(ctx, body.data(), body.size());
  EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream os;
  for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return os.str();
}

std::string utc_timestamp() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

class Manifest {
 public:
  Manifest(std::string subcommand, std::uint64_t seed, std::string config) {
    j_["subcommand"] = std::move(subcommand);
    j_["seed"] = seed;
    j_["config"] = config.empty() ? json(nullptr) : json(config);
    j_["inputs"] = json::array();
    j_["outputs"] = json::array();
    if (!config.empty()) input(config);
  }
  void input(const fs::path& p) { j_["inputs"].push_back({{"path", p.string()}, {"hash", git_blob_hash(p)}}); }
  void output(const fs::path& p) { j_["outputs"].push_back(p.string()); }
  void set(const std::string& key, json v) { j_[key] = std::move(v); }
  void write(const fs::path& dir) {
    j_["timestamp"] = utc_timestamp();
    std::ofstream out(dir / "manifest.json", std::ios::trunc);
    if (!out) throw IoError((dir / "manifest.json").string(), "cannot open file for writing");
    out << j_.dump(2) << '\n';
  }

 private:
  json j_;
};

void write_json(const fs::path& p, const json& j) {
  std::ofstream out(p, std::ios::trunc);
  if (!out) throw IoError(p.string(), "cannot open file for writing");
  out << j.dump(2) << '\n';
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

// Options shared by every subcommand.
struct Common {
  std::uint64_t seed = 1;
  std::string config;
  std::string out = "run";
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--seed", c.seed, "Random seed")->capture_default_str();
  app->add_option("--config", c.config, "JSON config overriding the defaults")->check(CLI::ExistingFile);
  app->add_option("--out", c.out, "Run directory")->capture_default_str();
}

// Flags that mirror TrainConfig keys.
struct TrainFlags {
  std::optional<std::string> loss, mode, precision;
  std::optional<std::size_t> steps, batch_size, checkpoint_interval;
  std::optional<double> lr, alpha, temperature;

  void add(CLI::App* app) {
    app->add_option("--loss", loss, "infonce | cz-nce");
    app->add_option("--mode", mode, "multi-level | snt-only");
    app->add_option("--precision", precision, "double | emulated-single");
    app->add_option("--steps", steps, "Training steps");
    app->add_option("--batch-size", batch_size, "Pairs per batch");
    app->add_option("--checkpoint-interval", checkpoint_interval, "Steps between checkpoints (0: final only)");
    app->add_option("--lr", lr, "Adam learning rate");
    app->add_option("--alpha", alpha, "MLM weight");
    app->add_option("--temperature", temperature, "Similarity temperature");
  }

  TrainConfig resolve(const Common& c) const {
    TrainConfig cfg;
    if (!c.config.empty()) {
      try {
        cfg = json::parse(read_file(c.config)).get<TrainConfig>();
      } catch (const json::exception& e) {
        throw InputError("config " + c.config + ": " + e.what());
      }
    }
    cfg.seed = c.seed;
    try {
      if (loss) cfg.loss.kind = loss_kind_from_string(*loss);
      if (mode) cfg.encoder.mode = cce_mode_from_string(*mode);
      if (precision) cfg.loss.precision = ad::precision_from_string(*precision);
    } catch (const ContractError& e) {
      throw InputError(e.what());
    }
    if (steps) cfg.steps = *steps;
    if (batch_size) cfg.batch_size = *batch_size;
    if (checkpoint_interval) cfg.checkpoint_interval = *checkpoint_interval;
    if (lr) cfg.learning_rate = *lr;
    if (alpha) cfg.loss.alpha = *alpha;
    if (temperature) cfg.loss.temperature = *temperature;
    return cfg;
  }
};

fs::path prepare_out(const Common& c) {
  fs::create_directories(c.out);
  return c.out;
}

std::vector<std::size_t> parse_sizes(const std::string& s) {
  std::vector<std::size_t> out;
  std::stringstream ss(s);
  for (std::string part; std::getline(ss, part, ',');) {
    try {
      out.push_back(std::stoul(part));
    } catch (const std::exception&) {
      throw InputError("batch size list '" + s + "' must be comma-separated integers");
    }
  }
  if (out.empty()) throw InputError("empty batch size list");
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-level contrastive learning lab"};
  app.require_subcommand(1);

  // make-synthetic
  Common syn_c;
  std::size_t syn_vocab = 50, syn_sentences = 200;
  auto* syn = app.add_subcommand("make-synthetic", "Generate a synthetic bitext and its dictionary");
  add_common(syn, syn_c);
  syn->add_option("--vocab", syn_vocab, "Invented words per language")->capture_default_str();
  syn->add_option("--sentences", syn_sentences, "Sentence pairs")->capture_default_str();

  // build-vocab
  Common bv_c;
  std::string bv_corpus;
  std::size_t bv_max = 1000;
  bool bv_lower = false;
  auto* bv = app.add_subcommand("build-vocab", "Build a WordPiece vocabulary from a parallel corpus");
  add_common(bv, bv_c);
  bv->add_option("--corpus", bv_corpus, "Parallel corpus TSV")->required();
  bv->add_option("--max-size", bv_max, "Vocabulary size limit")->capture_default_str();
  bv->add_flag("--lowercase", bv_lower, "Lowercase before tokenizing");

  // build-wps
  Common bw_c;
  std::string bw_corpus, bw_dict, bw_vocab, bw_lang_a = "a", bw_lang_b = "b";
  std::vector<std::string> bw_stop;
  auto* bw = app.add_subcommand("build-wps", "Extract parallel word-positioned samples");
  add_common(bw, bw_c);
  bw->add_option("--corpus", bw_corpus, "Parallel corpus TSV")->required();
  bw->add_option("--dict", bw_dict, "Bilingual dictionary TSV")->required();
  bw->add_option("--vocab", bw_vocab, "Vocabulary file")->required();
  bw->add_option("--stopwords", bw_stop, "Stop-word files (any number)");
  bw->add_option("--lang-a", bw_lang_a, "Language tag of the first column")->capture_default_str();
  bw->add_option("--lang-b", bw_lang_b, "Language tag of the second column")->capture_default_str();

  // pretrain
  Common pt_c;
  TrainFlags pt_f;
  std::string pt_wps, pt_vocab, pt_resume;
  auto* pt = app.add_subcommand("pretrain", "Contrastive pre-training");
  add_common(pt, pt_c);
  pt_f.add(pt);
  pt->add_option("--wps", pt_wps, "WPS JSON Lines")->required();
  pt->add_option("--vocab", pt_vocab, "Vocabulary file")->required();
  pt->add_option("--resume", pt_resume, "Continue from a checkpoint");

  // grad-check
  Common gc_c;
  std::size_t gc_batches = 20, gc_dim = 128;
  std::string gc_sizes = "2,4,8";
  double gc_t = 0.07;
  auto* gc = app.add_subcommand("grad-check", "Compare CZ-NCE, rho and finite-difference gradients");
  add_common(gc, gc_c);
  gc->add_option("--batches", gc_batches, "Random batches")->capture_default_str();
  gc->add_option("--dim", gc_dim, "CCE dimension")->capture_default_str();
  gc->add_option("--sizes", gc_sizes, "Batch sizes, cycled")->capture_default_str();
  gc->add_option("--temperature", gc_t, "Similarity temperature")->capture_default_str();

  // loss-probe
  Common lp_c;
  TrainFlags lp_f;
  std::string lp_wps, lp_vocab, lp_precision = "emulated-single";
  std::size_t lp_steps = 600;
  auto* lp = app.add_subcommand("loss-probe", "Paired infoNCE / CZ-NCE runs at small batch size");
  add_common(lp, lp_c);
  lp->add_option("--wps", lp_wps, "WPS JSON Lines (default: synthetic corpus)");
  lp->add_option("--vocab", lp_vocab, "Vocabulary file (with --wps)");
  lp->add_option("--probe-steps", lp_steps, "Steps per run")->capture_default_str();
  lp->add_option("--probe-precision", lp_precision, "double | emulated-single")->capture_default_str();
  lp->add_option("--batch-size", lp_f.batch_size, "Pairs per batch (default 4)");
  lp->add_option("--lr", lp_f.lr, "Adam learning rate");
  lp->add_option("--temperature", lp_f.temperature, "Similarity temperature");

  // eval-retrieval
  Common er_c;
  std::string er_ckpt, er_vocab, er_wps, er_level = "both";
  bool er_untrained = false;
  std::optional<double> er_min;
  auto* er = app.add_subcommand("eval-retrieval", "Top-1 cross-lingual retrieval on held-out pairs");
  add_common(er, er_c);
  er->add_option("--checkpoint", er_ckpt, "Trained checkpoint");
  er->add_flag("--untrained", er_untrained, "Score a freshly initialised model (uses --config/--seed)");
  er->add_option("--vocab", er_vocab, "Vocabulary file")->required();
  er->add_option("--wps", er_wps, "Held-out WPS JSON Lines")->required();
  er->add_option("--level", er_level, "sentence | word | both")->capture_default_str();
  er->add_option("--min-accuracy", er_min, "Exit 1 if any direction scores below this");

  // ablation
  Common ab_c;
  TrainFlags ab_f;
  std::size_t ab_vocab = 50, ab_train = 200, ab_heldout = 100;
  auto* ab = app.add_subcommand("ablation", "Baseline, info-snt, CZ-snt and ML-CTL-CZ on synthetic bitext");
  add_common(ab, ab_c);
  ab_f.add(ab);
  ab->add_option("--vocab-size", ab_vocab, "Synthetic words per language")->capture_default_str();
  ab->add_option("--train-sentences", ab_train, "Training sentence pairs")->capture_default_str();
  ab->add_option("--heldout", ab_heldout, "Held-out pairs")->capture_default_str();

  // export-embeddings
  Common ex_c;
  std::string ex_ckpt, ex_vocab, ex_items;
  auto* ex = app.add_subcommand("export-embeddings", "Write sentence or word embeddings as TSV");
  add_common(ex, ex_c);
  ex->add_option("--checkpoint", ex_ckpt, "Trained checkpoint")->required();
  ex->add_option("--vocab", ex_vocab, "Vocabulary file")->required();
  ex->add_option("--items", ex_items, "Items TSV: label, lang, group, text[, start:end]")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*syn) {
      const auto dir = prepare_out(syn_c);
      const auto bitext = make_synthetic_bitext(syn_vocab, syn_sentences, syn_c.seed);
      write_parallel_corpus(dir / "corpus.tsv", bitext.pairs);
      write_dictionary(dir / "dict.tsv", bitext.dictionary);
      Manifest m("make-synthetic", syn_c.seed, syn_c.config);
      m.set("params", {{"vocab", syn_vocab}, {"sentences", syn_sentences}});
      m.output(dir / "corpus.tsv");
      m.output(dir / "dict.tsv");
      m.write(dir);
      std::cout << bitext.pairs.size() << " sentence pairs, " << bitext.dictionary.size() << " dictionary entries -> "
                << dir.string() << '\n';
      return 0;
    }

    if (*bv) {
      const auto dir = prepare_out(bv_c);
      std::vector<Sentence> text;
      for (const auto& p : load_parallel_corpus(bv_corpus)) {
        text.push_back(p.a);
        text.push_back(p.b);
      }
      TokenizerOptions opts;
      opts.lowercase = bv_lower;
      const auto vocab = build_vocab(text, bv_max, opts);
      write_vocab(dir / "vocab.txt", vocab);
      Manifest m("build-vocab", bv_c.seed, bv_c.config);
      m.input(bv_corpus);
      m.set("params", {{"max_size", bv_max}, {"lowercase", bv_lower}});
      m.output(dir / "vocab.txt");
      m.write(dir);
      std::cout << vocab.size() << " tokens -> " << (dir / "vocab.txt").string() << '\n';
      return 0;
    }

    if (*bw) {
      const auto dir = prepare_out(bw_c);
      StopWords stop;
      for (const auto& f : bw_stop) {
        const auto s = load_stopwords(f);
        stop.insert(s.begin(), s.end());
      }
      const auto corpus = load_parallel_corpus(bw_corpus, bw_lang_a, bw_lang_b);
      const auto dict = load_dictionary(bw_dict, stop, bw_lang_a, bw_lang_b);
      const auto vocab = read_vocab(bw_vocab);
      WpsStats stats;
      const auto pairs = build_corpus_wps(corpus, dict, vocab, &stats);
      write_wps_jsonl(dir / "wps.jsonl", pairs);
      Manifest m("build-wps", bw_c.seed, bw_c.config);
      m.input(bw_corpus);
      m.input(bw_dict);
      m.input(bw_vocab);
      for (const auto& f : bw_stop) m.input(f);
      const json js = {{"sentence_pairs", corpus.size()},
                       {"dictionary_entries", dict.size()},
                       {"candidates", stats.candidates},
                       {"rejected_source_spaced", stats.rejected_source_spaced},
                       {"rejected_source_tokens", stats.rejected_source_tokens},
                       {"rejected_target_spaced", stats.rejected_target_spaced},
                       {"rejected_target_tokens", stats.rejected_target_tokens},
                       {"emitted", stats.emitted}};
      m.set("stats", js);
      m.output(dir / "wps.jsonl");
      m.write(dir);
      std::cout << "pairs: " << pairs.size() << '\n'
                << "  sentence pairs          " << corpus.size() << '\n'
                << "  dictionary entries      " << dict.size() << '\n'
                << "  candidates              " << stats.candidates << '\n'
                << "  rejected source spaced  " << stats.rejected_source_spaced << '\n'
                << "  rejected source tokens  " << stats.rejected_source_tokens << '\n'
                << "  rejected target spaced  " << stats.rejected_target_spaced << '\n'
                << "  rejected target tokens  " << stats.rejected_target_tokens << '\n';
      return 0;
    }

    if (*pt) {
      const auto dir = prepare_out(pt_c);
      TrainConfig cfg = pt_f.resolve(pt_c);
      const auto vocab = read_vocab(pt_vocab);
      const auto pairs = read_wps_jsonl(pt_wps);
      TrainState state;
      if (!pt_resume.empty()) {
        TrainConfig recorded;
        state = load_train_checkpoint(pt_resume, &recorded);
        const std::size_t steps = cfg.steps;
        cfg = recorded;
        if (pt_f.steps) cfg.steps = steps;
      } else {
        state = init_train_state(cfg, vocab);
      }
      cfg.encoder = state.model.config;
      TrainOptions opts;
      opts.out_dir = dir;
      const std::size_t every = std::max<std::size_t>(1, cfg.steps / 10);
      opts.on_step = [&](const TrainState& s) {
        if (s.step % every == 0 || s.step == cfg.steps) {
          const auto& r = s.telemetry.back();
          std::cout << "step " << s.step << "  contrastive " << fmt(r.contrastive) << "  mlm " << fmt(r.mlm)
                    << "  grad_norm " << fmt(r.grad_norm) << '\n';
        }
      };
      Manifest m("pretrain", cfg.seed, pt_c.config);
      m.input(pt_wps);
      m.input(pt_vocab);
      if (!pt_resume.empty()) m.input(pt_resume);
      m.set("train_config", cfg);
      try {
        train(state, pairs, vocab, cfg, opts);
      } catch (const NumericError&) {
        m.output(dir / "last_good.bin");
        m.write(dir);
        throw;
      }
      m.output(dir / "telemetry.csv");
      m.output(dir / "checkpoint.bin");
      m.write(dir);
      return 0;
    }

    if (*gc) {
      const auto dir = prepare_out(gc_c);
      GradCheckOptions opts;
      opts.temperature = gc_t;
      const auto batches = random_cce_batches(gc_batches, parse_sizes(gc_sizes), gc_dim, gc_c.seed);
      const auto r = grad_equivalence_check(batches, opts);
      const bool ok = r.max_rel_cz_vs_rho < 1e-10 && r.max_rel_cz_vs_fd < 1e-5 && r.max_abs_rho_minus_one < 1e-12;
      const json js = {{"batches", r.batches},
                       {"batch_sizes", r.batch_sizes},
                       {"dim", r.dim},
                       {"elements", r.elements},
                       {"precision", ad::to_string(r.precision)},
                       {"max_rel_cz_vs_rho", r.max_rel_cz_vs_rho},
                       {"max_rel_cz_vs_fd", r.max_rel_cz_vs_fd},
                       {"max_abs_rho_minus_one", r.max_abs_rho_minus_one},
                       {"passed", ok}};
      write_json(dir / "grad_report.json", js);
      Manifest m("grad-check", gc_c.seed, gc_c.config);
      m.output(dir / "grad_report.json");
      m.write(dir);
      std::cout << "batches " << r.batches << "  dim " << r.dim << "  elements " << r.elements << '\n'
                << "max rel |dCZ - drho|  " << r.max_rel_cz_vs_rho << "  (< 1e-10)\n"
                << "max rel |dCZ - FD|    " << r.max_rel_cz_vs_fd << "  (< 1e-5)\n"
                << "max |rho - 1|         " << r.max_abs_rho_minus_one << "  (< 1e-12)\n"
                << (ok ? "PASS" : "FAIL") << '\n';
      return ok ? 0 : kExitThreshold;
    }

    if (*lp) {
      const auto dir = prepare_out(lp_c);
      TrainConfig cfg = lp_f.resolve(lp_c);
      if (!lp_f.batch_size) cfg.batch_size = 4;
      std::vector<ParallelWPSPair> pairs;
      Vocab vocab;
      Manifest m("loss-probe", lp_c.seed, lp_c.config);
      if (lp_wps.empty()) {
        const auto setup = make_synthetic_setup(50, 200, 2, lp_c.seed);
        pairs = setup.train_pairs;
        vocab = setup.vocab;
      } else {
        if (lp_vocab.empty()) throw InputError("--wps needs --vocab");
        pairs = read_wps_jsonl(lp_wps);
        vocab = read_vocab(lp_vocab);
        m.input(lp_wps);
        m.input(lp_vocab);
      }
      ad::Precision precision;
      try {
        precision = ad::precision_from_string(lp_precision);
      } catch (const ContractError& e) {
        throw InputError(e.what());
      }
      const auto r = loss_floor_probe(pairs, vocab, cfg, lp_steps, precision);
      write_probe_csv(dir / "probe.csv", r);
      double min_grad_below_floor = -1.0;
      for (const auto& s : r.steps) {
        if (s.info_loss < kProbeLossFloor && (min_grad_below_floor < 0 || s.info_grad_norm < min_grad_below_floor)) {
          min_grad_below_floor = s.info_grad_norm;
        }
      }
      json js = {{"precision", ad::to_string(r.precision)},
                 {"steps", r.steps.size()},
                 {"batch_size", cfg.batch_size},
                 {"underflow_step", r.underflow_step ? json(*r.underflow_step) : json(nullptr)},
                 {"floor_step", r.floor_step ? json(*r.floor_step) : json(nullptr)},
                 {"min_info_grad_norm_below_floor", min_grad_below_floor < 0 ? json(nullptr) : json(min_grad_below_floor)},
                 {"cz_below_info_every_step", r.cz_below_info_every_step},
                 {"any_zero_grad", r.any_zero_grad},
                 {"final_info_loss", r.final_info_loss},
                 {"final_cz_on_info_geometry", r.final_cz_on_info_geometry}};
      write_json(dir / "probe_report.json", js);
      m.set("train_config", cfg);
      m.output(dir / "probe.csv");
      m.output(dir / "probe_report.json");
      m.write(dir);
      std::cout << js.dump(2) << '\n';
      return 0;
    }

    if (*er) {
      const auto dir = prepare_out(er_c);
      if (er_ckpt.empty() == !er_untrained) throw InputError("give exactly one of --checkpoint or --untrained");
      const auto vocab = read_vocab(er_vocab);
      const auto heldout = read_wps_jsonl(er_wps);
      Manifest m("eval-retrieval", er_c.seed, er_c.config);
      m.input(er_vocab);
      m.input(er_wps);
      Model model;
      std::string tag;
      if (er_untrained) {
        TrainFlags none;
        EncoderConfig ec = none.resolve(er_c).encoder;
        ec.vocab_size = vocab.size();
        model = init_model(ec, er_c.seed);
        tag = "untrained";
      } else {
        m.input(er_ckpt);
        model = load_model(er_ckpt);
        tag = fs::path(er_ckpt).stem().string();
      }
      std::vector<RetrievalLevel> levels;
      if (er_level == "both") {
        levels = {RetrievalLevel::Sentence, RetrievalLevel::Word};
      } else {
        levels = {retrieval_level_from_string(er_level)};
      }
      std::vector<RetrievalReport> reports;
      bool ok = true;
      for (auto level : levels) {
        reports.push_back(retrieval_eval(model, vocab, heldout, level, tag));
        const auto& r = reports.back();
        std::cout << to_string(level) << "  a->b " << fmt(r.a_to_b) << "  b->a " << fmt(r.b_to_a) << "  (" << r.items
                  << " items)\n";
        if (er_min && (r.a_to_b < *er_min || r.b_to_a < *er_min)) ok = false;
      }
      write_retrieval_csv(dir / "retrieval.csv", reports);
      m.output(dir / "retrieval.csv");
      m.write(dir);
      return ok ? 0 : kExitThreshold;
    }

    if (*ab) {
      const auto dir = prepare_out(ab_c);
      const TrainConfig cfg = ab_f.resolve(ab_c);
      const auto setup = make_synthetic_setup(ab_vocab, ab_train, ab_heldout, ab_c.seed);
      const auto report = ablation_suite(setup, cfg);
      write_ablation_csv(dir / "ablation.csv", report);
      Manifest m("ablation", ab_c.seed, ab_c.config);
      m.set("train_config", cfg);
      m.output(dir / "ablation.csv");
      m.write(dir);
      for (const auto& r : report.rows) {
        std::cout << std::left << std::setw(10) << r.system << std::setw(9) << to_string(r.level) << std::setw(4)
                  << r.direction << ' ' << fmt(r.accuracy) << '\n';
      }
      std::cout << "word: ML-CTL-CZ >= CZ-snt            " << (report.word_mlctl_ge_cz_snt ? "yes" : "NO") << '\n'
                << "sentence: trained systems > baseline  " << (report.sentence_trained_beat_baseline ? "yes" : "NO")
                << '\n';
      if (!report.soft_cz_snt_ge_info_snt) log::warn("CZ-snt scored below info-snt on sentence retrieval");
      return report.hard_checks_pass() ? 0 : kExitThreshold;
    }

    if (*ex) {
      const auto dir = prepare_out(ex_c);
      const auto model = load_model(ex_ckpt);
      const auto vocab = read_vocab(ex_vocab);
      const auto items = read_export_items(ex_items);
      export_embeddings(model, vocab, items, dir / "embeddings.tsv");
      Manifest m("export-embeddings", ex_c.seed, ex_c.config);
      m.input(ex_ckpt);
      m.input(ex_vocab);
      m.input(ex_items);
      m.output(dir / "embeddings.tsv");
      m.write(dir);
      std::cout << items.size() << " rows -> " << (dir / "embeddings.tsv").string() << '\n';
      return 0;
    }
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitThreshold;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  }
  return kExitUsage;
}
