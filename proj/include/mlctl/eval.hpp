#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mlctl/corpus.hpp"
#include "mlctl/encoder.hpp"
#include "mlctl/losses.hpp"
#include "mlctl/trainer.hpp"
#include "mlctl/wps.hpp"

namespace mlctl {

// ---- gradient identity ------------------------------------------------------

struct GradCheckOptions {
  double temperature = 0.07;
  double fd_step = 1e-6;
  // Lower bound on the denominator of the relative deviation.
  double rel_floor = 0.0;
};

struct GradReport {
  double max_rel_cz_vs_rho = 0.0;
  double max_rel_cz_vs_fd = 0.0;
  double max_abs_rho_minus_one = 0.0;
  std::size_t batches = 0;
  std::size_t elements = 0;
  std::vector<std::size_t> batch_sizes;
  std::size_t dim = 0;
  ad::Precision precision = ad::Precision::Double;
};

// |a - b| / max(|a|, |b|, floor), and 0 when that denominator is 0
double relative_deviation(double a, double b, double floor);

// Random Gaussian CCE vectors; batch k has size sizes[k % sizes.size()].
std::vector<CceBatch> random_cce_batches(std::size_t count, const std::vector<std::size_t>& sizes, std::size_t dim,
                                         std::uint64_t seed);

// Treats every CCE vector as a parameter. Compares autodiff gradients of the
// CZ-NCE batch loss with those of the rho batch loss, and with central
// differences of an independent long-double evaluation of the CZ-NCE loss.
GradReport grad_equivalence_check(const std::vector<CceBatch>& batches, const GradCheckOptions& options = {});

// Plain long-double CZ-NCE / infoNCE batch losses; no autodiff involved.
long double reference_batch_loss(const std::vector<std::vector<long double>>& x,
                                  const std::vector<std::vector<long double>>& y, long double t, LossKind kind);

// ---- small-batch floating-point probe -----------------------------------------

struct ProbeStep {
  std::size_t step = 0;
  double info_loss = 0.0;        // infoNCE run, its own loss
  double info_grad_norm = 0.0;
  double info_run_cz_loss = 0.0; // CZ-NCE on the infoNCE run's parameters and batch
  double cz_loss = 0.0;          // CZ-NCE run, its own loss
  double cz_grad_norm = 0.0;
};

struct ProbeReport {
  std::vector<ProbeStep> steps;
  ad::Precision precision = ad::Precision::Double;
  std::optional<std::size_t> underflow_step;  // first step with info grad norm == 0
  std::optional<std::size_t> floor_step;      // first step with info loss < floor threshold
  bool cz_below_info_every_step = true;
  double final_info_loss = 0.0;
  double final_cz_on_info_geometry = 0.0;
  bool any_zero_grad = false;  // in either run
};

inline constexpr double kProbeLossFloor = 1e-5;

// Trains an infoNCE run and a CZ-NCE run from the same initial parameters on
// the same batch schedule, with `precision` applied to the loss computation
// and alpha forced to 0.
ProbeReport loss_floor_probe(const std::vector<ParallelWPSPair>& pairs, const Vocab& vocab, TrainConfig config,
                             std::size_t steps, ad::Precision precision);

void write_probe_csv(const std::filesystem::path& path, const ProbeReport& report);

// ---- retrieval ------------------------------------------------------------------

enum class RetrievalLevel { Sentence, Word };
std::string to_string(RetrievalLevel level);
RetrievalLevel retrieval_level_from_string(const std::string& s);

struct RetrievalReport {
  std::string model_tag;
  RetrievalLevel level = RetrievalLevel::Sentence;
  std::size_t items = 0;
  double a_to_b = 0.0;
  double b_to_a = 0.0;

  double mean() const { return 0.5 * (a_to_b + b_to_a); }
};

// Fraction of queries whose nearest candidate by cosine is the one with the
// same index. Ties go to the lowest candidate index; a zero vector has cosine
// 0 with everything.
double top1_accuracy(const std::vector<std::vector<double>>& queries,
                     const std::vector<std::vector<double>>& candidates);

// FC head bypassed: avg-first-last sentence or word-span embeddings.
std::vector<double> embed_sentence(const Model& model, const Vocab& vocab, const std::string& text);
std::vector<double> embed_word(const Model& model, const Vocab& vocab, const WPS& wps);

RetrievalReport retrieval_eval(const Model& model, const Vocab& vocab, const std::vector<ParallelWPSPair>& heldout,
                               RetrievalLevel level, const std::string& tag = "model");

// ---- synthetic setup and ablation -----------------------------------------------

struct SyntheticSetup {
  SyntheticBitext bitext;
  Vocab vocab;
  std::vector<ParallelWPSPair> train_pairs;
  // One pair per held-out sentence pair (its first qualifying word).
  std::vector<ParallelWPSPair> heldout_pairs;
};

// Generates train_sentences + enough further sentences to collect
// heldout_items held-out pairs; the two sentence sets are disjoint.
SyntheticSetup make_synthetic_setup(std::size_t vocab_size, std::size_t train_sentences, std::size_t heldout_items,
                                    std::uint64_t seed);

struct AblationRow {
  std::string system;
  RetrievalLevel level = RetrievalLevel::Sentence;
  std::string direction;  // "a2b" or "b2a"
  double accuracy = 0.0;
};

struct AblationSystem {
  std::string name;
  LossKind kind;
  CceMode mode;
};

// info-snt, CZ-snt, ML-CTL-CZ
std::vector<AblationSystem> ablation_systems();

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<RetrievalReport> reports;  // baseline first, then ablation_systems() order, sentence then word
  bool word_mlctl_ge_cz_snt = false;
  bool sentence_trained_beat_baseline = false;
  bool soft_cz_snt_ge_info_snt = false;  // reported, not enforced

  const RetrievalReport& find(const std::string& system, RetrievalLevel level) const;
  bool hard_checks_pass() const { return word_mlctl_ge_cz_snt && sentence_trained_beat_baseline; }
};

// Trains each system from the same seed and scores the untrained baseline
// and all trained systems at both retrieval levels.
AblationReport ablation_suite(const SyntheticSetup& setup, const TrainConfig& base);
// Same, reusing an already trained model for systems listed in `pretrained`.
AblationReport ablation_suite(const SyntheticSetup& setup, const TrainConfig& base,
                              const std::vector<std::pair<std::string, const Model*>>& pretrained);

void write_ablation_csv(const std::filesystem::path& path, const AblationReport& report);
void write_retrieval_csv(const std::filesystem::path& path, const std::vector<RetrievalReport>& reports);

// ---- embedding export -------------------------------------------------------------

struct ExportItem {
  std::string label;
  std::string lang;
  std::size_t group = 0;
  std::string text;
  std::optional<Span> span;  // word embedding when set, sentence otherwise
};

// TSV rows "label lang group text" (tab separated), optional fifth column
// "start:end" token span.
std::vector<ExportItem> read_export_items(const std::filesystem::path& path);
// Header "label lang group v0 ... v{d-1}", then one row per item.
void export_embeddings(const Model& model, const Vocab& vocab, const std::vector<ExportItem>& items,
                       const std::filesystem::path& path);

}  // namespace mlctl
