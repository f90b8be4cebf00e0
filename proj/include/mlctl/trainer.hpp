#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlctl/checkpoint.hpp"
#include "mlctl/encoder.hpp"
#include "mlctl/losses.hpp"
#include "mlctl/optim.hpp"
#include "mlctl/wps.hpp"

namespace mlctl {

struct TrainConfig {
  // Values used for the full-scale pretrained setting; selectable through the
  // config file, never applied implicitly.
  static constexpr double kReferenceLearningRate = 2e-6;
  static constexpr std::size_t kReferenceBatchSize = 64;
  static constexpr double kReferenceAlpha = 0.1;

  std::size_t batch_size = 8;
  std::size_t steps = 300;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  std::size_t checkpoint_interval = 0;  // 0: only the final checkpoint
  LossConfig loss;
  EncoderConfig encoder;  // vocab_size is filled in from the vocabulary

  CceMode mode() const { return encoder.mode; }
  void validate() const;
  // Hex FNV-1a digest of the canonical JSON form.
  std::string hash() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct TelemetryRow {
  std::size_t step = 0;
  LossKind kind = LossKind::CzNce;
  double contrastive = 0.0;
  double mlm = 0.0;
  double total = 0.0;
  double grad_norm = 0.0;
  ad::Precision precision = ad::Precision::Double;
};

inline constexpr const char* kTelemetryHeader = "step,kind,contrastive,mlm,total,grad_norm,precision";
std::string telemetry_csv_row(const TelemetryRow& row);
void write_telemetry_csv(const std::filesystem::path& path, const std::vector<TelemetryRow>& rows);

// Seeded shuffle of pair indices, cut into consecutive batches of n; the
// short tail is dropped.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n_pairs, std::size_t n, std::uint64_t seed);
// Batch used at a given step: epoch e reshuffles with a seed derived from
// (seed, e), so the schedule depends only on the step index.
std::vector<std::size_t> batch_for_step(std::size_t n_pairs, std::size_t n, std::uint64_t seed, std::size_t step);

struct TrainState {
  Model model;
  AdamState adam;
  std::size_t step = 0;  // completed steps
  std::mt19937_64 rng;   // MLM masking stream
  std::vector<TelemetryRow> telemetry;
};

TrainState init_train_state(const TrainConfig& config, const Vocab& vocab);

struct TrainOptions {
  // When set: telemetry.csv, periodic and final checkpoints land here.
  std::optional<std::filesystem::path> out_dir;
  // Called after every completed step.
  std::function<void(const TrainState&)> on_step;
};

// Continues `state` until config.steps steps are complete.
void train(TrainState& state, const std::vector<ParallelWPSPair>& pairs, const Vocab& vocab, const TrainConfig& config,
           const TrainOptions& options = {});
TrainState train(const std::vector<ParallelWPSPair>& pairs, const Vocab& vocab, const TrainConfig& config,
                 const TrainOptions& options = {});

// One forward/backward/update step on the batch for state.step.
TelemetryRow train_step(TrainState& state, const std::vector<ParallelWPSPair>& pairs, const Vocab& vocab,
                        const TrainConfig& config);

CceBatch batch_cce(EncodingCache& cache, const std::vector<ParallelWPSPair>& pairs,
                   const std::vector<std::size_t>& indices);

void save_train_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& config);
// Restores model, optimizer, step, RNG and the config recorded in the file.
TrainState load_train_checkpoint(const std::filesystem::path& path, TrainConfig* config_out = nullptr);
// Model only, for evaluation.
Model load_model(const std::filesystem::path& path);

}  // namespace mlctl
