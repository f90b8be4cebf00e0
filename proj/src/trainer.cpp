#include "mlctl/trainer.hpp"

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <unordered_set>

#include "mlctl/error.hpp"

namespace mlctl {
namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t epoch_seed(std::uint64_t seed, std::size_t epoch) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (epoch + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::vector<std::vector<TokenId>> mlm_sequences(const std::vector<ParallelWPSPair>& pairs,
                                                const std::vector<std::size_t>& indices, const Vocab& vocab) {
  std::vector<std::vector<TokenId>> seqs;
  std::unordered_set<std::string> seen;
  for (int side = 0; side < 2; ++side) {
    for (auto i : indices) {
      const auto& text = side == 0 ? pairs[i].s.sentence.raw : pairs[i].t.sentence.raw;
      if (seen.insert(text).second) seqs.push_back(wrap_special(tokenize(text, vocab)));
    }
  }
  return seqs;
}

}  // namespace

void TrainConfig::validate() const {
  if (steps < 1) throw ContractError("TrainConfig: steps must be at least 1");
  if (batch_size < 1) throw ContractError("TrainConfig: batch size must be at least 1");
  if (loss.kind == LossKind::CzNce && batch_size < 2) {
    throw ContractError("TrainConfig: CZ-NCE needs a batch size of at least 2");
  }
  if (!(learning_rate > 0.0)) throw ContractError("TrainConfig: learning rate must be positive");
  loss.validate();
}

std::string TrainConfig::hash() const {
  const std::string text = nlohmann::json(*this).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, h);
  return buf;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"steps", c.steps},
       {"learning_rate", c.learning_rate},
       {"beta1", c.beta1},
       {"beta2", c.beta2},
       {"adam_eps", c.adam_eps},
       {"seed", c.seed},
       {"checkpoint_interval", c.checkpoint_interval},
       {"loss", c.loss},
       {"encoder", c.encoder}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.seed = j.value("seed", c.seed);
  c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
  if (j.contains("loss")) from_json(j.at("loss"), c.loss);
  if (j.contains("encoder")) from_json(j.at("encoder"), c.encoder);
  if (j.contains("mode")) c.encoder.mode = cce_mode_from_string(j.at("mode").get<std::string>());
}

std::string telemetry_csv_row(const TelemetryRow& r) {
  std::ostringstream os;
  os << r.step << ',' << to_string(r.kind) << ',' << fmt_double(r.contrastive) << ',' << fmt_double(r.mlm) << ','
     << fmt_double(r.total) << ',' << fmt_double(r.grad_norm) << ',' << ad::to_string(r.precision);
  return os.str();
}

void write_telemetry_csv(const std::filesystem::path& path, const std::vector<TelemetryRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open file for writing");
  out << kTelemetryHeader << '\n';
  for (const auto& r : rows) out << telemetry_csv_row(r) << '\n';
  if (!out) throw IoError(path.string(), "write failed");
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n_pairs, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ContractError("make_batches: batch size must be positive");
  if (n_pairs < n) {
    throw ContractError("make_batches: " + std::to_string(n_pairs) + " pairs cannot fill a batch of " + std::to_string(n));
  }
  std::vector<std::size_t> order(n_pairs);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t b = 0; b + n <= n_pairs; b += n) batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(b),
                                                                         order.begin() + static_cast<std::ptrdiff_t>(b + n));
  return batches;
}

std::vector<std::size_t> batch_for_step(std::size_t n_pairs, std::size_t n, std::uint64_t seed, std::size_t step) {
  if (n == 0 || n_pairs < n) {
    throw ContractError("make_batches: " + std::to_string(n_pairs) + " pairs cannot fill a batch of " + std::to_string(n));
  }
  const std::size_t per_epoch = n_pairs / n;
  return make_batches(n_pairs, n, epoch_seed(seed, step / per_epoch))[step % per_epoch];
}

TrainState init_train_state(const TrainConfig& config, const Vocab& vocab) {
  config.validate();
  EncoderConfig ec = config.encoder;
  ec.vocab_size = vocab.size();
  TrainState st{init_model(ec, config.seed), {}, 0, std::mt19937_64(epoch_seed(config.seed, 0xA11CE)), {}};
  st.adam.lr = config.learning_rate;
  st.adam.beta1 = config.beta1;
  st.adam.beta2 = config.beta2;
  st.adam.eps = config.adam_eps;
  return st;
}

CceBatch batch_cce(EncodingCache& cache, const std::vector<ParallelWPSPair>& pairs,
                   const std::vector<std::size_t>& indices) {
  CceBatch b;
  for (auto i : indices) {
    b.x.push_back(cache.cce(pairs[i].s));
    b.y.push_back(cache.cce(pairs[i].t));
  }
  return b;
}

TelemetryRow train_step(TrainState& state, const std::vector<ParallelWPSPair>& pairs, const Vocab& vocab,
                        const TrainConfig& config) {
  const auto indices = batch_for_step(pairs.size(), config.batch_size, config.seed, state.step);
  state.model.params.zero_grad();

  EncodingCache cache(state.model, vocab);
  const auto batch = batch_cce(cache, pairs, indices);
  std::vector<std::vector<TokenId>> seqs;
  if (config.loss.alpha != 0.0) seqs = mlm_sequences(pairs, indices, vocab);
  const auto losses = total_loss(batch, seqs, config.loss, state.model, state.rng);

  TelemetryRow row;
  row.step = state.step;
  row.kind = config.loss.kind;
  row.precision = config.loss.precision;
  row.contrastive = losses.contrastive.item();
  row.mlm = losses.mlm.item();
  row.total = losses.total.item();
  if (!std::isfinite(row.total)) {
    throw NumericError("training step " + std::to_string(state.step) + ": non-finite loss " + fmt_double(row.total));
  }
  ad::backward(losses.total);
  row.grad_norm = state.model.params.grad_norm();
  adam_step(state.model.params, state.adam);
  ++state.step;
  state.telemetry.push_back(row);
  return row;
}

void train(TrainState& state, const std::vector<ParallelWPSPair>& pairs, const Vocab& vocab, const TrainConfig& config,
           const TrainOptions& options) {
  config.validate();
  if (pairs.empty()) throw ContractError("train: no WPS pairs");
  if (options.out_dir) std::filesystem::create_directories(*options.out_dir);
  auto flush = [&] {
    if (!options.out_dir) return;
    write_telemetry_csv(*options.out_dir / "telemetry.csv", state.telemetry);
    save_train_checkpoint(*options.out_dir / "checkpoint.bin", state, config);
  };
  while (state.step < config.steps) {
    try {
      train_step(state, pairs, vocab, config);
    } catch (const NumericError&) {
      // Parameters are untouched by the failed step.
      if (options.out_dir) {
        save_train_checkpoint(*options.out_dir / "last_good.bin", state, config);
        write_telemetry_csv(*options.out_dir / "telemetry.csv", state.telemetry);
      }
      throw;
    }
    if (options.on_step) options.on_step(state);
    if (options.out_dir && config.checkpoint_interval > 0 && state.step % config.checkpoint_interval == 0) {
      save_train_checkpoint(*options.out_dir / ("checkpoint_step" + std::to_string(state.step) + ".bin"), state, config);
    }
  }
  flush();
}

TrainState train(const std::vector<ParallelWPSPair>& pairs, const Vocab& vocab, const TrainConfig& config,
                 const TrainOptions& options) {
  auto state = init_train_state(config, vocab);
  train(state, pairs, vocab, config, options);
  return state;
}

void save_train_checkpoint(const std::filesystem::path& path, const TrainState& state, const TrainConfig& config) {
  CheckpointFile ck;
  ck.step = state.step;
  TrainConfig recorded = config;
  recorded.encoder = state.model.config;
  ck.meta["config"] = recorded;
  ck.meta["config_hash"] = recorded.hash();
  std::ostringstream rng;
  rng << state.rng;
  ck.meta["rng"] = rng.str();
  append_params(ck, state.model.params);
  append_adam(ck, state.model.params, state.adam);
  write_checkpoint(path, ck);
}

TrainState load_train_checkpoint(const std::filesystem::path& path, TrainConfig* config_out) {
  const auto ck = read_checkpoint(path);
  if (!ck.meta.contains("config")) throw InputError("checkpoint " + path.string() + " records no config");
  TrainConfig config = ck.meta.at("config").get<TrainConfig>();
  TrainState st{init_model(config.encoder, config.seed), {}, ck.step, {}, {}};
  restore_params(ck, st.model.params);
  AdamState hyper;
  hyper.lr = config.learning_rate;
  hyper.beta1 = config.beta1;
  hyper.beta2 = config.beta2;
  hyper.eps = config.adam_eps;
  st.adam = restore_adam(ck, st.model.params, hyper);
  if (ck.meta.contains("rng")) {
    std::istringstream is(ck.meta.at("rng").get<std::string>());
    is >> st.rng;
  }
  if (config_out) *config_out = config;
  return st;
}

Model load_model(const std::filesystem::path& path) { return load_train_checkpoint(path).model; }

}  // namespace mlctl
