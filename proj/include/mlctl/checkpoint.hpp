#pragma once

// Checkpoint file layout (little-endian):
//
//   bytes 0..7    magic "MLCTLCK1"
//   bytes 8..15   u64 length H of the JSON header
//   next H bytes  UTF-8 JSON: {"format":1, "dtype":"f64", "step":N,
//                 "arrays":[{"name":..., "shape":[...], "offset":k, "count":c}],
//                 "meta":{...}}
//   remainder     every array's values as f64, concatenated in header order;
//                 "offset" and "count" are in elements.

#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mlctl/autodiff.hpp"
#include "mlctl/optim.hpp"

namespace mlctl {

struct NamedArray {
  std::string name;
  ad::Shape shape;
  std::vector<double> values;
};

struct CheckpointFile {
  std::size_t step = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
};

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt);
CheckpointFile read_checkpoint(const std::filesystem::path& path);

// Parameter values under their own names; optimizer moments under
// "adam.m/<name>" and "adam.v/<name>".
void append_params(CheckpointFile& ckpt, const ParamSet& params);
void append_adam(CheckpointFile& ckpt, const ParamSet& params, const AdamState& state);
// Copies stored values into existing parameters; names and shapes must match.
void restore_params(const CheckpointFile& ckpt, ParamSet& params);
AdamState restore_adam(const CheckpointFile& ckpt, const ParamSet& params, AdamState hyper);

}  // namespace mlctl
