#include "mlctl/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>

#include "mlctl/error.hpp"

namespace mlctl {
namespace {

constexpr char kMagic[8] = {'M', 'L', 'C', 'T', 'L', 'C', 'K', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

std::size_t product(const ad::Shape& s) {
  std::size_t n = 1;
  for (auto d : s) n *= d;
  return n;
}

}  // namespace

const NamedArray* CheckpointFile::find(const std::string& name) const {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& path, const CheckpointFile& ckpt) {
  nlohmann::json header;
  header["format"] = 1;
  header["dtype"] = "f64";
  header["step"] = ckpt.step;
  header["meta"] = ckpt.meta;
  header["arrays"] = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& a : ckpt.arrays) {
    if (product(a.shape) != a.values.size()) throw ContractError("write_checkpoint: shape/value mismatch for " + a.name);
    header["arrays"].push_back({{"name", a.name}, {"shape", a.shape}, {"offset", offset}, {"count", a.values.size()}});
    offset += a.values.size();
  }
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError(path.string(), "cannot open checkpoint for writing");
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& a : ckpt.arrays) {
    out.write(reinterpret_cast<const char*>(a.values.data()), static_cast<std::streamsize>(a.values.size() * sizeof(double)));
  }
  if (!out) throw IoError(path.string(), "failed writing checkpoint");
}

CheckpointFile read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(path.string(), "cannot open checkpoint");
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw IoError(path.string(), "not a checkpoint file");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (!in) throw IoError(path.string(), "truncated checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string(), std::string("bad checkpoint header (") + e.what() + ")");
  }
  if (header.value("dtype", "") != "f64") throw IoError(path.string(), "unsupported checkpoint dtype");

  CheckpointFile ckpt;
  ckpt.step = header.at("step").get<std::size_t>();
  ckpt.meta = header.value("meta", nlohmann::json::object());
  for (const auto& a : header.at("arrays")) {
    NamedArray arr;
    arr.name = a.at("name").get<std::string>();
    arr.shape = a.at("shape").get<ad::Shape>();
    const auto count = a.at("count").get<std::size_t>();
    if (count != product(arr.shape)) throw IoError(path.string(), "array " + arr.name + " has inconsistent shape");
    arr.values.resize(count);
    in.read(reinterpret_cast<char*>(arr.values.data()), static_cast<std::streamsize>(count * sizeof(double)));
    if (!in) throw IoError(path.string(), "truncated checkpoint data");
    ckpt.arrays.push_back(std::move(arr));
  }
  return ckpt;
}

void append_params(CheckpointFile& ckpt, const ParamSet& params) {
  for (const auto& [name, t] : params) {
    ckpt.arrays.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
  }
}

void append_adam(CheckpointFile& ckpt, const ParamSet& params, const AdamState& state) {
  ckpt.meta["adam"] = {{"lr", state.lr}, {"beta1", state.beta1}, {"beta2", state.beta2}, {"eps", state.eps}, {"step", state.step}};
  if (state.m.empty()) return;
  std::size_t k = 0;
  for (const auto& [name, t] : params) {
    ckpt.arrays.push_back({"adam.m/" + name, t.shape(), state.m[k]});
    ckpt.arrays.push_back({"adam.v/" + name, t.shape(), state.v[k]});
    ++k;
  }
}

void restore_params(const CheckpointFile& ckpt, ParamSet& params) {
  for (auto& [name, t] : params) {
    const NamedArray* a = ckpt.find(name);
    if (!a) throw InputError("checkpoint has no parameter '" + name + "'");
    if (a->shape != t.shape()) {
      throw InputError("checkpoint parameter '" + name + "' has shape " + ad::shape_string(a->shape) + ", expected " +
                       ad::shape_string(t.shape()));
    }
    std::copy(a->values.begin(), a->values.end(), t.mutable_data().begin());
  }
}

AdamState restore_adam(const CheckpointFile& ckpt, const ParamSet& params, AdamState hyper) {
  if (ckpt.meta.contains("adam")) {
    const auto& a = ckpt.meta["adam"];
    hyper.lr = a.at("lr").get<double>();
    hyper.beta1 = a.at("beta1").get<double>();
    hyper.beta2 = a.at("beta2").get<double>();
    hyper.eps = a.at("eps").get<double>();
    hyper.step = a.at("step").get<std::size_t>();
  }
  hyper.m.clear();
  hyper.v.clear();
  for (const auto& [name, t] : params) {
    const NamedArray* m = ckpt.find("adam.m/" + name);
    const NamedArray* v = ckpt.find("adam.v/" + name);
    if (!m || !v) {
      if (hyper.step == 0) {
        hyper.m.clear();
        hyper.v.clear();
        return hyper;
      }
      throw InputError("checkpoint lacks optimizer moments for '" + name + "'");
    }
    hyper.m.push_back(m->values);
    hyper.v.push_back(v->values);
  }
  return hyper;
}

}  // namespace mlctl
